"""Mutual-information upper bound of the one-bit quantized channel autoencoder.

With encoder weights drawn i.i.d. standard normal, the per-use bound is

    C(gamma) = E_theta[ 1 + p log2 p + (1 - p) log2 (1 - p) ],   p = Q(theta sqrt(gamma))

evaluated here by Monte Carlo over ``theta ~ Normal(0, 1)``.  The bound is a
sum of ``k`` identical per-symbol terms, so only the scalar term is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

CHUNK = 1 << 16

# Eb/N0 axis offset relative to gamma, in dB, as a function of the code rate.
EBN0_CONVENTIONS = {
    "identity": lambda rate: 0.0,
    "2R": lambda rate: -10.0 * math.log10(2.0 * rate),
    "R": lambda rate: -10.0 * math.log10(rate),
}
DEFAULT_CONVENTION = "identity"


@dataclass(frozen=True)
class CapacityPoint:
    gamma: float
    ebn0_db: float
    c_bits_per_use: float
    mc_samples: int
    std_error: float

    @property
    def gamma_db(self):
        return 10.0 * math.log10(self.gamma) if self.gamma > 0 else -math.inf


@dataclass(frozen=True)
class MinSnr:
    rate: float
    gamma_db: float
    ebn0_db: float
    convention: str


def q_function(t):
    """Upper tail of the standard normal, ``Q(t) = erfc(t / sqrt 2) / 2``."""
    return 0.5 * erfc(np.asarray(t, dtype=np.float64) / math.sqrt(2.0))


def one_bit_term(theta, gamma):
    """Per-use bracket ``1 - h2(Q(theta sqrt(gamma)))`` in bits.

    Uses ``h2(Q(-x)) = h2(Q(x))`` and evaluates ``p log p`` as 0 at ``p = 0``.
    """
    p = q_function(np.abs(theta) * math.sqrt(gamma))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    qlogq = (1.0 - p) * np.log1p(-p) / math.log(2.0)
    return np.clip(1.0 + plogp + qlogq, 0.0, 1.0)


def ebn0_from_gamma_db(gamma_db, rate, convention=DEFAULT_CONVENTION):
    return gamma_db + EBN0_CONVENTIONS[convention](rate)


def gamma_from_ebn0_db(ebn0_db, rate, convention=DEFAULT_CONVENTION):
    return ebn0_db - EBN0_CONVENTIONS[convention](rate)


def _theta(samples, seed):
    return np.random.default_rng(seed).standard_normal(samples)


def _chunked_stats(values_fn, theta):
    # fixed-size chunks keep the reduction order independent of any parallel split
    total = 0.0
    total_sq = 0.0
    for start in range(0, theta.size, CHUNK):
        v = values_fn(theta[start:start + CHUNK])
        total += float(np.sum(v))
        total_sq += float(np.sum(v * v))
    n = theta.size
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return mean, math.sqrt(var / n)


def capacity_one_bit(gamma, samples=1_000_000, seed=0, rate_for_axis=None,
                     convention=DEFAULT_CONVENTION, theta=None):
    """Monte Carlo estimate of the one-bit bound at linear transmit SNR ``gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if theta is None:
        if samples < 10_000:
            raise ValueError("need at least 1e4 Monte Carlo samples")
        theta = _theta(samples, seed)
    if gamma == 0:
        mean, se = 0.0, 0.0
    else:
        mean, se = _chunked_stats(lambda t: one_bit_term(t, gamma), theta)
    gamma_db = 10.0 * math.log10(gamma) if gamma > 0 else -math.inf
    rate = rate_for_axis if rate_for_axis is not None else max(mean, 1e-12)
    return CapacityPoint(gamma=gamma, ebn0_db=ebn0_from_gamma_db(gamma_db, rate, convention),
                         c_bits_per_use=mean, mc_samples=theta.size, std_error=se)


def min_snr_for_rate(rate, tolerance_db=1e-3, samples=1_000_000, seed=0,
                     convention=DEFAULT_CONVENTION, lo_db=-40.0, hi_db=60.0):
    """Smallest gamma (dB) whose bound reaches ``rate``, by bisection.

    One set of Monte Carlo weights is shared by every probe, which makes the
    estimated curve exactly monotone in gamma.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must lie in (0, 1); rates >= 1 are unreachable")
    theta = _theta(samples, seed)

    def cap(g_db):
        return _chunked_stats(lambda t: one_bit_term(t, 10.0 ** (g_db / 10.0)), theta)[0]

    lo, hi = lo_db, hi_db
    if cap(hi) < rate:
        raise ValueError(f"rate {rate} not reached below {hi_db} dB")
    while hi - lo > tolerance_db:
        mid = 0.5 * (lo + hi)
        if cap(mid) >= rate:
            hi = mid
        else:
            lo = mid
    g_db = 0.5 * (lo + hi)
    return MinSnr(rate=rate, gamma_db=g_db, ebn0_db=ebn0_from_gamma_db(g_db, rate, convention),
                  convention=convention)


def capacity_curve(ebn0_grid_db, samples=1_000_000, seed=0, convention=DEFAULT_CONVENTION):
    """Capacity points on an Eb/N0 grid.

    For rate-dependent conventions the axis offset is taken at the operating
    point ``R = C``, found by fixed-point iteration.
    """
    theta = _theta(samples, seed)
    points = []
    for e in ebn0_grid_db:
        rate = 0.5
        for _ in range(50):
            g_db = gamma_from_ebn0_db(e, rate, convention)
            pt = capacity_one_bit(10.0 ** (g_db / 10.0), theta=theta, rate_for_axis=rate,
                                  convention=convention)
            if convention == "identity" or abs(pt.c_bits_per_use - rate) < 1e-9:
                break
            rate = max(pt.c_bits_per_use, 1e-9)
        points.append(pt)
    return points
