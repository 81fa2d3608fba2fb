"""Analog front end: modulation, RRC pulse shaping, AWGN, matched filtering,
one-bit quantization and the bandwidth-accounting SNR penalty.

Conventions
-----------
* Symbol period ``T = 1``.  A signal "at rate G" carries ``G`` samples per ``T``.
* Pulses are realised at a fine simulation rate of ``G * L`` samples per ``T``
  (``L`` from :func:`sim_factor`).  Each burst is filtered in the frequency
  domain with the exact square-root raised-cosine response of unit energy on a
  zero-padded circular grid (:func:`burst_grid`), so the transmit/receive
  cascade is ISI-free at symbol instants to float precision.  A sample of
  amplitude ``a`` carries energy ``|a|^2`` and white noise of variance ``N0``
  per complex fine sample (``N0/2`` per rail) leaves the matched filter with
  variance ``N0/2`` per rail.
* ``Eb/N0 -> N0``: ``Es/N0 = R * bits_per_symbol * Eb/N0`` where ``Es`` is the
  transmitted waveform energy per symbol period, measured on the actual
  fine-rate waveform.  ``N0 = Es / (Es/N0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .capacity import q_function


@dataclass(frozen=True)
class IqSignal:
    """Complex baseband samples stored as one real vector ``[I..., Q...]``."""

    samples: np.ndarray
    samples_per_symbol: int = 1

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size % 2:
            raise ValueError("IqSignal needs an even-length 1-D sample vector")
        if not np.all(np.isfinite(s)):
            raise ValueError("IqSignal samples must be finite")
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_complex(cls, c, samples_per_symbol=1):
        c = np.asarray(c)
        return cls(np.concatenate([c.real, c.imag]), samples_per_symbol)

    @property
    def i(self):
        return self.samples[: self.samples.size // 2]

    @property
    def q(self):
        return self.samples[self.samples.size // 2:]

    def to_complex(self):
        return self.i + 1j * self.q

    def __len__(self):
        return self.samples.size // 2

    @property
    def sample_period(self):
        return 1.0 / self.samples_per_symbol


@dataclass(frozen=True)
class PulseSpec:
    alpha: float = 1.0
    span_symbols: int = 16
    samples_per_symbol: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.span_symbols < 8:
            raise ValueError("span must be at least 8 symbols")
        if self.samples_per_symbol < 1:
            raise ValueError("samples_per_symbol must be >= 1")


@dataclass(frozen=True)
class SnrSpec:
    ebn0_db: float
    code_rate: float = 1.0
    bits_per_symbol: int = 2

    def __post_init__(self):
        if not 0.0 < self.code_rate <= 1.0:
            raise ValueError("code rate must be in (0, 1]")

    @property
    def esn0(self):
        return self.code_rate * self.bits_per_symbol * 10.0 ** (self.ebn0_db / 10.0)


# ----------------------------------------------------------------------------
# modulation
# ----------------------------------------------------------------------------

_QAM16_LEVELS = np.array([1.0, 3.0, -1.0, -3.0]) / np.sqrt(10.0)  # index = 2*b_sign + b_amp


@dataclass(frozen=True)
class ModulationSpec:
    kind: str = "qpsk"

    def __post_init__(self):
        if self.kind not in ("qpsk", "qam16"):
            raise ValueError(f"unknown modulation {self.kind!r}")

    @property
    def bits_per_symbol(self):
        return 2 if self.kind == "qpsk" else 4

    @property
    def bits_per_rail(self):
        return self.bits_per_symbol // 2

    @property
    def rail_levels(self):
        """PAM levels of one rail, indexed by the rail's bit label read MSB first."""
        if self.kind == "qpsk":
            return np.array([1.0, -1.0]) / np.sqrt(2.0)
        return _QAM16_LEVELS

    def constellation(self):
        """Complex points indexed by the symbol's bit label (MSB = first bit)."""
        pts = []
        for label in range(2 ** self.bits_per_symbol):
            bits = [(label >> (self.bits_per_symbol - 1 - k)) & 1 for k in range(self.bits_per_symbol)]
            pts.append(map_bits_to_symbols(np.array(bits), self).to_complex()[0])
        return np.array(pts)


def bits_to_rails(bits, mod):
    """Map bits to per-rail PAM values, shape ``(n_symbols, 2)`` (I, Q).

    QPSK: bit pair ``(b0, b1)`` -> ``((1-2 b0), (1-2 b1)) / sqrt(2)``.
    16-QAM (LTE order): ``(b0, b1, b2, b3)`` -> I from ``(b0, b2)``, Q from
    ``(b1, b3)``; first bit of a rail is the sign, second the amplitude.
    """
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    bps = mod.bits_per_symbol
    if bits.size % bps:
        raise ValueError(f"bit count {bits.size} not divisible by {bps}")
    b = bits.reshape(-1, bps)
    levels = mod.rail_levels
    if mod.kind == "qpsk":
        return levels[b]
    return np.stack([levels[2 * b[:, 0] + b[:, 2]], levels[2 * b[:, 1] + b[:, 3]]], axis=1)


def rails_to_bits(rails, mod):
    """Nearest-level hard demapping (inverse of :func:`bits_to_rails`)."""
    rails = np.asarray(rails, dtype=np.float64).reshape(-1, 2)
    levels = mod.rail_levels
    idx = np.argmin(np.abs(rails[..., None] - levels), axis=-1)
    if mod.kind == "qpsk":
        return idx.reshape(-1)
    hi, lo = idx >> 1, idx & 1
    return np.stack([hi[:, 0], hi[:, 1], lo[:, 0], lo[:, 1]], axis=1).reshape(-1)


def map_bits_to_symbols(bits, mod):
    r = bits_to_rails(bits, mod)
    return IqSignal(np.concatenate([r[:, 0], r[:, 1]]))


def demap_symbols(signal, mod):
    return rails_to_bits(np.stack([signal.i, signal.q], axis=1), mod)


# ----------------------------------------------------------------------------
# pulses and the channel
# ----------------------------------------------------------------------------


def rrc_taps(spec):
    """Unit-energy root-raised-cosine taps covering ``[-span, span]`` symbols."""
    a = spec.alpha
    sps = spec.samples_per_symbol
    t = np.arange(-spec.span_symbols * sps, spec.span_symbols * sps + 1) / sps
    h = np.empty_like(t)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            h[k] = 1.0 - a + 4.0 * a / np.pi
        elif a > 0 and abs(abs(4.0 * a * tk) - 1.0) < 1e-9:
            h[k] = a / np.sqrt(2.0) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * a))
                                      + (1 - 2 / np.pi) * np.cos(np.pi / (4 * a)))
        else:
            num = np.sin(np.pi * tk * (1 - a)) + 4 * a * tk * np.cos(np.pi * tk * (1 + a))
            h[k] = num / (np.pi * tk * (1 - (4 * a * tk) ** 2))
    return h / np.sqrt(np.sum(h * h))


def sim_factor(G):
    """Fine-rate factor ``L`` so that the simulation runs at ``G*L >= 4`` samples per T."""
    return max(1, math.ceil(4 / G))


def rc_spectrum(f, alpha):
    """Raised-cosine spectrum (``T = 1``, unit area) at frequencies ``f`` in cycles per T."""
    f = np.abs(np.asarray(f, dtype=np.float64))
    lo, hi = (1.0 - alpha) / 2.0, (1.0 + alpha) / 2.0
    if alpha == 0:
        # the band edge is shared by two aliases, each taking half
        return np.where(f < lo, 1.0, np.where(f == lo, 0.5, 0.0))
    out = np.where(f <= lo, 1.0, 0.0)
    band = (f > lo) & (f <= hi)
    return np.where(band, 0.5 * (1.0 + np.cos(np.pi / alpha * (f - lo))), out)


@dataclass(frozen=True)
class BurstGrid:
    """Fine-rate layout of one burst of ``n`` rate-G samples.

    The burst is surrounded by at least ``span_symbols`` of silence on each
    side and the total length is a whole number of symbol periods, so circular
    filtering on this grid realises the RRC pair exactly at symbol instants.
    """

    n: int
    G: int
    L: int
    pad: int
    response: np.ndarray

    @property
    def n_fine(self):
        return self.response.size

    @property
    def positions(self):
        return (self.pad + np.arange(self.n)) * self.L


def burst_grid(pulse, n):
    G = pulse.samples_per_symbol
    L = sim_factor(G)
    pad = pulse.span_symbols * G
    total = n + 2 * pad
    total += (-total) % G
    pad_front = pad
    n_fine = total * L
    f = np.fft.fftfreq(n_fine, d=1.0 / (G * L))
    response = np.sqrt(G * L * rc_spectrum(f, pulse.alpha))
    return BurstGrid(n, G, L, pad_front, response)


def _filter(wave, grid):
    spec = np.fft.fft(wave, axis=-1) * grid.response
    out = np.fft.ifft(spec, axis=-1)
    return out if np.iscomplexobj(wave) else out.real


def shape_pulses(x, pulse, grid=None):
    """Transmit filter: rate-G samples (last axis) -> fine-rate burst waveform."""
    x = np.asarray(x)
    grid = grid or burst_grid(pulse, x.shape[-1])
    up = np.zeros(x.shape[:-1] + (grid.n_fine,), dtype=np.result_type(x.dtype, np.float64))
    up[..., grid.positions] = x
    return _filter(up, grid)


def matched_filter(wave, pulse, n_out, grid=None):
    """Receive filter and rate-G resampling back onto the ``n_out`` burst positions."""
    grid = grid or burst_grid(pulse, n_out)
    return _filter(wave, grid)[..., grid.positions]


def waveform_energy(wave):
    return float(np.sum(np.abs(wave) ** 2))


def n0_for(snr, energy_per_symbol):
    return energy_per_symbol / snr.esn0


def pulse_chain(x, pulse, rng, snr=None, n0=None):
    """Rate-G complex samples through pulse shaping, AWGN and the matched filter.

    ``x`` may be batched along leading axes; each row is one burst.  The noise
    level is taken from ``n0`` when given, otherwise from ``snr`` with the
    energy measured on the transmitted waveform.  Returns ``(y, n0)``.
    """
    x = np.asarray(x, dtype=np.complex128)
    G = pulse.samples_per_symbol
    n = x.shape[-1]
    grid = burst_grid(pulse, n)
    wave = shape_pulses(x, pulse, grid)
    if n0 is None:
        periods = x.size / G
        n0 = n0_for(snr, waveform_energy(wave) / periods) if snr is not None else 0.0
    if n0 > 0:
        rng = np.random.default_rng(rng)
        noise = rng.standard_normal(wave.shape) + 1j * rng.standard_normal(wave.shape)
        wave = wave + np.sqrt(n0 / 2.0) * noise
    return matched_filter(wave, pulse, n, grid), n0


def transmit_chain(symbols, pulse, snr, seed, ftn=False):
    """Send an :class:`IqSignal` through the RF chain; returns G samples per symbol.

    ``ftn=False``: ``symbols`` are at the symbol rate and are upsampled by G.
    ``ftn=True``: ``symbols`` already are rate-G (faster-than-Nyquist) samples.
    ``snr=None`` switches the noise off.
    """
    G = pulse.samples_per_symbol
    x = symbols.to_complex()
    if not ftn:
        up = np.zeros(x.size * G, dtype=np.complex128)
        up[::G] = x
        x = up
    y, _ = pulse_chain(x, pulse, seed, snr=snr)
    return IqSignal.from_complex(y, samples_per_symbol=G)


def chain_matrices(pulse, n):
    """Matrix form of :func:`pulse_chain` for one burst of ``n`` rate-G samples.

    Returns ``(H, F)``: the noiseless map ``y = H x`` (real, acts on each rail)
    and ``F`` with ``noise_out = F w`` for white fine-rate noise ``w`` of length
    ``F.shape[1]``.
    """
    grid = burst_grid(pulse, n)
    H = matched_filter(shape_pulses(np.eye(n), pulse, grid), pulse, n, grid)
    F = matched_filter(np.eye(grid.n_fine), pulse, n, grid)
    return H.T.copy(), F.T.copy()


def one_bit_quantize(y):
    """Elementwise sign with ``sign(0) = +1``; accepts arrays or :class:`IqSignal`."""
    if isinstance(y, IqSignal):
        return IqSignal(one_bit_quantize(y.samples), y.samples_per_symbol)
    return np.where(np.asarray(y) >= 0.0, 1.0, -1.0)


def power_normalize(x):
    """Scale to unit mean complex-sample power (``mean(I^2 + Q^2) = 1``)."""
    if isinstance(x, IqSignal):
        return IqSignal.from_complex(power_normalize(x.to_complex()), x.samples_per_symbol)
    x = np.asarray(x)
    p = np.mean(np.abs(x) ** 2)
    if p == 0:
        raise ValueError("cannot normalize an all-zero signal")
    return x / np.sqrt(p)


def snr_penalty_db(G, alpha):
    """Bandwidth-accounting penalty: ``max(0, 10 log10((G/2) / (1 + alpha)))``.

    The precoder zeroes half its outputs, so a rate-G stream occupies an
    effective rate of G/2 against an available ``1 + alpha``.
    """
    if G < 1 or not 0.0 <= alpha <= 1.0:
        raise ValueError("need G >= 1 and alpha in [0, 1]")
    return max(0.0, 10.0 * math.log10((G / 2.0) / (1.0 + alpha)))


def sign_crossover(snr, mod):
    """Per-rail sign-flip probability at symbol-rate sampling, averaged over levels.

    A rail level ``a`` with per-rail noise variance ``N0/2`` (``Es = 1``) flips
    sign with probability ``Q(|a| sqrt(2 Es/N0))``.
    """
    mags = np.unique(np.abs(mod.rail_levels))
    return float(np.mean(q_function(mags * math.sqrt(2.0 * snr.esn0))))
