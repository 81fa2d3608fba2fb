"""Ground-truth checks at desk scale.

* Exact maximum-likelihood error of tiny codes over the one-bit AWGN channel,
  by enumerating every quantized output, and the gap between ML and a trained
  one-hot/softmax decoder.
* Gaussian-process behaviour of wide random networks: the arcsine kernel of
  the sign layer and the excess kurtosis of untrained autoencoder outputs.

One-bit channel model for a codeword ``c`` (unit mean power per sample)::

    r_i = sign(sqrt(gamma) c_i + w_i),  w_i ~ N(0, 1),
    P(r_i = +1 | c_i) = 1 - Q(sqrt(gamma) c_i)
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import log_ndtr

from . import nn

MAX_N = 12
MAX_K = 6


# ----------------------------------------------------------------------------
# tiny codes and exact ML error
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TinyCode:
    k: int
    n: int
    codebook: np.ndarray
    gamma: float

    def __post_init__(self):
        cb = np.asarray(self.codebook, dtype=np.float64)
        if cb.shape != (2 ** self.k, self.n):
            raise ValueError(f"codebook must have shape {(2 ** self.k, self.n)}")
        if self.k > MAX_K or self.n > MAX_N:
            raise ValueError(f"tiny codes need k <= {MAX_K} and n <= {MAX_N}")
        power = np.mean(cb * cb, axis=1)
        if np.any(power == 0):
            raise ValueError("codewords must be non-zero")
        object.__setattr__(self, "codebook", cb / np.sqrt(power)[:, None])

    @property
    def M(self):
        return 2 ** self.k

    @classmethod
    def random_gaussian(cls, k, n, gamma, seed):
        rng = np.random.default_rng(seed)
        return cls(k, n, rng.standard_normal((2 ** k, n)), gamma)


@dataclass
class ExactErrorReport:
    ml_error_prob: float
    per_message: np.ndarray
    trained_decoder_error: float | None = None
    trained_ci: tuple | None = None
    trained_exact_error: float | None = None
    agreement_mass: float | None = None
    relative_gap: float | None = None
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ml_error_prob": self.ml_error_prob,
            "per_message": self.per_message.tolist(),
            "trained_decoder_error": self.trained_decoder_error,
            "trained_ci": list(self.trained_ci) if self.trained_ci else None,
            "trained_exact_error": self.trained_exact_error,
            "agreement_mass": self.agreement_mass,
            "relative_gap": self.relative_gap,
        }


def all_outputs(n):
    """Every one-bit output pattern, shape ``(2**n, n)`` with entries +-1."""
    if n > MAX_N:
        raise ValueError(f"n = {n} too large to enumerate (max {MAX_N})")
    return 1.0 - 2.0 * np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.float64)


def transition_log_probs(code):
    """``log P(r | m)`` for all messages and outputs, shape ``(M, 2**n)``."""
    r = all_outputs(code.n)
    # P(r_i | c_i) = Phi(r_i sqrt(gamma) c_i)
    args = r[None, :, :] * code.codebook[:, None, :] * math.sqrt(code.gamma)
    return log_ndtr(args).sum(axis=2)


def ml_correct_mass(logp):
    """Probability of a correct ML decision for every (message, output) pair.

    Ties within 1e-12 (relative) share the output equally.
    """
    best = logp.max(axis=0)
    winners = logp >= best - 1e-12 * np.maximum(1.0, np.abs(best))
    share = winners / winners.sum(axis=0)
    return np.exp(logp) * share


def exact_ml_error(code):
    logp = transition_log_probs(code)
    correct = ml_correct_mass(logp).sum(axis=1)
    per_message = np.clip(1.0 - correct, 0.0, 1.0)
    return ExactErrorReport(float(per_message.mean()), per_message)


def decision_error(code, decisions):
    """Exact error probability of a deterministic decoder given as ``decisions[r_index]``."""
    logp = transition_log_probs(code)
    probs = np.exp(logp)
    correct = probs[decisions, np.arange(probs.shape[1])]
    return float(1.0 - correct.sum() / code.M)


def simulate(code, rng, batch):
    m = rng.integers(0, code.M, batch)
    y = math.sqrt(code.gamma) * code.codebook[m] + rng.standard_normal((batch, code.n))
    return m, nn.sign(y)


def wilson_interval(errors, trials, confidence=0.95):
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(errors), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def train_onehot_decoder(code, seed=0, steps=8000, batch=512, learning_rate=3e-3, hidden=None):
    """One-hidden-layer softmax decoder trained with cross entropy on simulated pairs."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 10]))
    hidden = hidden or 4 * code.M
    net = nn.Network([nn.Dense(code.n, hidden, "relu", rng=rng, bias_std=0.1),
                      nn.Dense(hidden, code.M, "softmax", rng=rng)])
    opt = nn.Optimizer(nn.OptimizerConfig("adam", learning_rate))
    history = []
    for step in range(steps):
        m, r = simulate(code, rng, batch)
        target = nn.onehot(m, code.M)
        p, cache = net.forward(r)
        loss = nn.loss_cross_entropy(p, target)
        if not math.isfinite(loss):
            raise FloatingPointError(f"decoder training diverged at step {step}")
        grads, _ = net.backward(cache, nn.cross_entropy_grad(p, target))
        opt.step_network(net, grads)
        if step % 100 == 0:
            history.append(loss)
    return net, history


def theorem1_gap(code, seed=0, steps=8000, batch=512, eval_samples=10**6, learning_rate=3e-3):
    """Train the one-hot decoder and compare its block error with exact ML.

    Reports the Monte Carlo error with a Wilson interval, the exact error of
    the trained decision rule over all outputs, and the probability mass on
    which the trained rule picks an ML message.
    """
    report = exact_ml_error(code)
    net, history = train_onehot_decoder(code, seed, steps, batch, learning_rate)
    r_all = all_outputs(code.n)
    decisions = np.argmax(net.predict(r_all), axis=1)
    report.trained_exact_error = decision_error(code, decisions)
    logp = transition_log_probs(code)
    best = logp.max(axis=0)
    is_ml = logp[decisions, np.arange(r_all.shape[0])] >= best - 1e-12 * np.maximum(1.0, np.abs(best))
    p_r = np.exp(logp).mean(axis=0)
    report.agreement_mass = float(np.sum(p_r * is_ml))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    weights = 1 << np.arange(code.n - 1, -1, -1)
    errors = 0
    done = 0
    while done < eval_samples:
        b = min(65536, eval_samples - done)
        m, r = simulate(code, rng, b)
        idx = ((1 - r) / 2).astype(np.int64) @ weights
        errors += int(np.sum(decisions[idx] != m))
        done += b
    report.trained_decoder_error = errors / eval_samples
    report.trained_ci = wilson_interval(errors, eval_samples)
    report.relative_gap = (report.trained_decoder_error - report.ml_error_prob) / report.ml_error_prob
    report.history = history
    return report


# ----------------------------------------------------------------------------
# Gaussian-process checks
# ----------------------------------------------------------------------------


@dataclass
class KernelReport:
    widths: list
    rho: list = field(default_factory=list)
    empirical: dict = field(default_factory=dict)
    analytic: list = field(default_factory=list)
    max_abs_error: dict = field(default_factory=dict)
    excess_kurtosis: dict = field(default_factory=dict)
    ks_statistic: dict = field(default_factory=dict)
    samples: int = 0

    def to_dict(self):
        return {k: (v if not isinstance(v, np.ndarray) else v.tolist()) for k, v in self.__dict__.items()}


def arcsine_kernel(rho):
    return 2.0 / math.pi * np.arcsin(rho)


def sign_layer_kernel(rho, width, samples, rng):
    """Empirical ``E[sign(u) sign(v)]`` over the units of random sign layers.

    Two unit-norm inputs with inner product ``rho`` pass through layers of
    ``width`` units with i.i.d. standard normal weights until ``samples``
    unit outputs are collected.
    """
    x = np.array([1.0, 0.0])
    xh = np.array([rho, math.sqrt(max(0.0, 1.0 - rho * rho))])
    total = 0.0
    count = 0
    while count < samples:
        layers = max(1, min(65536 // width, (samples - count) // width))
        theta = rng.standard_normal((layers * width, 2))
        total += float(np.sum(nn.sign(theta @ x) * nn.sign(theta @ xh)))
        count += layers * width
    return total / count


def arcsine_kernel_check(rho_grid=None, widths=(64, 1024), samples=10**6, seed=0):
    rho_grid = np.round(np.arange(-0.9, 0.91, 0.1), 10) if rho_grid is None else np.asarray(rho_grid)
    if min(widths) < 64:
        raise ValueError("widths must be at least 64")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 20]))
    report = KernelReport(widths=list(widths), rho=rho_grid.tolist(), samples=samples,
                          analytic=arcsine_kernel(rho_grid).tolist())
    for w in widths:
        emp = [sign_layer_kernel(float(r), w, samples, rng) for r in rho_grid]
        report.empirical[w] = emp
        report.max_abs_error[w] = float(np.max(np.abs(np.array(emp) - arcsine_kernel(rho_grid))))
    return report


def quantizer_recursion_gap(width=1024, draws=2000, seed=0, input_dim=64):
    """Compare the post-sign covariance with the arcsine map of the pre-sign one.

    Both sides are estimated from the same random layer draws on a fixed
    pair of inputs, so the gap measures the recursion, not sampling noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    x = nn.sign(rng.standard_normal(input_dim))
    xh = x.copy()
    flip = rng.choice(input_dim, input_dim // 4, replace=False)
    xh[flip] *= -1
    theta = rng.standard_normal((draws * width // 64, input_dim)) / math.sqrt(input_dim)
    u, v = theta @ x, theta @ xh
    pre = float(np.corrcoef(u, v)[0, 1])
    post = float(np.mean(nn.sign(u) * nn.sign(v)))
    return pre, post, abs(post - float(arcsine_kernel(pre)))


def _sample_layer(norm_sq, fan_in, width, rng, sigma_theta, sigma_b):
    """Pre-activations of a fresh Gaussian layer given the squared norm of its input."""
    std = np.sqrt(sigma_b ** 2 + sigma_theta ** 2 * norm_sq / fan_in)
    return std[:, None] * rng.standard_normal((norm_sq.size, width))


def init_output_samples(width, draws, seed=0, input_dim=64, sigma_theta=1.0, sigma_b=0.0,
                        architecture="autoencoder", chunk=2048):
    """One output unit of an untrained network over ``draws`` independent initializations.

    Sampling is exact layer by layer: conditioned on the previous layer, a
    fresh Gaussian layer's pre-activations are i.i.d. normal with variance
    ``sigma_b^2 + sigma_theta^2 |x|^2 / fan_in``.

    ``architecture="autoencoder"``: sign layer, three ReLU layers of ``width``
    and a linear output.  ``"linear"``: one linear layer.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22, width]))
    x_norm = float(input_dim)  # +-1 input block
    out = np.empty(draws)
    for start in range(0, draws, chunk):
        b = min(chunk, draws - start)
        norm = np.full(b, x_norm)
        fan_in = input_dim
        if architecture == "autoencoder":
            z = _sample_layer(norm, fan_in, width, rng, sigma_theta, sigma_b)
            a = nn.sign(z)
            norm, fan_in = np.sum(a * a, axis=1), width
            for _ in range(3):
                z = _sample_layer(norm, fan_in, width, rng, sigma_theta, sigma_b)
                a = np.maximum(z, 0.0)
                norm, fan_in = np.sum(a * a, axis=1), width
        elif architecture != "linear":
            raise ValueError(f"unknown architecture {architecture!r}")
        out[start:start + b] = _sample_layer(norm, fan_in, 1, rng, sigma_theta, sigma_b)[:, 0]
    return out


def gaussianity_test(widths=(64, 128, 256, 512, 1024), draws=10**5, seed=0, architecture="autoencoder",
                     sigma_theta=1.0, sigma_b=0.0):
    report = KernelReport(widths=list(widths), samples=draws)
    for w in widths:
        z = init_output_samples(w, draws, seed, sigma_theta=sigma_theta, sigma_b=sigma_b,
                                architecture=architecture)
        report.excess_kurtosis[w] = float(stats.kurtosis(z, fisher=True))
        zs = (z - z.mean()) / z.std()
        report.ks_statistic[w] = float(stats.kstest(zs, "norm").statistic)
    return report


def kurtosis_standard_error(draws):
    """Large-sample standard error of the excess kurtosis of a normal sample."""
    return math.sqrt(24.0 / draws)
