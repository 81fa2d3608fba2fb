"""LTE rate-1/3 turbo code: 8-state RSC constituents with generators (13, 15)
octal, QPP internal interleaver, trellis termination, and iterative
max-log-MAP (optionally log-MAP) decoding.

Bit and LLR layout of a coded block (length ``3K + 12``)::

    [systematic (K) | parity1 (K) | parity2 (K) | tail (12)]

with the tail ordered ``x_K z_K x_K+1 z_K+1 x_K+2 z_K+2`` for the first
encoder followed by the same six bits of the second encoder.  LLRs are
``log P(bit = 0) / P(bit = 1)`` (positive means bit 0).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rf import IqSignal, ModulationSpec, rails_to_bits  # noqa: F401  (re-exported for callers)

MEMORY = 3
N_STATES = 1 << MEMORY
TAIL_BITS = 4 * MEMORY

# 3GPP TS 36.212 Table 5.1.3-3, entries "K:f1:f2".
_QPP_TABLE_TEXT = """
40:3:10 48:7:12 56:19:42 64:7:16 72:7:18 80:11:20 88:5:22 96:11:24 104:7:26
112:41:84 120:103:90 128:15:32 136:9:34 144:17:108 152:9:38 160:21:120
168:101:84 176:21:44 184:57:46 192:23:48 200:13:50 208:27:52 216:11:36
224:27:56 232:85:58 240:29:60 248:33:62 256:15:32 264:17:198 272:33:68
280:103:210 288:19:36 296:19:74 304:37:76 312:19:78 320:21:120 328:21:82
336:115:84 344:193:86 352:21:44 360:133:90 368:81:46 376:45:94 384:23:48
392:243:98 400:151:40 408:155:102 416:25:52 424:51:106 432:47:72 440:91:110
448:29:168 456:29:114 464:247:58 472:29:118 480:89:180 488:91:122 496:157:62
504:55:84 512:31:64 528:17:66 544:35:68 560:227:420 576:65:96 592:19:74
608:37:76 624:41:234 640:39:80 656:185:82 672:43:252 688:21:86 704:155:44
720:79:120 736:139:92 752:23:94 768:217:48 784:25:98 800:17:80 816:127:102
832:25:52 848:239:106 864:17:48 880:137:110 896:215:112 912:29:114 928:15:58
944:147:118 960:29:60 976:59:122 992:65:124 1008:55:84 1024:31:64 1056:17:66
1088:171:204 1120:67:140 1152:35:72 1184:19:74 1216:39:76 1248:19:78
1280:199:240 1312:21:82 1344:211:252 1376:21:86 1408:43:88 1440:149:60
1472:45:92 1504:49:846 1536:71:48 1568:13:28 1600:17:80 1632:25:102
1664:183:104 1696:55:954 1728:127:96 1760:27:110 1792:29:112 1824:29:114
1856:57:116 1888:45:354 1920:31:120 1952:59:610 1984:185:124 2016:113:420
2048:31:64 2112:17:66 2176:171:136 2240:209:420 2304:253:216 2368:367:444
2432:265:456 2496:181:468 2560:39:80 2624:27:164 2688:127:504 2752:143:172
2816:43:88 2880:29:300 2944:45:92 3008:157:188 3072:47:96 3136:13:28
3200:111:240 3264:443:204 3328:51:104 3392:51:212 3456:451:192 3520:257:220
3584:57:336 3648:313:228 3712:271:232 3776:179:236 3840:331:120 3904:363:244
3968:375:248 4032:127:168 4096:31:64 4160:33:130 4224:43:264 4288:33:134
4352:477:408 4416:35:138 4480:233:280 4544:357:142 4608:337:480 4672:37:146
4736:71:444 4800:71:120 4864:37:152 4928:39:462 4992:127:234 5056:39:158
5120:39:80 5184:31:96 5248:113:902 5312:41:166 5376:251:336 5440:43:170
5504:21:86 5568:43:174 5632:45:176 5696:45:178 5760:161:120 5824:89:182
5888:323:184 5952:47:186 6016:23:94 6080:47:190 6144:263:480
"""

QPP_TABLE = {
    int(k): (int(f1), int(f2))
    for k, f1, f2 in (item.split(":") for item in _QPP_TABLE_TEXT.split())
}


class UnsupportedBlockLength(ValueError):
    pass


def qpp_permutation(K, f1, f2):
    i = np.arange(K, dtype=np.int64)
    return (f1 * i + f2 * i * i) % K


def qpp_interleave(K, params=None):
    """QPP permutation ``pi(i) = (f1 i + f2 i^2) mod K``.

    ``params`` overrides the table lookup (used for toy block lengths); the
    result must be a bijection.
    """
    if params is None:
        if K not in QPP_TABLE:
            raise UnsupportedBlockLength(f"K={K} is not in the QPP table")
        params = QPP_TABLE[K]
    perm = qpp_permutation(K, *params)
    if np.unique(perm).size != K:
        raise UnsupportedBlockLength(f"(f1, f2)={params} is not a permutation of {K}")
    return perm


def inverse_permutation(perm):
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


# ----------------------------------------------------------------------------
# trellis
# ----------------------------------------------------------------------------


def _octal_taps(g):
    v = int(str(g), 8)
    return [(v >> (MEMORY - d)) & 1 for d in range(MEMORY + 1)]  # coefficient of D^d


@dataclass(frozen=True)
class Trellis:
    """RSC trellis tables; state = (r1 r2 r3) with r1 the most recent bit, r1 = MSB."""

    next_state: np.ndarray
    parity: np.ndarray
    tail_input: np.ndarray

    @classmethod
    def from_generators(cls, feedback=13, feedforward=15):
        fb, ff = _octal_taps(feedback), _octal_taps(feedforward)
        if fb[0] != 1:
            raise ValueError("feedback polynomial needs a D^0 term")
        nxt = np.zeros((N_STATES, 2), dtype=np.int64)
        par = np.zeros((N_STATES, 2), dtype=np.int64)
        tail = np.zeros(N_STATES, dtype=np.int64)
        for s in range(N_STATES):
            r = [(s >> (MEMORY - 1 - j)) & 1 for j in range(MEMORY)]  # r[0] = r1
            fsum = 0
            for j in range(MEMORY):
                fsum ^= fb[j + 1] & r[j]
            tail[s] = fsum
            for u in (0, 1):
                a = u ^ fsum
                z = ff[0] & a
                for j in range(MEMORY):
                    z ^= ff[j + 1] & r[j]
                nxt[s, u] = (a << (MEMORY - 1)) | (s >> 1)
                par[s, u] = z
        return cls(nxt, par, tail)


# ----------------------------------------------------------------------------
# specs and containers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class TurboSpec:
    block_length: int = 6144
    rsc_generators: tuple = (13, 15)
    qpp_params: tuple | None = None
    iterations: int = 5
    algorithm: str = "maxlog"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.algorithm not in ("maxlog", "logmap"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        qpp_interleave(self.block_length, self.qpp_params)

    @property
    def coded_length(self):
        return 3 * self.block_length + TAIL_BITS

    @property
    def rate(self):
        return self.block_length / self.coded_length

    def permutation(self):
        return qpp_interleave(self.block_length, self.qpp_params)

    def trellis(self):
        return Trellis.from_generators(*self.rsc_generators)


@dataclass(frozen=True)
class CodedBlock:
    systematic: np.ndarray
    parity1: np.ndarray
    parity2: np.ndarray
    tail: np.ndarray

    @property
    def bits(self):
        return np.concatenate([self.systematic, self.parity1, self.parity2, self.tail])

    @classmethod
    def from_bits(cls, bits, K):
        bits = np.asarray(bits)
        return cls(bits[:K], bits[K:2 * K], bits[2 * K:3 * K], bits[3 * K:])

    def __len__(self):
        return self.bits.size


@dataclass
class TurboResult:
    bits: np.ndarray
    llr: np.ndarray
    extrinsic_trace: np.ndarray = field(repr=False)


# ----------------------------------------------------------------------------
# encoder
# ----------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _rsc_encode(u, nxt, par, tail_in):
    K = u.size
    p = np.empty(K, dtype=np.int64)
    tx = np.empty(MEMORY, dtype=np.int64)
    tz = np.empty(MEMORY, dtype=np.int64)
    s = 0
    for k in range(K):
        p[k] = par[s, u[k]]
        s = nxt[s, u[k]]
    for k in range(MEMORY):
        b = tail_in[s]
        tx[k] = b
        tz[k] = par[s, b]
        s = nxt[s, b]
    return p, tx, tz, s


def turbo_encode(info, spec):
    info = np.asarray(info, dtype=np.int64).reshape(-1)
    K = spec.block_length
    if info.size != K:
        raise ValueError(f"expected {K} info bits, got {info.size}")
    if np.any((info != 0) & (info != 1)):
        raise ValueError("info bits must be 0/1")
    tr = spec.trellis()
    p1, x1, z1, _ = _rsc_encode(info, tr.next_state, tr.parity, tr.tail_input)
    p2, x2, z2, _ = _rsc_encode(info[spec.permutation()], tr.next_state, tr.parity, tr.tail_input)
    tail = np.empty(TAIL_BITS, dtype=np.int64)
    tail[0:6:2], tail[1:6:2] = x1, z1
    tail[6:12:2], tail[7:12:2] = x2, z2
    return CodedBlock(info.copy(), p1, p2, tail)


def rsc_encode(info, spec):
    """First-constituent encoding only: ``(parity, tail_x, tail_z, final_state)``."""
    tr = spec.trellis()
    return _rsc_encode(np.asarray(info, dtype=np.int64), tr.next_state, tr.parity, tr.tail_input)


# ----------------------------------------------------------------------------
# decoder
# ----------------------------------------------------------------------------

_NEG = -1e300


@njit(cache=True, nogil=True, inline="always")
def _combine(a, b, logmap):
    if a < b:
        a, b = b, a
    if not logmap or b <= _NEG:
        return a
    return a + math.log1p(math.exp(b - a))


@njit(cache=True, nogil=True)
def _bcjr(lsys, lapr, lpar, nxt, par, tail_in, logmap):
    """A-posteriori LLRs of the K information bits of one terminated RSC trellis.

    ``lsys`` and ``lpar`` have length K + 3 (tail included), ``lapr`` length K.
    """
    T = lsys.size
    K = T - MEMORY
    S = N_STATES
    alpha = np.full((T + 1, S), _NEG)
    beta = np.full((T + 1, S), _NEG)
    gam = np.zeros((T, S, 2))
    for k in range(T):
        la = lapr[k] if k < K else 0.0
        for s in range(S):
            for u in range(2):
                xu = 1.0 - 2.0 * u
                xp = 1.0 - 2.0 * par[s, u]
                gam[k, s, u] = 0.5 * (xu * (lsys[k] + la) + xp * lpar[k])
    alpha[0, 0] = 0.0
    for k in range(T):
        for s in range(S):
            a = alpha[k, s]
            if a <= _NEG:
                continue
            for u in range(2):
                if k >= K and u != tail_in[s]:
                    continue
                ns = nxt[s, u]
                alpha[k + 1, ns] = _combine(alpha[k + 1, ns], a + gam[k, s, u], logmap)
        m = alpha[k + 1].max()
        for s in range(S):
            if alpha[k + 1, s] > _NEG:
                alpha[k + 1, s] -= m
    beta[T, 0] = 0.0
    for k in range(T - 1, -1, -1):
        for s in range(S):
            acc = _NEG
            for u in range(2):
                if k >= K and u != tail_in[s]:
                    continue
                b = beta[k + 1, nxt[s, u]]
                if b <= _NEG:
                    continue
                acc = _combine(acc, b + gam[k, s, u], logmap)
            beta[k, s] = acc
        m = beta[k].max()
        for s in range(S):
            if beta[k, s] > _NEG:
                beta[k, s] -= m
    out = np.empty(K)
    for k in range(K):
        n0 = _NEG
        n1 = _NEG
        for s in range(S):
            a = alpha[k, s]
            if a <= _NEG:
                continue
            for u in range(2):
                b = beta[k + 1, nxt[s, u]]
                if b <= _NEG:
                    continue
                v = a + gam[k, s, u] + b
                if u == 0:
                    n0 = _combine(n0, v, logmap)
                else:
                    n1 = _combine(n1, v, logmap)
        out[k] = n0 - n1
    return out


@njit(cache=True, nogil=True)
def _turbo_decode(llr, K, perm, iterations, nxt, par, tail_in, logmap):
    lsys = llr[:K]
    lp1 = llr[K:2 * K]
    lp2 = llr[2 * K:3 * K]
    tail = llr[3 * K:]
    s1 = np.empty(K + MEMORY)
    q1 = np.empty(K + MEMORY)
    s2 = np.empty(K + MEMORY)
    q2 = np.empty(K + MEMORY)
    for k in range(K):
        s1[k] = lsys[k]
        q1[k] = lp1[k]
        s2[k] = lsys[perm[k]]
        q2[k] = lp2[k]
    for j in range(MEMORY):
        s1[K + j] = tail[2 * j]
        q1[K + j] = tail[2 * j + 1]
        s2[K + j] = tail[6 + 2 * j]
        q2[K + j] = tail[6 + 2 * j + 1]
    la1 = np.zeros(K)
    la2 = np.empty(K)
    le2 = np.zeros(K)
    app = np.zeros(K)
    trace = np.zeros((iterations, 2))
    for it in range(iterations):
        app1 = _bcjr(s1, la1, q1, nxt, par, tail_in, logmap)
        le1 = app1 - s1[:K] - la1
        for k in range(K):
            la2[k] = le1[perm[k]]
        app2 = _bcjr(s2, la2, q2, nxt, par, tail_in, logmap)
        le2 = app2 - s2[:K] - la2
        for k in range(K):
            la1[perm[k]] = le2[k]
            app[perm[k]] = app2[k]
        trace[it, 0] = np.mean(np.abs(le1))
        trace[it, 1] = np.mean(np.abs(le2))
    return app, trace


def maxlogmap_decode(llrs, spec):
    """Iterative turbo decoding of one block; returns a :class:`TurboResult`.

    Tail LLRs enter the constituent trellises as channel values only and take
    no part in the extrinsic exchange.
    """
    llrs = np.asarray(llrs, dtype=np.float64).reshape(-1)
    if llrs.size != spec.coded_length:
        raise ValueError(f"expected {spec.coded_length} LLRs, got {llrs.size}")
    tr = spec.trellis()
    app, trace = _turbo_decode(llrs, spec.block_length, spec.permutation(), spec.iterations,
                               tr.next_state, tr.parity, tr.tail_input, spec.algorithm == "logmap")
    return TurboResult(bits=(app < 0).astype(np.int64), llr=app, extrinsic_trace=trace)


def constituent_app(lsys, lapr, lpar, spec):
    """One constituent BCJR pass (exposed for oracle checks)."""
    tr = spec.trellis()
    return _bcjr(np.asarray(lsys, dtype=np.float64), np.asarray(lapr, dtype=np.float64),
                 np.asarray(lpar, dtype=np.float64), tr.next_state, tr.parity, tr.tail_input,
                 spec.algorithm == "logmap")


def encode_many(info, spec):
    """Encode a ``(blocks, K)`` array; returns ``(blocks, 3K + 12)`` bits."""
    return np.stack([turbo_encode(row, spec).bits for row in np.atleast_2d(info)])


def decode_many(llrs, spec, workers=1):
    """Decode a ``(blocks, 3K + 12)`` LLR array; returns ``(blocks, K)`` bits.

    Blocks are independent, so ``workers > 1`` only changes wall time.
    """
    llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    tr = spec.trellis()
    perm = spec.permutation()
    logmap = spec.algorithm == "logmap"

    def one(row):
        app, _ = _turbo_decode(row, spec.block_length, perm, spec.iterations,
                               tr.next_state, tr.parity, tr.tail_input, logmap)
        return app

    if workers > 1 and len(llrs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            apps = list(pool.map(one, llrs))
    else:
        apps = [one(row) for row in llrs]
    return (np.stack(apps) < 0).astype(np.int64)


# ----------------------------------------------------------------------------
# channel LLRs
# ----------------------------------------------------------------------------

LLR_CLAMP_P = (1e-6, 0.5 - 1e-6)


def _interleave_rails(li, lq, mod):
    """Per-rail bit LLR columns -> bit order of :func:`onebit_codec.rf.bits_to_rails`."""
    if mod.kind == "qpsk":
        return np.stack([li[:, 0], lq[:, 0]], axis=1).reshape(-1)
    return np.stack([li[:, 0], lq[:, 0], li[:, 1], lq[:, 1]], axis=1).reshape(-1)


def rail_llrs_gaussian(y, levels_scale, noise_var_rail, mod):
    """Per-rail bit LLRs for ``y = scale * level + N(0, noise_var_rail)``.

    Exact for two levels; max-log over the four levels of 16-QAM.
    Returns shape ``(n, bits_per_rail)``; bit 0 of a rail is its sign bit.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    levels = levels_scale * mod.rail_levels
    d = (y - levels) ** 2 / (2.0 * noise_var_rail)
    if mod.kind == "qpsk":
        return (d[:, 1] - d[:, 0])[:, None]
    # level index = 2*b_sign + b_amp
    sign_llr = np.minimum(d[:, 2], d[:, 3]) - np.minimum(d[:, 0], d[:, 1])
    amp_llr = np.minimum(d[:, 1], d[:, 3]) - np.minimum(d[:, 0], d[:, 2])
    return np.stack([sign_llr, amp_llr], axis=1)


def llr_from_soft(received, noise_var, mod=ModulationSpec("qpsk")):
    """Bit LLRs from unquantized symbol-rate samples.

    ``noise_var`` is the complex noise variance ``N0`` (``N0/2`` per rail);
    for QPSK this gives ``LLR = 2 sqrt(2) y / N0`` per rail.
    """
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    li = rail_llrs_gaussian(received.i, 1.0, noise_var / 2.0, mod)
    lq = rail_llrs_gaussian(received.q, 1.0, noise_var / 2.0, mod)
    return _interleave_rails(li, lq, mod)


def llr_from_hard(quantized, crossover, mod=ModulationSpec("qpsk")):
    """BSC LLRs ``+-log((1-p)/p)`` from one-bit samples.

    The sign bit of each rail gets the BSC value; the 16-QAM amplitude bit is
    invisible to a sign detector and gets LLR 0.
    """
    p = float(np.clip(crossover, *LLR_CLAMP_P))
    mag = math.log((1.0 - p) / p)
    li = (mag * np.asarray(quantized.i)).reshape(-1, 1)
    lq = (mag * np.asarray(quantized.q)).reshape(-1, 1)
    if mod.kind == "qam16":
        li = np.concatenate([li, np.zeros_like(li)], axis=1)
        lq = np.concatenate([lq, np.zeros_like(lq)], axis=1)
    return _interleave_rails(li, lq, mod)
