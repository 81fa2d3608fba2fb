import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from onebit_codec import rf, turbo
from onebit_codec.turbo import TurboSpec

TOY = dict(block_length=8, qpp_params=(3, 2))


def gf2_impulse_response(n, num=0b1011, den=0b1101):
    """Power-series division num(D)/den(D) over GF(2); bit i of a mask is the D^i coefficient.

    Feedforward 15 octal = 1 + D + D^3, feedback 13 octal = 1 + D^2 + D^3.
    """
    out = []
    rem = num
    for _ in range(n):
        c = rem & 1
        out.append(c)
        if c:
            rem ^= den
        rem >>= 1
    return np.array(out)


def exhaustive_rsc(spec):
    words = np.array(list(itertools.product([0, 1], repeat=spec.block_length)))
    rows = []
    for w in words:
        p, tx, tz, _ = turbo.rsc_encode(w, spec)
        rows.append(np.concatenate([w, tx, p, tz]))
    return words, 1 - 2 * np.array(rows)


class TestQpp:
    def test_all_table_entries_are_bijections(self):
        for K in turbo.QPP_TABLE:
            perm = turbo.qpp_interleave(K)
            assert np.array_equal(np.sort(perm), np.arange(K))

    def test_table_size(self):
        assert len(turbo.QPP_TABLE) == 188
        assert min(turbo.QPP_TABLE) == 40 and max(turbo.QPP_TABLE) == 6144

    def test_k40_values(self):
        assert turbo.QPP_TABLE[40] == (3, 10)
        perm = turbo.qpp_interleave(40)
        assert perm[0] == 0 and perm[1] == 13
        assert perm[2] == (3 * 2 + 10 * 4) % 40

    @pytest.mark.parametrize("K", [40, 64, 1024, 6144])
    def test_inverse(self, K):
        perm = turbo.qpp_interleave(K)
        inv = turbo.inverse_permutation(perm)
        np.testing.assert_array_equal(perm[inv], np.arange(K))
        np.testing.assert_array_equal(inv[perm], np.arange(K))

    def test_unsupported(self):
        with pytest.raises(turbo.UnsupportedBlockLength):
            turbo.qpp_interleave(41)

    def test_non_bijective_override_rejected(self):
        with pytest.raises(ValueError):
            TurboSpec(block_length=8, qpp_params=(2, 2))


class TestEncoder:
    def test_all_zero(self):
        spec = TurboSpec(40)
        cb = turbo.turbo_encode(np.zeros(40, dtype=int), spec)
        assert not cb.bits.any()

    def test_impulse_response(self):
        spec = TurboSpec(40)
        info = np.zeros(40, dtype=int)
        info[0] = 1
        cb = turbo.turbo_encode(info, spec)
        np.testing.assert_array_equal(cb.parity1, gf2_impulse_response(40))

    def test_hand_stepped_prefix(self):
        spec = TurboSpec(40)
        info = np.zeros(40, dtype=int)
        info[0] = 1
        # stepped by hand through the 8-state trellis
        np.testing.assert_array_equal(turbo.turbo_encode(info, spec).parity1[:14],
                                      [1, 1, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0, 0, 1])

    @pytest.mark.parametrize("K", [40, 512, 6144])
    def test_lengths_and_termination(self, K):
        spec = TurboSpec(K)
        info = np.random.default_rng(K).integers(0, 2, K)
        cb = turbo.turbo_encode(info, spec)
        assert cb.bits.size == 3 * K + 12 == len(cb)
        assert set(np.unique(cb.bits)) <= {0, 1}
        *_, s1 = turbo.rsc_encode(info, spec)
        *_, s2 = turbo.rsc_encode(info[spec.permutation()], spec)
        assert s1 == 0 and s2 == 0

    def test_systematic_copy(self):
        spec = TurboSpec(40)
        info = np.random.default_rng(1).integers(0, 2, 40)
        np.testing.assert_array_equal(turbo.turbo_encode(info, spec).systematic, info)

    def test_linearity(self):
        spec = TurboSpec(64)
        rng = np.random.default_rng(2)
        a, b = rng.integers(0, 2, (2, 64))
        ca, cb = turbo.turbo_encode(a, spec).bits, turbo.turbo_encode(b, spec).bits
        np.testing.assert_array_equal(turbo.turbo_encode(a ^ b, spec).bits, ca ^ cb)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            turbo.turbo_encode(np.zeros(39, dtype=int), TurboSpec(40))

    def test_block_round_trip(self):
        spec = TurboSpec(40)
        cb = turbo.turbo_encode(np.random.default_rng(0).integers(0, 2, 40), spec)
        back = turbo.CodedBlock.from_bits(cb.bits, 40)
        np.testing.assert_array_equal(back.bits, cb.bits)


class TestDecoder:
    @pytest.mark.parametrize("K", [40, 1024, 6144])
    def test_noiseless_round_trip(self, K):
        spec = TurboSpec(K)
        info = np.random.default_rng(K).integers(0, 2, (20, K))
        coded = turbo.encode_many(info, spec)
        np.testing.assert_array_equal(turbo.decode_many(10.0 * (1 - 2 * coded), spec), info)

    def test_erasure(self):
        spec = TurboSpec(40)
        res = turbo.maxlogmap_decode(np.zeros(spec.coded_length), spec)
        assert res.bits.shape == (40,)
        assert res.extrinsic_trace.shape == (spec.iterations, 2)

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            turbo.maxlogmap_decode(np.zeros(10), TurboSpec(40))

    def test_workers_do_not_change_decisions(self):
        spec = TurboSpec(256)
        rng = np.random.default_rng(3)
        coded = turbo.encode_many(rng.integers(0, 2, (6, 256)), spec)
        llr = 1.5 * (1 - 2 * coded) + rng.standard_normal(coded.shape) * 1.5
        np.testing.assert_array_equal(turbo.decode_many(llr, spec, workers=1),
                                      turbo.decode_many(llr, spec, workers=3))

    @pytest.mark.parametrize("algorithm", ["maxlog", "logmap"])
    def test_constituent_against_exhaustive_map(self, algorithm):
        spec = TurboSpec(**TOY, algorithm=algorithm)
        words, X = exhaustive_rsc(spec)
        rng = np.random.default_rng(5)
        disagree = 0
        worst = 0.0
        for ebn0 in (0.0, 2.0, 4.0):
            s2 = 1.0 / (2 * 0.5 * 10 ** (ebn0 / 10))
            for _ in range(200):
                u = rng.integers(0, 2, 8)
                x = X[int("".join(map(str, u)), 2)]
                L = 2 * (x + math.sqrt(s2) * rng.standard_normal(x.size)) / s2
                metric = 0.5 * X @ L
                exact = np.array([logsumexp(metric[words[:, k] == 0]) - logsumexp(metric[words[:, k] == 1])
                                  for k in range(8)])
                app = turbo.constituent_app(L[:11], np.zeros(8), L[11:], spec)
                disagree += np.sum((app < 0) != (exact < 0))
                worst = max(worst, np.max(np.abs(app - exact)))
        if algorithm == "logmap":
            assert worst < 1e-9
            assert disagree == 0
        else:
            assert disagree / (3 * 200 * 8) < 0.01

    def test_maxlog_constituent_is_ml_sequence(self):
        # max-log decisions of one trellis equal the bits of the best codeword
        spec = TurboSpec(**TOY)
        words, X = exhaustive_rsc(spec)
        rng = np.random.default_rng(6)
        for _ in range(300):
            L = rng.standard_normal(X.shape[1]) * 3
            best = words[np.argmax(X @ L)]
            app = turbo.constituent_app(L[:11], np.zeros(8), L[11:], spec)
            np.testing.assert_array_equal((app < 0).astype(int), best)

    def test_iterations_do_not_hurt(self):
        spec1 = TurboSpec(512, iterations=1)
        spec5 = TurboSpec(512, iterations=5)
        rng = np.random.default_rng(7)
        info = rng.integers(0, 2, (40, 512))
        coded = turbo.encode_many(info, spec1)
        s2 = 1.0 / (2 * spec1.rate * 10 ** (1.0 / 10))
        llr = 2 * ((1 - 2 * coded) + math.sqrt(s2) * rng.standard_normal(coded.shape)) / s2
        n = info.size
        e1 = np.sum(turbo.decode_many(llr, spec1) != info)
        e5 = np.sum(turbo.decode_many(llr, spec5) != info)
        # 95% upper band of the one-iteration error count
        assert e5 <= e1 + 1.96 * math.sqrt(e1 * (1 - e1 / n)) + 1


class TestChannelLlrs:
    def test_qpsk_formula(self):
        y = rf.IqSignal(np.array([0.3, -0.1, 0.7, 0.0]))
        llr = turbo.llr_from_soft(y, 0.5)
        expected = 2 * math.sqrt(2) * np.array([0.3, 0.7, -0.1, 0.0]) / 0.5
        np.testing.assert_allclose(llr, expected)

    def test_zero_sample(self):
        llr = turbo.llr_from_soft(rf.IqSignal(np.zeros(2)), 1.0)
        np.testing.assert_array_equal(llr, [0.0, 0.0])

    def test_nonpositive_noise(self):
        with pytest.raises(ValueError):
            turbo.llr_from_soft(rf.IqSignal(np.zeros(2)), 0.0)

    def test_qam16_against_bruteforce(self):
        mod = rf.ModulationSpec("qam16")
        pts = mod.constellation()
        labels = np.array([[(m >> (3 - k)) & 1 for k in range(4)] for m in range(16)])
        rng = np.random.default_rng(8)
        n0 = 0.2
        c = pts[rng.integers(0, 16, 2000)] + math.sqrt(n0 / 2) * (rng.standard_normal(2000)
                                                                + 1j * rng.standard_normal(2000))
        llr = turbo.llr_from_soft(rf.IqSignal.from_complex(c), n0, mod).reshape(-1, 4)
        metric = -np.abs(c[:, None] - pts[None, :]) ** 2 / n0
        for k in range(4):
            zero, one = metric[:, labels[:, k] == 0], metric[:, labels[:, k] == 1]
            maxlog = zero.max(axis=1) - one.max(axis=1)
            exact = logsumexp(zero, axis=1) - logsumexp(one, axis=1)
            np.testing.assert_allclose(llr[:, k], maxlog, atol=1e-9)
            # max-log only moves the decision boundary by a small margin
            firm = np.abs(exact) > 0.5
            np.testing.assert_array_equal(np.sign(llr[firm, k]), np.sign(exact[firm]))
            assert np.mean(np.sign(llr[:, k]) != np.sign(exact)) < 0.01

    def test_bsc_value(self):
        llr = turbo.llr_from_hard(rf.IqSignal(np.array([1.0, -1.0])), 0.1)
        np.testing.assert_allclose(llr, [math.log(9), -math.log(9)])

    def test_uninformative_limit(self):
        llr = turbo.llr_from_hard(rf.IqSignal(np.array([1.0, -1.0])), 0.5 - 1e-9)
        assert np.max(np.abs(llr)) < 1e-5

    def test_clamping(self):
        llr = turbo.llr_from_hard(rf.IqSignal(np.array([1.0, 1.0])), 0.0)
        np.testing.assert_allclose(llr, math.log((1 - 1e-6) / 1e-6))

    def test_hard_llrs_two_magnitudes(self):
        q = rf.one_bit_quantize(rf.IqSignal(np.random.default_rng(9).standard_normal(100)))
        llr = turbo.llr_from_hard(q, 0.2)
        assert len(np.unique(np.abs(llr))) == 1
        assert len(np.unique(llr)) == 2
