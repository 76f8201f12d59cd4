"""Sampling, error estimation, Hamming reconciliation, Toeplitz hashing, block coding."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqkd.channel import MessageKind, Transcript
from sqkd.postproc import (
    BlockCoding,
    EccScheme,
    EmptyCheckError,
    KeyLengthNonpositive,
    VerifyFail,
    codeword_length,
    ecc_reconcile,
    estimate_error_rate,
    final_key_length,
    hamming_decode,
    hamming_encode,
    mismatch_rate,
    pa_extract,
    select_test_bits,
    toeplitz_hash,
    toeplitz_matrix,
)

DATA_WORDS = np.array(list(itertools.product([0, 1], repeat=4)), dtype=np.int8)
bits = st.lists(st.integers(0, 1), min_size=1, max_size=64).map(lambda b: np.array(b, dtype=np.int8))


def naive_toeplitz_hash(key, seed):
    n = len(key)
    m = len(seed) - n + 1
    out = []
    for i in range(m):
        acc = 0
        for j in range(n):
            acc ^= int(seed[i - j + n - 1]) & int(key[j])
        out.append(acc)
    return np.array(out, dtype=np.int8)


class TestSampling:
    def test_needs_two_n(self, rng):
        with pytest.raises(ValueError):
            select_test_bits(np.arange(7), 4, rng)

    def test_partition(self, rng):
        sifted = np.arange(100, 140)
        test, rest = select_test_bits(sifted, 10, rng)
        assert test.size == 10 and rest.size == 30
        assert sorted(np.concatenate([test, rest]).tolist()) == sifted.tolist()
        assert np.all(np.diff(rest) > 0)

    def test_selection_is_uniform(self, rng):
        hits = np.zeros(20)
        for _ in range(4000):
            test, _ = select_test_bits(np.arange(20), 5, rng)
            hits[test] += 1
        # each position is chosen with probability 1/4
        np.testing.assert_allclose(hits / 4000, 0.25, atol=0.03)

    def test_error_rate(self):
        assert estimate_error_rate([(0, 0), (1, 0), (1, 1), (0, 1)]) == 0.5
        assert mismatch_rate([1, 1, 0], [1, 0, 0]) == pytest.approx(1 / 3)

    def test_empty(self):
        with pytest.raises(EmptyCheckError):
            estimate_error_rate([])
        with pytest.raises(EmptyCheckError):
            mismatch_rate([], [])


class TestHamming:
    def test_codewords_have_zero_syndrome(self):
        from sqkd.postproc import PARITY_CHECK

        code = hamming_encode(DATA_WORDS)
        assert not ((code.astype(int) @ PARITY_CHECK.T) % 2).any()

    def test_minimum_distance_three(self):
        code = hamming_encode(DATA_WORDS)
        weights = code[1:].sum(axis=1)
        assert weights.min() == 3

    @pytest.mark.parametrize("pos", range(7))
    def test_every_single_flip_is_corrected(self, pos):
        code = hamming_encode(DATA_WORDS)
        code[:, pos] ^= 1
        np.testing.assert_array_equal(hamming_decode(code), DATA_WORDS)

    @pytest.mark.parametrize("pair", list(itertools.combinations(range(7), 2)))
    def test_every_double_flip_is_miscorrected(self, pair):
        # Distance 3 means a double error always decodes to a different word.
        code = hamming_encode(DATA_WORDS)
        code[:, list(pair)] ^= 1
        decoded = hamming_decode(code)
        assert np.all(np.any(decoded != DATA_WORDS, axis=1))

    def test_no_error_unchanged(self):
        np.testing.assert_array_equal(hamming_decode(hamming_encode(DATA_WORDS)), DATA_WORDS)


class TestReconcile:
    SEEDS = list(range(1000, 1050))

    def test_single_error_per_block_corrected(self):
        bob = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], dtype=np.int8)
        alice = bob.copy()
        alice[[2, 5, 8]] ^= 1
        res = ecc_reconcile(alice, bob, EccScheme(), self.SEEDS)
        np.testing.assert_array_equal(res.corrected, bob)
        assert res.corrections == 3

    @pytest.mark.parametrize("pair", list(itertools.combinations(range(4), 2)))
    def test_double_error_in_block_fails_verification(self, pair):
        bob = np.array([0, 1, 1, 0, 1, 0, 0, 1], dtype=np.int8)
        alice = bob.copy()
        alice[list(pair)] ^= 1
        with pytest.raises(VerifyFail) as info:
            ecc_reconcile(alice, bob, EccScheme(), self.SEEDS, Transcript())
        assert info.value.leak == 3 * 2 + 50
        assert info.value.transcript.last(MessageKind.ECC_DATA) is not None

    def test_leak(self):
        assert EccScheme().leak(400) == 3 * 100 + 50
        assert EccScheme(verify_checks=0).leak(9) == 9

    def test_announcement_payload(self):
        bob = np.zeros(5, dtype=np.int8)
        res = ecc_reconcile(bob, bob, EccScheme(verify_checks=2), [1, 2])
        assert res.payload["block_count"] == 2
        assert len(res.payload["syndromes"]) == 2
        assert res.payload["verify_seeds"] == [1, 2]

    def test_seed_count_checked(self):
        with pytest.raises(ValueError):
            ecc_reconcile([0, 1], [0, 1], EccScheme(verify_checks=3), [1])

    @given(bits, st.integers(0, 2**32 - 1))
    def test_at_most_one_error_per_block_always_agrees(self, bob, seed):
        g = np.random.default_rng(seed)
        alice = bob.copy()
        for start in range(0, bob.size, 4):
            block = min(4, bob.size - start)
            if g.random() < 0.5:
                alice[start + g.integers(block)] ^= 1
        res = ecc_reconcile(alice, bob, EccScheme(), list(range(50)))
        np.testing.assert_array_equal(res.corrected, bob)


class TestToeplitz:
    @given(bits, st.integers(1, 16), st.integers(0, 2**32 - 1))
    def test_matches_naive(self, key, m, seed):
        s = np.random.default_rng(seed).integers(0, 2, key.size + m - 1).astype(np.int8)
        np.testing.assert_array_equal(toeplitz_hash(key, s), naive_toeplitz_hash(key, s))

    def test_matrix_structure(self):
        seed = np.arange(6) % 2
        t = toeplitz_matrix(seed, 3, 4)
        assert t.shape == (3, 4)
        for i in range(1, 3):
            for j in range(1, 4):
                assert t[i, j] == t[i - 1, j - 1]

    @given(bits, bits, st.integers(0, 2**32 - 1))
    def test_linear(self, a, b, seed):
        n = min(a.size, b.size)
        a, b = a[:n], b[:n]
        s = np.random.default_rng(seed).integers(0, 2, n + 7).astype(np.int8)
        np.testing.assert_array_equal(toeplitz_hash(a ^ b, s), toeplitz_hash(a, s) ^ toeplitz_hash(b, s))

    def test_output_uniform_over_seeds(self, rng):
        key = np.zeros(32, dtype=np.int8)
        key[5] = 1
        outs = np.array([toeplitz_hash(key, rng.integers(0, 2, 32 + 4 - 1)) for _ in range(4000)])
        values = outs @ (1 << np.arange(4))
        freq = np.bincount(values, minlength=16) / 4000
        np.testing.assert_allclose(freq, 1 / 16, atol=0.02)

    def test_pa_extract_length(self, rng):
        key = rng.integers(0, 2, 100).astype(np.int8)
        m = final_key_length(100, 40, 10)
        out = pa_extract(key, 40, 10, rng.integers(0, 2, m + 99))
        assert out.size == 50 and m + 40 + 10 == 100

    def test_nonpositive_length(self):
        with pytest.raises(KeyLengthNonpositive):
            pa_extract(np.zeros(10, dtype=np.int8), 8, 2, np.zeros(9, dtype=np.int8))


class TestBlockCoding:
    @given(bits, st.integers(0, 2**63 - 1))
    def test_round_trip(self, payload, key):
        code = BlockCoding(key)
        sent = code.encode(payload)
        assert sent.size == codeword_length(payload.size)
        np.testing.assert_array_equal(code.decode(sent, payload.size), payload)

    def test_wrong_key_garbles(self, rng):
        payload = rng.integers(0, 2, 64).astype(np.int8)
        sent = BlockCoding(1).encode(payload)
        assert not np.array_equal(BlockCoding(2).decode(sent, 64), payload)

    def test_masked_output_balanced(self):
        sent = BlockCoding(99).encode(np.zeros(400, dtype=np.int8))
        assert 0.4 < sent.mean() < 0.6

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            BlockCoding(1).decode(np.zeros(6, dtype=np.int8), 4)
