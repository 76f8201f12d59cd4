"""
Classical post-processing: TEST selection, error estimation, reconciliation
and privacy amplification, plus the keyed block coding used for direct
communication.

Reconciliation is one-way.  Bob announces the Hamming(7,4) parity bits of
each 4-bit block of his string; Alice decodes the word formed by her data
bits and Bob's parities, which repairs any single error per block.  A set of
random-parity checks built from announced seeds then confirms the strings
agree, so a miscorrected block aborts the run instead of producing unequal
keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import toeplitz

from .channel import ClassicalMessage, MessageKind, Sender, Transcript, broadcast, pack_bits
from .rng import philox4x64, seeded_bits

#: Parity part of the systematic Hamming(7,4) code; codeword = data + P @ data.
PARITY = np.array(
    [
        [1, 1, 0, 1],
        [1, 0, 1, 1],
        [0, 1, 1, 1],
    ],
    dtype=np.int8,
)
#: Parity-check matrix [P | I].
PARITY_CHECK = np.hstack([PARITY, np.eye(3, dtype=np.int8)])

# Syndrome (as integer b0*4 + b1*2 + b2) -> position of the single flipped bit.
_SYNDROME_POSITION = np.full(8, -1, dtype=np.intp)
for _j in range(7):
    _col = PARITY_CHECK[:, _j]
    _SYNDROME_POSITION[4 * _col[0] + 2 * _col[1] + _col[2]] = _j


class EmptyCheckError(ValueError):
    """An error rate was requested over zero observations."""


class VerifyFail(RuntimeError):
    """Random-parity verification found a mismatch after correction."""

    def __init__(self, leak: int, transcript: Transcript | None = None):
        super().__init__("reconciled strings disagree on a verification parity")
        self.leak = leak
        self.transcript = transcript


class KeyLengthNonpositive(ValueError):
    """Nothing is left after subtracting the leak and the security margin."""


def as_bits(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.int8).reshape(-1)


# ---------------------------------------------------------------------------
# Sampling and estimation
# ---------------------------------------------------------------------------


def select_test_bits(sifted_indices: Sequence[int], n: int, rng: np.random.Generator):
    """Pick ``n`` sifted positions uniformly at random for testing.

    Returns ``(test, remaining)``: ``test`` sorted, ``remaining`` in the
    original order.  The INFO string is ``remaining[:n]``.
    """
    sifted = np.asarray(sifted_indices).reshape(-1)
    if sifted.size < 2 * n:
        raise ValueError(f"need at least {2 * n} sifted positions, got {sifted.size}")
    chosen = np.zeros(sifted.size, dtype=bool)
    chosen[rng.choice(sifted.size, size=n, replace=False)] = True
    return sifted[chosen], sifted[~chosen]


def estimate_error_rate(pairs: Iterable[tuple[int, int]]) -> float:
    """Fraction of mismatched pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyCheckError("no observations to estimate an error rate from")
    mismatches = sum(1 for a, b in pairs if a != b)
    return mismatches / len(pairs)


def mismatch_rate(a, b) -> float:
    """Vectorized ``estimate_error_rate`` for two equal-length bit arrays."""
    a, b = as_bits(a), as_bits(b)
    if a.size == 0:
        raise EmptyCheckError("no observations to estimate an error rate from")
    return int(np.count_nonzero(a != b)) / a.size


# ---------------------------------------------------------------------------
# Hamming(7,4)
# ---------------------------------------------------------------------------


def hamming_encode(data) -> np.ndarray:
    """Systematic codewords for rows of 4 data bits; shape ``(..., 7)``."""
    data = np.asarray(data, dtype=np.int8)
    parity = (data.astype(np.int64) @ PARITY.T.astype(np.int64)) % 2
    return np.concatenate([data, parity.astype(np.int8)], axis=-1)


def hamming_decode(words) -> np.ndarray:
    """Correct up to one flipped bit per 7-bit word; returns the 4 data bits."""
    words = np.array(words, dtype=np.int8, copy=True)
    flat = words.reshape(-1, 7)
    syn = (flat.astype(np.int64) @ PARITY_CHECK.T.astype(np.int64)) % 2
    pos = _SYNDROME_POSITION[4 * syn[:, 0] + 2 * syn[:, 1] + syn[:, 2]]
    rows = np.nonzero(pos >= 0)[0]
    flat[rows, pos[rows]] ^= 1
    return flat.reshape(words.shape)[..., :4]


@dataclass(frozen=True)
class EccScheme:
    """Hamming(7,4) syndrome reconciliation with random-parity verification."""

    block_size: int = 4
    verify_checks: int = 50

    def __post_init__(self):
        if self.block_size != 4:
            raise ValueError("only 4-bit blocks (Hamming(7,4)) are supported")
        if self.verify_checks < 0:
            raise ValueError("verify_checks must be non-negative")

    def block_count(self, length: int) -> int:
        return -(-length // self.block_size)

    def leak(self, length: int) -> int:
        return 3 * self.block_count(length) + self.verify_checks


@dataclass
class EccResult:
    corrected: np.ndarray
    leak: int
    corrections: int
    transcript: Transcript | None = None
    payload: dict = field(default_factory=dict)


def _pad_blocks(bits: np.ndarray, blocks: int) -> np.ndarray:
    padded = np.zeros(blocks * 4, dtype=np.int8)
    padded[: bits.size] = bits
    return padded.reshape(blocks, 4)


def ecc_reconcile(
    alice_info,
    bob_info,
    scheme: EccScheme = EccScheme(),
    verify_seeds: Sequence[int] = (),
    transcript: Transcript | None = None,
    observers=(),
) -> EccResult:
    """Correct Alice's string toward Bob's.

    The INFO strings are zero-padded to a multiple of 4 (the padding is public
    and never enters the key).  Bob's announcement is the ``EccData`` payload
    ``{block_count, syndromes, verify_seeds, verify_parities}``; it is appended
    to ``transcript`` when one is given.

    Raises
    ------
    VerifyFail
        When any verification parity differs after correction.
    """
    alice, bob = as_bits(alice_info), as_bits(bob_info)
    if alice.size != bob.size:
        raise ValueError("reconciled strings must have equal length")
    if len(verify_seeds) != scheme.verify_checks:
        raise ValueError(f"expected {scheme.verify_checks} verification seeds, got {len(verify_seeds)}")
    blocks = scheme.block_count(alice.size)
    a_blocks = _pad_blocks(alice, blocks)
    b_blocks = _pad_blocks(bob, blocks)
    bob_parity = hamming_encode(b_blocks)[:, 4:]
    words = np.concatenate([a_blocks, bob_parity], axis=1)
    fixed = hamming_decode(words)
    corrections = int(np.count_nonzero(fixed != a_blocks))
    corrected = fixed.reshape(-1)[: alice.size]

    masks = seeded_bits(np.asarray(verify_seeds, dtype=np.uint64), alice.size).astype(np.int64)
    bob_par = (masks @ bob.astype(np.int64)) % 2 if scheme.verify_checks else np.zeros(0, np.int64)
    alice_par = (masks @ corrected.astype(np.int64)) % 2 if scheme.verify_checks else np.zeros(0, np.int64)
    leak = scheme.leak(alice.size)

    payload = {
        "block_count": blocks,
        "syndromes": [pack_bits(p) for p in bob_parity],
        "verify_seeds": [int(s) for s in verify_seeds],
        "verify_parities": pack_bits(bob_par),
    }
    if transcript is not None:
        transcript = broadcast(ClassicalMessage(Sender.BOB, MessageKind.ECC_DATA, payload), transcript, observers)
    if np.any(alice_par != bob_par):
        raise VerifyFail(leak, transcript)
    return EccResult(corrected.astype(np.int8), leak, corrections, transcript, payload)


# ---------------------------------------------------------------------------
# Privacy amplification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PaScheme:
    """Binary Toeplitz hashing from ``n_in`` to ``m_out`` bits."""

    n_in: int
    m_out: int

    @property
    def seed_length(self) -> int:
        return self.m_out + self.n_in - 1


def final_key_length(n: int, leak: int, s: int) -> int:
    return n - leak - s


def toeplitz_matrix(seed, m: int, n: int) -> np.ndarray:
    """``T[i, j] = seed[i - j + n - 1]`` for an ``m x n`` matrix."""
    seed = as_bits(seed)
    if seed.size != m + n - 1:
        raise ValueError(f"Toeplitz seed must have {m + n - 1} bits, got {seed.size}")
    return toeplitz(seed[n - 1 :], seed[n - 1 :: -1])


def toeplitz_hash(key, seed) -> np.ndarray:
    key = as_bits(key)
    seed = as_bits(seed)
    m = seed.size - key.size + 1
    t = toeplitz_matrix(seed, m, key.size).astype(np.int64)
    return ((t @ key.astype(np.int64)) % 2).astype(np.int8)


def pa_extract(key, leak: int, s: int, seed) -> np.ndarray:
    """Hash ``key`` down to ``len(key) - leak - s`` bits with the announced seed.

    Raises
    ------
    KeyLengthNonpositive
        When that length is zero or negative.
    """
    key = as_bits(key)
    m = final_key_length(key.size, leak, s)
    if m <= 0:
        raise KeyLengthNonpositive(f"final key length {m} (n={key.size}, leak={leak}, s={s})")
    seed = as_bits(seed)
    if seed.size != m + key.size - 1:
        raise ValueError(f"PA seed must have {m + key.size - 1} bits, got {seed.size}")
    return toeplitz_hash(key, seed)


# ---------------------------------------------------------------------------
# Keyed block coding for direct communication
# ---------------------------------------------------------------------------


def codeword_length(payload_len: int) -> int:
    return 7 * (-(-payload_len // 4))


@dataclass(frozen=True)
class BlockCoding:
    """Public Hamming(7,4) code hidden behind a keyed permutation and mask.

    Only the 64-bit ``key`` is secret; announcing it is the "block-coding
    announcement" that lets the receiver (and anyone holding the transmitted
    bits) decode.
    """

    key: int

    def _permutation(self, length: int) -> np.ndarray:
        counter = np.zeros((length, 4), dtype=np.uint64)
        counter[:, 0] = np.arange(length, dtype=np.uint64)
        counter[:, 1] = 1
        words = philox4x64(np.array([self.key, 1], dtype=np.uint64), counter)[:, 0]
        return np.argsort(words, kind="stable")

    def _mask(self, length: int) -> np.ndarray:
        return seeded_bits([self.key], length)[0]

    def encode(self, payload) -> np.ndarray:
        payload = as_bits(payload)
        blocks = -(-payload.size // 4)
        code = hamming_encode(_pad_blocks(payload, blocks)).reshape(-1)
        perm = self._permutation(code.size)
        return (code[perm] ^ self._mask(code.size)).astype(np.int8)

    def decode(self, received, payload_len: int) -> np.ndarray:
        received = as_bits(received)
        if received.size != codeword_length(payload_len):
            raise ValueError("received word has the wrong length")
        perm = self._permutation(received.size)
        code = np.empty_like(received)
        code[perm] = received ^ self._mask(received.size)
        return hamming_decode(code.reshape(-1, 7)).reshape(-1)[:payload_len].astype(np.int8)
