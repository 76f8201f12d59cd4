"""
Counter-based random streams.

Every random draw in a simulation is ``philox4x64_10(key, counter)`` for a
key of ``(master_seed, trial)`` and a counter that names the draw.  Because
the generator is a pure function of (key, counter), a trial's randomness does
not depend on which other trials share its batch, on chunking, or on worker
count.

Counter layout
--------------
* quantum phase: ``(round, slot, 0, 0)``; the four 64-bit output words of a
  slot are four uniforms (see ``SLOT_*`` below).
* classical phase: ``numpy.random.Philox`` seeded with the same key and
  counter ``(0, 0, 0, domain)``, ``domain >= 1``.  numpy bumps the counter
  before each block, so these never touch word 3 == 0.

The kernel matches ``numpy.random.Philox`` block for block:
``philox4x64_10(k, c + 1)`` equals the first four raw outputs of
``Philox(key=k, counter=c)``.
"""

from __future__ import annotations

import numpy as np
from numba import njit, uint64

# Quantum-phase slots; each carries four uniforms per round.
SLOT_PARTIES = 0  # alice basis, alice bit, bob action, bob fresh bit
SLOT_NOISE = 1  # forward fire, forward pauli, return fire, return pauli
SLOT_EVE = 2  # forward x2, return x2
SLOT_MEASURE = 3  # alice basis choice (P2), alice outcome, eve outcome, eve blind guess

# Classical-phase domains.
DOMAIN_BOB = 1
DOMAIN_EVE = 2
DOMAIN_PAYLOAD = 3
DOMAIN_ALICE = 4

_SEED_LIMIT = 1 << 64
_TWO_M53 = 2.0**-53


@njit(cache=True, inline="always")
def _mulhilo(a, b):
    mask = uint64(0xFFFFFFFF)
    s = uint64(32)
    alo = a & mask
    ahi = a >> s
    blo = b & mask
    bhi = b >> s
    ll = alo * blo
    hl = ahi * blo
    lh = alo * bhi
    hh = ahi * bhi
    cross = (ll >> s) + (hl & mask) + (lh & mask)
    return hh + (hl >> s) + (lh >> s) + (cross >> s), a * b


@njit(cache=True)
def _philox_kernel(k0, k1, c0, c1, c2, c3, out):
    for i in range(k0.shape[0]):
        x0 = c0[i]
        x1 = c1[i]
        x2 = c2[i]
        x3 = c3[i]
        a = k0[i]
        b = k1[i]
        for r in range(10):
            if r > 0:
                a += uint64(0x9E3779B97F4A7C15)
                b += uint64(0xBB67AE8584CAA73B)
            hi0, lo0 = _mulhilo(uint64(0xD2E7470EE14C6C93), x0)
            hi1, lo1 = _mulhilo(uint64(0xCA5A826395121157), x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ a, lo1, hi0 ^ x3 ^ b, lo0
        out[i, 0] = x0
        out[i, 1] = x1
        out[i, 2] = x2
        out[i, 3] = x3


def philox4x64(key, counter) -> np.ndarray:
    """Philox4x64-10 block function.

    Parameters
    ----------
    key : array_like, shape (..., 2)
    counter : array_like, shape (..., 4)
        Broadcast against each other.

    Returns
    -------
    numpy.ndarray of uint64, shape (..., 4)
    """
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    shape = np.broadcast_shapes(key.shape[:-1], counter.shape[:-1])
    counter = np.broadcast_to(counter, shape + (4,)).reshape(-1, 4)
    size = counter.shape[0]
    if key.ndim == 1:
        # one key for every counter: the common case for public seeds
        k0, k1 = np.full(size, key[0]), np.full(size, key[1])
    else:
        key = np.broadcast_to(key, shape + (2,)).reshape(-1, 2)
        k0, k1 = np.ascontiguousarray(key[:, 0]), np.ascontiguousarray(key[:, 1])
    out = np.empty((size, 4), dtype=np.uint64)
    _philox_kernel(
        k0,
        k1,
        np.ascontiguousarray(counter[:, 0]),
        np.ascontiguousarray(counter[:, 1]),
        np.ascontiguousarray(counter[:, 2]),
        np.ascontiguousarray(counter[:, 3]),
        out,
    )
    return out.reshape(shape + (4,))


def to_uniform(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles in [0, 1) the way numpy does (top 53 bits)."""
    return (np.asarray(words, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * _TWO_M53


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return seed


class RoundStreams:
    """Per-round uniforms for a batch of trials.

    ``uniforms(r, slot)`` returns shape ``(B, 4)``.  Rounds are evaluated in
    blocks of ``block`` and a few blocks are cached, which suits the engine's
    sequential sweep over rounds.
    """

    def __init__(self, seed: int, trials, block: int = 64):
        self.seed = check_seed(seed)
        self.trials = np.asarray(trials, dtype=np.uint64).reshape(-1)
        self.block = block
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def size(self) -> int:
        return self.trials.size

    def _keys(self) -> np.ndarray:
        keys = np.empty((self.size, 2), dtype=np.uint64)
        keys[:, 0] = self.seed
        keys[:, 1] = self.trials
        return keys

    def span(self, slot: int, start: int, stop: int) -> np.ndarray:
        """Uniforms for rounds ``start..stop-1``, shape ``(B, stop - start, 4)``."""
        rounds = np.arange(start, stop, dtype=np.uint64)
        counter = np.zeros((1, rounds.size, 4), dtype=np.uint64)
        counter[0, :, 0] = rounds
        counter[0, :, 1] = slot
        words = philox4x64(self._keys()[:, None, :], counter)
        return to_uniform(words)

    def uniforms(self, round_index: int, slot: int) -> np.ndarray:
        blk = round_index // self.block
        cached = self._cache.get((slot, blk))
        if cached is None:
            if len(self._cache) >= 16:
                self._cache.clear()
            start = blk * self.block
            cached = self.span(slot, start, start + self.block)
            self._cache[(slot, blk)] = cached
        return cached[:, round_index - blk * self.block, :]


def classical_generator(seed: int, trial: int, domain: int) -> np.random.Generator:
    """Generator for one party's classical choices in one trial."""
    key = np.array([check_seed(seed), int(trial)], dtype=np.uint64)
    counter = np.array([0, 0, 0, domain], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def seeded_bits(seeds, length: int) -> np.ndarray:
    """Public pseudo-random bit masks, one row of ``length`` bits per seed.

    Row ``i`` is bit 0 of ``philox4x64((seeds[i], 0), (j, 0, 0, 0))`` for
    ``j = 0..length-1``; anyone holding the announced seed can rebuild it.
    """
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1)
    keys = np.zeros((seeds.size, 1, 2), dtype=np.uint64)
    keys[:, 0, 0] = seeds
    counter = np.zeros((1, length, 4), dtype=np.uint64)
    counter[0, :, 0] = np.arange(length, dtype=np.uint64)
    words = philox4x64(keys, counter)[..., 0]
    return (words & np.uint64(1)).astype(np.int8)
