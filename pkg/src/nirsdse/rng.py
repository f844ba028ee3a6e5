"""Counter-based Philox4x64-10 random numbers for photon transport.

Every photon owns an independent substream: the Philox key is
``(run_seed, stream_id)`` and the counter is ``(block, photon_index, 0, 0)``.
Results therefore do not depend on how photons are split across batches or
workers, and paired runs that share a seed reuse the same random numbers
photon by photon.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = ["RngStream", "derive_seed", "philox4x64", "uniforms"]

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# layout of the per-photon state vector
KEY0, KEY1, CTR0, CTR1, POS, BUF = 0, 1, 2, 3, 4, 5
STATE_SIZE = 9


@nb.njit(inline="always")
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _S32)
    w1 = (t & _MASK32) + a_lo * b_hi
    hi = a_hi * b_hi + (t >> _S32) + (w1 >> _S32)
    return hi, lo


@nb.njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Philox4x64 with 10 rounds; returns the four output words."""
    for i in range(10):
        if i > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def seed_state(state, key0, key1, photon):
    state[KEY0] = key0
    state[KEY1] = key1
    state[CTR0] = np.uint64(0)
    state[CTR1] = photon
    state[POS] = np.uint64(4)


@nb.njit(cache=True)
def next_uniform(state):
    """Next double in [0, 1) from the photon substream held in ``state``."""
    pos = state[POS]
    if pos >= np.uint64(4):
        r0, r1, r2, r3 = philox4x64(state[CTR0], state[CTR1], np.uint64(0),
                                    np.uint64(0), state[KEY0], state[KEY1])
        state[BUF] = r0
        state[BUF + 1] = r1
        state[BUF + 2] = r2
        state[BUF + 3] = r3
        state[CTR0] = state[CTR0] + np.uint64(1)
        pos = np.uint64(0)
    word = state[BUF + nb.int64(pos)]
    state[POS] = pos + np.uint64(1)
    return nb.float64(word >> _S11) * _INV53


@nb.njit(cache=True)
def _fill(key0, key1, photon, out):
    state = np.empty(STATE_SIZE, dtype=np.uint64)
    seed_state(state, key0, key1, photon)
    for i in range(out.shape[0]):
        out[i] = next_uniform(state)


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream_id) pair naming one reproducible Philox key."""

    seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must fit in 64 bits, got {v}")


def uniforms(stream: RngStream, photon: int, n: int) -> np.ndarray:
    """The first ``n`` uniforms of one photon's substream."""
    out = np.empty(n, dtype=np.float64)
    _fill(np.uint64(stream.seed), np.uint64(stream.stream_id), np.uint64(photon), out)
    return out


def derive_seed(base_seed: int, *parts) -> int:
    """Mix a base seed with cell coordinates into a 64-bit run seed.

    The hash is BLAKE2b-64 over ``"<base_seed>|<part>|<part>..."`` where each
    part is rendered with ``repr`` (floats) or ``str``. Adding new cells to a
    sweep never changes the seed of an existing cell.
    """
    text = "|".join([str(int(base_seed))] + [repr(float(p)) if isinstance(p, float) else str(p) for p in parts])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
