"""Counter-based random streams (Philox4x32-10).

Every random number used by the particle solvers is a pure function of
``(seed, particle index, step, block)``. Any partition of the particles over
workers therefore reproduces the serial stream exactly.
"""

from __future__ import annotations

import numba
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)
ROUNDS = 10


def philox4x32(counter, key, rounds=ROUNDS):
    """Philox4x32 block function.

    Parameters
    ----------
    counter : array_like of uint, shape (..., 4)
        32-bit counter words.
    key : array_like of uint, shape (2,) or broadcastable to (..., 2)
        32-bit key words.

    Returns
    -------
    ndarray of uint64, shape (..., 4), each entry < 2**32.
    """
    ctr = np.asarray(counter, dtype=np.uint64) & _MASK
    key = np.asarray(key, dtype=np.uint64) & _MASK
    x0, x1, x2, x3 = (ctr[..., i] for i in range(4))
    k0 = np.broadcast_to(key[..., 0], x0.shape).copy()
    k1 = np.broadcast_to(key[..., 1], x0.shape).copy()
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * x0
        p1 = _M1 * x2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return np.stack([x0, x1, x2, x3], axis=-1)


def seed_key(seed):
    """Split a 64-bit seed into the two Philox key words."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint64)


@numba.njit(cache=True)
def _philox_uniforms(index, lo, hi, block, k0, k1, out):
    m0 = np.uint64(0xD2511F53)
    m1 = np.uint64(0xCD9E8D57)
    mask = np.uint64(0xFFFFFFFF)
    w0 = np.uint64(0x9E3779B9)
    w1 = np.uint64(0xBB67AE85)
    s32 = np.uint64(32)
    scale = 2.0**-32
    for n in range(index.shape[0]):
        x0 = np.uint64(index[n]) & mask
        x1 = lo
        x2 = hi
        x3 = block
        a = k0
        b = k1
        for r in range(10):
            if r > 0:
                a = (a + w0) & mask
                b = (b + w1) & mask
            p0 = m0 * x0
            p1 = m1 * x2
            y0 = (p1 >> s32) ^ x1 ^ a
            y2 = (p0 >> s32) ^ x3 ^ b
            x0, x1, x2, x3 = y0, p1 & mask, y2, p0 & mask
        out[n, 0] = (float(x0) + 0.5) * scale
        out[n, 1] = (float(x1) + 0.5) * scale
        out[n, 2] = (float(x2) + 0.5) * scale
        out[n, 3] = (float(x3) + 0.5) * scale


def uniforms(seed, step, index, block=0):
    """Four uniforms in (0, 1) per entry of ``index`` for one ``(step, block)``.

    Counter words are ``(index, step_lo, step_hi, block)``, key is the seed.
    Returns an array of shape ``(len(index), 4)``.
    """
    index = np.ascontiguousarray(index, dtype=np.uint64).ravel()
    step = int(step)
    key = seed_key(seed)
    out = np.empty((index.shape[0], 4))
    _philox_uniforms(index, np.uint64(step & 0xFFFFFFFF), np.uint64((step >> 32) & 0xFFFFFFFF),
                     np.uint64(block), key[0], key[1], out)
    return out


def normals(seed, step, index, dim):
    """``dim`` standard normals per particle via Box-Muller on Philox uniforms."""
    index = np.asarray(index)
    pairs = (dim + 1) // 2
    blocks = (2 * pairs + 3) // 4
    u = np.concatenate([uniforms(seed, step, index, block=b) for b in range(blocks)], axis=-1)
    u1, u2 = u[..., 0:2 * pairs:2], u[..., 1:2 * pairs:2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(index.shape + (2 * pairs,))
    z[..., 0::2] = r * np.cos(2.0 * np.pi * u2)
    z[..., 1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[..., :dim]
