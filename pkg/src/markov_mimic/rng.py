"""Counter-based random numbers keyed by particle index.

Philox4x64-10 evaluated on whole arrays of counters. A draw is addressed by
``(particle, step, slot, stream)``, so every particle owns an independent
substream and results do not depend on how particles are split across
workers. Layout of slots within a step, in order of use:

* ``GAUSS + k`` for the k-th block of four Gaussians,
* ``POISSON`` for the jump count,
* ``MARK + r`` for the mark of the r-th jump in the step.

Initialisation draws (latent variable, initial state) use step ``INIT_STEP``.
"""

from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)

INIT_STEP = 0xFFFFFFFFFFFFFFFF
GAUSS = 0
POISSON = 1000
MARK = 2000

STREAM_SOURCE = 0
STREAM_MIMIC = 1

_SALT = 0x6D696D6963000000


def _mulhilo(a: np.uint64, b: np.ndarray):
    """High and low 64-bit words of ``a * b``."""
    a_lo, a_hi = a & _MASK32, a >> _SH32
    b_lo, b_hi = b & _MASK32, b >> _SH32
    p00 = a_lo * b_lo
    p01 = a_lo * b_hi
    p10 = a_hi * b_lo
    p11 = a_hi * b_hi
    mid = (p00 >> _SH32) + (p01 & _MASK32) + (p10 & _MASK32)
    hi = p11 + (p01 >> _SH32) + (p10 >> _SH32) + (mid >> _SH32)
    return hi, a * b


def philox4x64(counter, key) -> np.ndarray:
    """Philox4x64-10 block function.

    ``counter`` is ``(n, 4)`` uint64 and ``key`` a pair of uint64; returns
    ``(n, 4)`` uint64.
    """
    c = np.asarray(counter, dtype=np.uint64)
    c0, c1, c2, c3 = (c[:, i].copy() for i in range(4))
    k0, k1 = np.uint64(key[0]), np.uint64(key[1])
    with np.errstate(over="ignore"):
        for rnd in range(10):
            if rnd:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=1)


def _as_u64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).astype(np.uint64) if not isinstance(x, int) else np.uint64(x)


class CounterRNG:
    """Uniforms and Gaussians for many particles at one ``(step, slot)``."""

    def __init__(self, seed: int, stream: int = STREAM_SOURCE):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.stream = int(stream)
        self._key = (np.uint64(self.seed), np.uint64(_SALT))

    def bits(self, particles: np.ndarray, step: int, slot: int) -> np.ndarray:
        particles = np.asarray(particles, dtype=np.uint64)
        n = particles.shape[0]
        ctr = np.empty((n, 4), dtype=np.uint64)
        ctr[:, 0] = particles
        ctr[:, 1] = np.uint64(step)
        ctr[:, 2] = np.uint64(slot)
        ctr[:, 3] = np.uint64(self.stream)
        return philox4x64(ctr, self._key)

    def uniforms(self, particles, step: int, slot: int) -> np.ndarray:
        """``(n, 4)`` uniforms on ``[0, 1)`` with 53-bit resolution."""
        return (self.bits(particles, step, slot) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, particles, step: int, d: int) -> np.ndarray:
        """``(n, d)`` standard Gaussians by Box-Muller, four per counter block."""
        particles = np.asarray(particles)
        cols = []
        for k in range((d + 3) // 4):
            u = self.uniforms(particles, step, GAUSS + k)
            r1 = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
            r2 = np.sqrt(-2.0 * np.log1p(-u[:, 2]))
            th1 = 2.0 * np.pi * u[:, 1]
            th2 = 2.0 * np.pi * u[:, 3]
            cols += [r1 * np.cos(th1), r1 * np.sin(th1), r2 * np.cos(th2), r2 * np.sin(th2)]
        return np.stack(cols[:d], axis=1) if d else np.zeros((len(particles), 0))


def poisson_inverse(mean: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Poisson counts by inverse transform of one uniform each."""
    mean = np.asarray(mean, dtype=float)
    k = np.zeros(mean.shape, dtype=np.int64)
    p = np.exp(-mean)
    cdf = p.copy()
    active = u > cdf
    while np.any(active):
        idx = np.nonzero(active)[0]
        k[idx] += 1
        p[idx] *= mean[idx] / k[idx]
        cdf[idx] += p[idx]
        # guard against cdf saturating below u in floating point
        active[idx] = (u[idx] > cdf[idx]) & (p[idx] > 0)
    return k
