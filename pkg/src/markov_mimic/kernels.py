"""Levy kernels with their truncation functions, plus compensator bookkeeping.

Kernels have finite total mass: a finite list of atoms, optionally plus a
rate density on a declared bounded box that is integrated by tensor
Gauss-Legendre quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from markov_mimic.errors import IntegrabilityError, UnsupportedKernelError
from markov_mimic.paths import TimeGrid


def hard_cutoff(xi: np.ndarray, r: float) -> np.ndarray:
    """``xi * 1{|xi| <= r}`` on the last axis."""
    xi = np.asarray(xi, dtype=float)
    inside = np.linalg.norm(xi, axis=-1, keepdims=True) <= r
    return np.where(inside, xi, 0.0)


@dataclass(frozen=True)
class TruncationFunction:
    """Hard-cutoff truncation ``h(xi) = xi * 1{|xi| <= r}``."""

    r: float
    tag: str = ""

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"truncation threshold must be positive, got {self.r}")
        if not self.tag:
            object.__setattr__(self, "tag", f"cutoff:{self.r!r}")

    def __call__(self, xi) -> np.ndarray:
        return hard_cutoff(xi, self.r)


def min1_sq(xi: np.ndarray) -> np.ndarray:
    """``1 ∧ |xi|^2`` on the last axis."""
    return np.minimum(1.0, np.sum(np.asarray(xi, dtype=float) ** 2, axis=-1))


class LevyKernel:
    """Finite-mass jump intensity on ``R^d \\ {0}``.

    Parameters
    ----------
    locs, rates:
        Atom locations ``(k, d)`` and positive rates ``(k,)``.
    density:
        Optional vectorized rate density ``(n, d) -> (n,)``.
    support:
        ``(lo, hi)`` box required with ``density``.
    """

    def __init__(
        self,
        locs=None,
        rates=None,
        d: int | None = None,
        density: Callable[[np.ndarray], np.ndarray] | None = None,
        support: tuple[Sequence[float], Sequence[float]] | None = None,
        quad_nodes: int = 64,
    ):
        if locs is None:
            if d is None:
                raise ValueError("dimension required for a kernel without atoms")
            locs = np.zeros((0, d))
            rates = np.zeros(0)
        locs = np.asarray(locs, dtype=float)
        if locs.ndim == 1:
            locs = locs[:, None] if d in (None, 1) else locs.reshape(-1, d)
        rates = np.asarray(rates, dtype=float).reshape(-1)
        if locs.shape[0] != rates.shape[0]:
            raise ValueError("locs and rates disagree in length")
        if d is not None and locs.shape[1] != d:
            raise ValueError(f"atoms have dimension {locs.shape[1]}, expected {d}")
        if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
            raise ValueError("atom rates must be positive and finite")
        if len(locs) and np.any(np.all(locs == 0.0, axis=1)):
            raise ValueError("a Levy kernel cannot charge the origin")
        self.locs = locs
        self.rates = rates
        self.d = locs.shape[1]
        self.density = density
        self.support = None
        self._nodes = None
        self._weights = None
        density_mass = 0.0
        if density is not None:
            if support is None:
                raise UnsupportedKernelError("density kernels need a bounded support box")
            lo = np.asarray(support[0], dtype=float).reshape(self.d)
            hi = np.asarray(support[1], dtype=float).reshape(self.d)
            if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(hi <= lo):
                raise UnsupportedKernelError("density support must be a bounded box")
            self.support = (lo, hi)
            self._nodes, w = _tensor_gauss_legendre(lo, hi, quad_nodes)
            dens = np.asarray(density(self._nodes), dtype=float)
            if np.any(dens < 0) or not np.all(np.isfinite(dens)):
                raise ValueError("density must be finite and nonnegative")
            self._weights = w * dens
            density_mass = float(self._weights.sum())
        self.total_rate = float(rates.sum()) + density_mass
        self.locs.setflags(write=False)
        self.rates.setflags(write=False)

    @classmethod
    def zero(cls, d: int) -> "LevyKernel":
        return cls(d=d)

    @classmethod
    def atom(cls, xi, rate: float) -> "LevyKernel":
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return cls(xi[None, :], [rate])

    @classmethod
    def from_config(cls, atoms: list[dict], d: int) -> "LevyKernel":
        if not atoms:
            return cls.zero(d)
        locs = [a["xi"] if isinstance(a["xi"], list) else [a["xi"]] for a in atoms]
        return cls(np.array(locs, dtype=float), [a["rate"] for a in atoms], d=d)

    def to_config(self) -> list[dict]:
        if self.density is not None:
            raise UnsupportedKernelError("density kernels have no atom serialization")
        return [{"xi": [float(v) for v in x], "rate": float(r)} for x, r in zip(self.locs, self.rates)]

    @property
    def is_atomic(self) -> bool:
        return self.density is None

    def quadrature_atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms plus density quadrature nodes as one weighted atom list."""
        if self.density is None:
            return self.locs, self.rates
        keep = self._weights > 0
        return (
            np.vstack([self.locs, self._nodes[keep]]),
            np.concatenate([self.rates, self._weights[keep]]),
        )

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw marks from the normalized kernel (density part via its quadrature atoms)."""
        if self.total_rate <= 0:
            raise ValueError("cannot sample from a zero kernel")
        locs, w = self.quadrature_atoms()
        idx = rng.choice(len(w), size=size, p=w / w.sum())
        return locs[idx]

    def __repr__(self) -> str:
        extra = ", density" if self.density is not None else ""
        return f"LevyKernel(d={self.d}, atoms={len(self.rates)}{extra}, total_rate={self.total_rate:g})"


def _tensor_gauss_legendre(lo, hi, n):
    x, w = np.polynomial.legendre.leggauss(n)
    axes, wts = [], []
    for a, b in zip(lo, hi):
        axes.append(0.5 * (b - a) * x + 0.5 * (b + a))
        wts.append(0.5 * (b - a) * w)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    wmesh = np.meshgrid(*wts, indexing="ij")
    weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    # the origin carries no mass
    at_origin = np.all(nodes == 0.0, axis=1)
    weights[at_origin] = 0.0
    return nodes, weights


def kernel_integral(kernel: LevyKernel, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """``∫ f dκ``; exact on atoms, quadrature on the density part.

    ``f`` maps an ``(n, d)`` array of points to ``(n,)`` values.
    """
    if kernel.density is not None and kernel.support is None:
        raise UnsupportedKernelError("density kernel without declared support")
    locs, w = kernel.quadrature_atoms()
    if len(w) == 0:
        return 0.0
    vals = np.asarray(f(locs), dtype=float).reshape(len(w), -1)
    out = w @ vals
    return float(out[0]) if out.shape == (1,) else out


def _vector_integral(kernel: LevyKernel, g) -> np.ndarray:
    locs, w = kernel.quadrature_atoms()
    if len(w) == 0:
        return np.zeros(kernel.d)
    return w @ np.asarray(g(locs), dtype=float).reshape(len(w), kernel.d)


def convert_truncation(b_h, kernel: LevyKernel, h: TruncationFunction, h2: TruncationFunction) -> np.ndarray:
    """Drift under ``h2`` from drift under ``h``: ``b_h - ∫(h - h2) dκ``."""
    b_h = np.atleast_1d(np.asarray(b_h, dtype=float))
    delta = _vector_integral(kernel, lambda xi: h(xi) - h2(xi))
    if not np.all(np.isfinite(delta)):
        raise IntegrabilityError("h - h2 is not integrable against the kernel")
    return b_h - delta


def drift_truncated_to_canonical(b_h, kernel: LevyKernel, h: TruncationFunction) -> np.ndarray:
    """Canonical drift ``b_h + ∫(xi - h(xi)) dκ``.

    Requires ``∫ |xi| ∧ |xi|^2 dκ < ∞``.
    """
    b_h = np.atleast_1d(np.asarray(b_h, dtype=float))
    moment = kernel_integral(kernel, lambda xi: np.minimum(np.linalg.norm(xi, axis=1), np.sum(xi**2, axis=1)))
    if not np.isfinite(moment):
        raise IntegrabilityError("kernel has no finite first moment outside the unit ball")
    delta = _vector_integral(kernel, lambda xi: xi - h(xi))
    return b_h + delta


@dataclass(frozen=True)
class MixtureKernel:
    """Weighted mixture ``Σ w_m κ_m`` of kernels with weights summing to one."""

    members: tuple[LevyKernel, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.members):
            raise ValueError("one weight per member")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def total_rate(self) -> float:
        return float(sum(w * k.total_rate for k, w in zip(self.members, self.weights)))

    def integrate(self, f) -> float:
        return float(sum(w * kernel_integral(k, f) for k, w in zip(self.members, self.weights)))

    def member_probabilities(self) -> np.ndarray:
        mass = np.array([w * k.total_rate for k, w in zip(self.members, self.weights)])
        total = mass.sum()
        return mass / total if total > 0 else mass

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Pick a member with probability ``w·rate / total``, then a mark from it."""
        p = self.member_probabilities()
        m = rng.choice(len(p), p=p)
        return self.members[m].sample(rng)

    def flatten(self) -> LevyKernel:
        """The mixture as a single atomic kernel with rates ``w_m λ_mj``."""
        d = self.members[0].d
        locs, rates = [], []
        for k, w in zip(self.members, self.weights):
            kl, kr = k.quadrature_atoms()
            if w > 0 and len(kr):
                locs.append(kl)
                rates.append(w * kr)
        if not locs:
            return LevyKernel.zero(d)
        return LevyKernel(np.vstack(locs), np.concatenate(rates), d=d)


class TestFunctionFamily:
    """Finite family of test functions for jump compensators.

    Members are the ramps ``(a|x| - 1)^+ ∧ 1``, the products ``h_i h_j`` of the
    truncation function components (``i <= j``) and ``1 ∧ |x|^2``.
    """

    __test__ = False
    DEFAULT_A = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)

    def __init__(self, d: int, truncation: TruncationFunction, a_values: Sequence[float] = DEFAULT_A):
        self.d = d
        self.truncation = truncation
        self.a_values = tuple(float(a) for a in a_values)
        if any(a <= 0 for a in self.a_values):
            raise ValueError("ramp slopes must be positive")
        self.pairs = [(i, j) for i in range(d) for j in range(i, d)]
        self.names = (
            [f"ramp_a={a:g}" for a in self.a_values]
            + [f"hh_{i}{j}" for i, j in self.pairs]
            + ["min1_sq"]
        )

    def __len__(self) -> int:
        return len(self.names)

    def __call__(self, xi) -> np.ndarray:
        """Evaluate every member: ``(..., d) -> (..., F)``."""
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi, axis=-1)
        cols = [np.minimum(np.maximum(a * r - 1.0, 0.0), 1.0) for a in self.a_values]
        hx = self.truncation(xi)
        cols += [hx[..., i] * hx[..., j] for i, j in self.pairs]
        cols.append(np.minimum(1.0, r**2))
        return np.stack(cols, axis=-1)

    def member(self, name: str) -> Callable[[np.ndarray], np.ndarray]:
        k = self.names.index(name)
        return lambda xi: self(xi)[..., k]


def ramp(a: float) -> Callable[[np.ndarray], np.ndarray]:
    """``x -> (a|x| - 1)^+ ∧ 1``."""
    return lambda xi: np.minimum(np.maximum(a * np.linalg.norm(np.asarray(xi, float), axis=-1) - 1.0, 0.0), 1.0)


@dataclass
class CompensatorAccumulator:
    """Running measure ``M_t(A) = Σ_{s<t} dt ∫_A 1∧|xi|^2 κ_s(dxi)`` on atoms.

    Single writer: :func:`accumulate_compensator` appends one grid step at a
    time. Row ``i`` of ``masses`` is ``M`` at grid index ``i``.
    """

    grid: TimeGrid
    d: int
    locations: list[tuple[float, ...]] = field(default_factory=list)
    _index: dict = field(default_factory=dict, repr=False)
    _rows: list = field(default_factory=lambda: [np.zeros(0)], repr=False)

    @property
    def step(self) -> int:
        return len(self._rows) - 1

    def masses(self, step: int | None = None) -> dict[tuple[float, ...], float]:
        row = self._rows[self.step if step is None else step]
        return {loc: float(row[i]) for i, loc in enumerate(self.locations[: len(row)])}

    def mass_table(self) -> np.ndarray:
        """``(steps + 1, n_locations)`` array, zero-padded for late atoms."""
        out = np.zeros((len(self._rows), len(self.locations)))
        for i, row in enumerate(self._rows):
            out[i, : len(row)] = row
        return out

    def measure(self, step: int, indicator: Callable[[np.ndarray], np.ndarray]) -> float:
        """``M_{t_step}(A)`` for ``A`` given by a vectorized indicator."""
        row = self._rows[step]
        if len(row) == 0:
            return 0.0
        pts = np.array(self.locations[: len(row)])
        return float(row @ np.asarray(indicator(pts), dtype=float))

    def total_mass(self, step: int | None = None) -> float:
        return float(self._rows[self.step if step is None else step].sum())


def accumulate_compensator(acc: CompensatorAccumulator, step: int, kernel: LevyKernel, dt: float) -> CompensatorAccumulator:
    """Advance ``acc`` from grid index ``step - 1`` to ``step`` under ``kernel``."""
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    if step != acc.step + 1:
        raise ValueError(f"expected step {acc.step + 1}, got {step}")
    if step > acc.grid.n_steps:
        raise ValueError("accumulator is full")
    locs, w = kernel.quadrature_atoms()
    incr = dt * w * min1_sq(locs) if len(w) else np.zeros(0)
    for loc in map(tuple, locs):
        if loc not in acc._index:
            acc._index[loc] = len(acc.locations)
            acc.locations.append(loc)
    row = np.zeros(len(acc.locations))
    prev = acc._rows[-1]
    row[: len(prev)] = prev
    for loc, v in zip(map(tuple, locs), incr):
        row[acc._index[loc]] += v
    acc._rows.append(row)
    return acc
