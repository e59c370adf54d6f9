"""Grid paths and the shift / stop / difference operators.

Paths live on a uniform grid ``t_i = i * dt`` and are read as right-continuous
and piecewise constant between grid times. Jumps are recorded explicitly so
that a grid increment can be told apart from a jump; several jumps may share a
grid index (they are then ordered within the step).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from markov_mimic.errors import GridAlignmentError

_ALIGN_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        # zero steps is allowed: shifting a path to its horizon leaves one point
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a nonnegative integer, got {self.n_steps}")

    @classmethod
    def from_horizon(cls, horizon: float, dt: float) -> "TimeGrid":
        n = horizon / dt
        if abs(n - round(n)) > _ALIGN_TOL * max(1.0, n):
            raise GridAlignmentError(f"horizon {horizon} is not a multiple of dt={dt}")
        return cls(dt=dt, n_steps=int(round(n)))

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float, allow_beyond: bool = False) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid time."""
        k = t / self.dt
        ik = int(round(k))
        if abs(k - ik) > _ALIGN_TOL * max(1.0, abs(k)) or ik < 0:
            raise GridAlignmentError(f"t={t} is not on the grid with dt={self.dt}")
        if ik > self.n_steps and not allow_beyond:
            raise GridAlignmentError(f"t={t} is beyond the horizon {self.horizon}")
        return ik

    def truncated(self, k: int) -> "TimeGrid":
        return TimeGrid(dt=self.dt, n_steps=self.n_steps - k)


class CadlagPath:
    """Right-continuous grid path with explicit jump records.

    ``values`` has shape ``(n_steps + 1, m)``. ``jump_index`` holds grid
    indices ``>= 1`` and ``jump_vec`` the corresponding nonzero jump vectors.
    """

    __slots__ = ("grid", "values", "jump_index", "jump_vec")

    def __init__(self, grid: TimeGrid, values, jump_index=None, jump_vec=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.n_steps + 1:
            raise ValueError(
                f"expected {grid.n_steps + 1} values, got {values.shape[0]}"
            )
        m = values.shape[1]
        if jump_index is None or jump_vec is None:
            if jump_index is not None and len(jump_index):
                raise ValueError("jump indices given without jump vectors")
            jump_index = np.zeros(0, dtype=np.int64)
            jump_vec = np.zeros((0, m))
        jump_index = np.asarray(jump_index, dtype=np.int64).reshape(-1)
        jump_vec = np.asarray(jump_vec, dtype=float).reshape(len(jump_index), m)
        if len(jump_index) and (jump_index.min() < 1 or jump_index.max() > grid.n_steps):
            raise ValueError("jump indices must lie in 1..n_steps")
        if len(jump_index) and np.any(np.all(jump_vec == 0.0, axis=1)):
            raise ValueError("recorded jumps must be nonzero")
        order = np.argsort(jump_index, kind="stable")
        values.setflags(write=False)
        jump_index = jump_index[order]
        jump_vec = jump_vec[order]
        jump_index.setflags(write=False)
        jump_vec.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "jump_index", jump_index)
        object.__setattr__(self, "jump_vec", jump_vec)

    def __setattr__(self, name, value):
        raise AttributeError("CadlagPath is immutable")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    def __call__(self, t: float) -> np.ndarray:
        """Value at an arbitrary time in ``[0, horizon]`` (right-continuous)."""
        k = int(np.floor(t / self.grid.dt + _ALIGN_TOL))
        return self.values[min(max(k, 0), self.n_steps)]

    def jumps(self) -> list[tuple[int, np.ndarray]]:
        return [(int(i), v.copy()) for i, v in zip(self.jump_index, self.jump_vec)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CadlagPath):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.jump_index, other.jump_index)
            and np.array_equal(self.jump_vec, other.jump_vec)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"CadlagPath(n_steps={self.n_steps}, dt={self.grid.dt}, dim={self.dim}, "
            f"jumps={len(self.jump_index)})"
        )

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "CadlagPath":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_steps + 1, 1)))


def shift(x: CadlagPath, t: float) -> CadlagPath:
    """``s -> x(t + s)`` on the remaining horizon.

    A jump exactly at ``t`` is absorbed into the initial value.
    """
    k = x.grid.index_of(t)
    keep = x.jump_index > k
    return CadlagPath(
        x.grid.truncated(k), x.values[k:], x.jump_index[keep] - k, x.jump_vec[keep]
    )


def stop(x: CadlagPath, t: float) -> CadlagPath:
    """``s -> x(min(t, s))``; jumps after ``t`` are dropped."""
    k = min(x.grid.index_of(t, allow_beyond=True), x.n_steps)
    values = np.array(x.values)
    values[k + 1:] = values[k]
    keep = x.jump_index <= k
    return CadlagPath(x.grid, values, x.jump_index[keep], x.jump_vec[keep])


def diff(x: CadlagPath, t: float) -> CadlagPath:
    """``s -> x(t + s) - x(t)``; the result starts at 0."""
    k = x.grid.index_of(t)
    keep = x.jump_index > k
    return CadlagPath(
        x.grid.truncated(k),
        x.values[k:] - x.values[k],
        x.jump_index[keep] - k,
        x.jump_vec[keep],
    )
