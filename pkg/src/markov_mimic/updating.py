"""Updating functions ``Φ(e, x)`` and an executable check of their axioms.

Each built-in has two forms that share arithmetic exactly: a path rule that
maps a whole grid path at once, and a step rule that advances many particles
by one grid step. The simulators use the step rule; :func:`apply` uses the
path rule. Running the step rule along a path reproduces the path rule bit for
bit, which is what makes ``Z == Φ(Z_0, Y)`` hold exactly on stored ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from markov_mimic.paths import CadlagPath, TimeGrid, diff, shift, stop

BUILTIN_KINDS = ("process_itself", "integral_to_date", "supremum_to_date", "max_jump_to_date")


@dataclass(frozen=True)
class StateSpace:
    dim: int
    constraint: Callable[[np.ndarray], np.ndarray] | None = None
    description: str = "R^n"

    def contains(self, e) -> bool:
        e = np.atleast_2d(np.asarray(e, dtype=float))
        if e.shape[-1] != self.dim:
            return False
        if self.constraint is None:
            return True
        return bool(np.all(self.constraint(e)))


# path_rule(e, values, step_max_jump, dt) -> state values (n+1, dim)
# step_rule(e, z_prev, y_prev, y_new, step_max_jump, dt) -> z_new, vectorized over rows
PathRule = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]
StepRule = Callable[..., np.ndarray]


@dataclass(frozen=True)
class UpdatingFunction:
    name: str
    input_dim: int
    state_space: StateSpace
    path_rule: PathRule = field(repr=False)
    step_rule: StepRule | None = field(default=None, repr=False)

    @property
    def state_dim(self) -> int:
        return self.state_space.dim

    def __call__(self, e, x: CadlagPath) -> CadlagPath:
        return apply(self, e, x)

    def advance(self, e, z_prev, y_prev, y_new, step_max_jump, dt):
        if self.step_rule is None:
            raise NotImplementedError(f"{self.name} has no incremental form")
        return self.step_rule(e, z_prev, y_prev, y_new, step_max_jump, dt)


def _step_max_jumps(x: CadlagPath) -> np.ndarray:
    """Largest first-component jump at each grid index, ``-inf`` where none."""
    m = np.full(x.n_steps + 1, -np.inf)
    if len(x.jump_index):
        np.maximum.at(m, x.jump_index, x.jump_vec[:, 0])
    return m


def apply(phi: UpdatingFunction, e, x: CadlagPath) -> CadlagPath:
    """``Φ(e, x)`` as a path in the state space.

    Raises ``ValueError`` unless ``x(0) = 0`` and ``e`` satisfies the state
    constraint. Output jump records are aggregated per grid index.
    """
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if x.dim != phi.input_dim:
        raise ValueError(f"{phi.name} expects {phi.input_dim}-dimensional input paths, got {x.dim}")
    if np.any(x.values[0] != 0.0):
        raise ValueError("increment path must start at 0")
    if not phi.state_space.contains(e):
        raise ValueError(f"initial state {e} violates the state space of {phi.name}")
    out = phi.path_rule(e, x.values, _step_max_jumps(x), x.grid.dt)
    idx = np.unique(x.jump_index)
    vec = out[idx] - out[idx - 1] if len(idx) else np.zeros((0, out.shape[1]))
    nz = np.any(vec != 0.0, axis=1)
    return CadlagPath(x.grid, out, idx[nz], vec[nz])


# --- built-ins -------------------------------------------------------------

def _itself_path(e, values, mj, dt):
    return e + values


def _itself_step(e, z_prev, y_prev, y_new, mj, dt):
    return e + y_new


def _integral_path(e, values, mj, dt):
    x1 = e[0] + values[:, 0]
    incr = (e[0] + values[:-1, 0]) * dt
    a = np.cumsum(np.concatenate([[e[1]], incr]))
    return np.stack([x1, a], axis=1)


def _integral_step(e, z_prev, y_prev, y_new, mj, dt):
    x1 = e[:, 0] + y_new[:, 0]
    a = z_prev[:, 1] + (e[:, 0] + y_prev[:, 0]) * dt
    return np.stack([x1, a], axis=1)


def _sup_path(e, values, mj, dt):
    x1 = e[0] + values[:, 0]
    lead = np.concatenate([[max(e[1], x1[0])], x1[1:]])
    return np.stack([x1, np.maximum.accumulate(lead)], axis=1)


def _sup_step(e, z_prev, y_prev, y_new, mj, dt):
    x1 = e[:, 0] + y_new[:, 0]
    return np.stack([x1, np.maximum(z_prev[:, 1], x1)], axis=1)


def _maxjump_path(e, values, mj, dt):
    x1 = e[0] + values[:, 0]
    lead = np.concatenate([[e[1]], mj[1:]])
    return np.stack([x1, np.maximum.accumulate(lead)], axis=1)


def _maxjump_step(e, z_prev, y_prev, y_new, mj, dt):
    x1 = e[:, 0] + y_new[:, 0]
    return np.stack([x1, np.maximum(z_prev[:, 1], mj)], axis=1)


def builtin(kind: str, d: int = 1) -> UpdatingFunction:
    """One of the four built-in updating functions.

    ``process_itself`` works in any dimension; the other three take scalar
    increment paths and produce a two-component state ``(level, functional)``.
    """
    if kind == "process_itself":
        if d < 1:
            raise ValueError(f"dimension must be positive, got {d}")
        return UpdatingFunction(kind, d, StateSpace(d, None, f"R^{d}"), _itself_path, _itself_step)
    if kind not in BUILTIN_KINDS:
        raise ValueError(f"unknown updating function {kind!r}; expected one of {BUILTIN_KINDS}")
    if d != 1:
        raise ValueError(f"{kind} is defined for scalar paths only, got d={d}")
    if kind == "integral_to_date":
        return UpdatingFunction(kind, 1, StateSpace(2, None, "R^2"), _integral_path, _integral_step)
    if kind == "supremum_to_date":
        space = StateSpace(2, lambda e: e[..., 0] <= e[..., 1], "{e1 <= e2}")
        return UpdatingFunction(kind, 1, space, _sup_path, _sup_step)
    space = StateSpace(2, lambda e: e[..., 1] >= 0, "R x R_+")
    return UpdatingFunction(kind, 1, space, _maxjump_path, _maxjump_step)


# --- axiom checks ----------------------------------------------------------

@dataclass
class AxiomReport:
    name: str
    trials: int
    checks: int = 0
    violations: dict = field(default_factory=lambda: {"initial": 0, "nonanticipative": 0, "flow": 0})
    witnesses: list = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    @property
    def ok(self) -> bool:
        return self.total_violations == 0


def random_grid_path(rng: np.random.Generator, grid: TimeGrid, d: int = 1, p_jump: float = 0.25, p_move: float = 0.25) -> CadlagPath:
    """Piecewise-constant path on a dyadic lattice, starting at 0.

    Values are multiples of 1/16, so sums and products with a dyadic ``dt``
    are exact in floating point.
    """
    n = grid.n_steps
    kind = rng.random(n)
    steps = rng.integers(-32, 33, size=(n, d)).astype(float) / 16.0
    zero = np.all(steps == 0.0, axis=1)
    steps[zero, 0] = 1.0 / 16.0
    is_jump = kind < p_jump
    is_move = (kind >= p_jump) & (kind < p_jump + p_move)
    incr = np.where((is_jump | is_move)[:, None], steps, 0.0)
    values = np.vstack([np.zeros((1, d)), np.cumsum(incr, axis=0)])
    idx = np.nonzero(is_jump)[0] + 1
    return CadlagPath(grid, values, idx, steps[is_jump])


def _random_state(rng, phi: UpdatingFunction) -> np.ndarray:
    for _ in range(100):
        e = rng.integers(-32, 33, size=phi.state_dim).astype(float) / 16.0
        if phi.state_space.contains(e):
            return e
    raise RuntimeError(f"could not draw a state satisfying the constraint of {phi.name}")


def check_axioms(phi: UpdatingFunction, trials: int = 1000, rng_seed: int = 0,
                 n_times: int = 10, grid: TimeGrid | None = None, max_witnesses: int = 5) -> AxiomReport:
    """Check the updating-function axioms by exact comparison on random dyadic paths.

    Each trial draws a random dyadic path and ``n_times`` grid times; all
    comparisons are exact equality of grid values.
    """
    rng = np.random.default_rng(rng_seed)
    grid = grid or TimeGrid(dt=2.0**-6, n_steps=64)
    rep = AxiomReport(phi.name, trials)

    def record(axiom, e, x, t):
        rep.violations[axiom] += 1
        if len(rep.witnesses) < max_witnesses:
            rep.witnesses.append({"axiom": axiom, "e": e.tolist(), "t": t, "path": x})

    for _ in range(trials):
        x = random_grid_path(rng, grid, phi.input_dim)
        e = _random_state(rng, phi)
        z = phi(e, x)
        rep.checks += 1
        if not np.array_equal(z.values[0], e):
            record("initial", e, x, 0.0)
        for k in rng.integers(0, grid.n_steps + 1, size=n_times):
            t = float(k) * grid.dt
            lhs = stop(z, t).values
            rhs = stop(phi(e, stop(x, t)), t).values
            if not np.array_equal(lhs, rhs):
                record("nonanticipative", e, x, t)
            lhs = shift(z, t).values
            rhs = phi(z.values[k], diff(x, t)).values
            if not np.array_equal(lhs, rhs):
                record("flow", e, x, t)
            rep.checks += 2
    return rep
