"""Source-process definitions and their closed-form projections.

A scenario gives the differential characteristics ``(b, c, κ)`` of ``Y`` as a
vectorized rule of ``(t, Z_t, latent)``, where ``latent`` is static hidden
randomness drawn once per particle. Kernels are finite atom lists with a
fixed number of slots per scenario; unused slots carry rate 0.

Drifts are taken relative to the scenario's truncation function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from markov_mimic.kernels import LevyKernel, TruncationFunction
from markov_mimic.updating import UpdatingFunction, builtin

SCENARIO_KINDS = ("random_drift_sign", "mixed_poisson", "sup_dependent_vol", "iterated_integral", "levy")
DEFAULT_TRUNCATION = 0.5


@dataclass
class CharBatch:
    """Characteristics of ``n`` particles at one time.

    ``b`` is ``(n, d)``, ``c`` is ``(n, d, d)``, ``locs`` is ``(n, K, d)``
    and ``rates`` is ``(n, K)``. ``outside`` flags lookups that fell outside
    the fitted state range (projection tables only).
    """

    b: np.ndarray
    c: np.ndarray
    locs: np.ndarray
    rates: np.ndarray
    outside: np.ndarray | None = None

    @property
    def total_rate(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    def take(self, mask) -> "CharBatch":
        return CharBatch(
            self.b[mask], self.c[mask], self.locs[mask], self.rates[mask],
            None if self.outside is None else self.outside[mask],
        )

    def kernel(self, i: int) -> LevyKernel:
        keep = self.rates[i] > 0
        return LevyKernel(self.locs[i][keep], self.rates[i][keep], d=self.b.shape[1])


@dataclass(frozen=True)
class CharBounds:
    """Declared bounds on coefficient sizes and the total jump rate (``None``: not declared)."""

    b: float | None = None
    c: float | None = None
    rate: float | None = None


CharRule = Callable[[float, np.ndarray, np.ndarray | None], CharBatch]


@dataclass(frozen=True)
class OracleRule:
    """Exact projected characteristics ``(t, z) -> CharBatch``."""

    name: str
    rule: Callable[[float, np.ndarray], CharBatch] = field(repr=False)
    n_atoms: int = 0

    def __call__(self, t: float, z, latent=None) -> CharBatch:
        return self.rule(t, np.atleast_2d(np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class Scenario:
    name: str
    d: int
    phi: UpdatingFunction
    char_rule: CharRule = field(repr=False)
    n_atoms: int
    truncation: TruncationFunction
    z0: np.ndarray
    latent_sampler: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    oracle: OracleRule | None = field(default=None, repr=False)
    bounds: CharBounds = CharBounds()
    params: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return self.phi.state_dim

    def sample_z0(self, u: np.ndarray) -> np.ndarray:
        """Initial states from uniforms ``(n, k)``; built-ins use a point mass."""
        return np.tile(self.z0, (u.shape[0], 1))

    def sample_latent(self, u: np.ndarray) -> np.ndarray | None:
        return None if self.latent_sampler is None else self.latent_sampler(u)

    def characteristics(self, t: float, z, latent=None) -> CharBatch:
        return self.char_rule(t, np.atleast_2d(np.asarray(z, dtype=float)), latent)

    def to_config(self) -> dict:
        return {"kind": self.params.get("kind", self.name), "params": {k: v for k, v in self.params.items() if k != "kind"}}


def _empty_batch(n: int, d: int, k: int = 0) -> CharBatch:
    return CharBatch(np.zeros((n, d)), np.zeros((n, d, d)), np.zeros((n, k, d)), np.zeros((n, k)))


# --- closed-form projections -------------------------------------------------

def drift_sign_posterior_mean(x) -> np.ndarray:
    """``E[β | X_t = x]`` for ``X = βt + W`` with ``β = ±1`` equally likely."""
    return np.tanh(np.asarray(x, dtype=float))


def mixed_poisson_rate(t, n, p: float, lam1: float, lam2: float) -> np.ndarray:
    """Posterior mean intensity ``E[Λ | N_t = n]`` for a two-point mixed Poisson process.

    Computed from log-weights, so it stays finite for large ``n``.
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore"):
        lw1 = np.log(p) + n * np.log(lam1) - lam1 * t
        lw2 = np.log1p(-p) + n * np.log(lam2) - lam2 * t
    top = np.maximum(lw1, lw2)
    w1 = np.exp(lw1 - top)
    w2 = np.exp(lw2 - top)
    return (w1 * lam1 + w2 * lam2) / (w1 + w2)


def mixed_poisson_pmf(n, t: float, p: float, lam1: float, lam2: float) -> np.ndarray:
    from scipy.stats import poisson

    n = np.asarray(n)
    return p * poisson.pmf(n, lam1 * t) + (1 - p) * poisson.pmf(n, lam2 * t)


# --- built-ins ---------------------------------------------------------------

def _need(params, key, default):
    return params.get(key, default)


def _random_drift_sign(params):
    r = _need(params, "truncation", DEFAULT_TRUNCATION)

    def rule(t, z, beta):
        n = z.shape[0]
        batch = _empty_batch(n, 1)
        batch.b[:, 0] = beta
        batch.c[:, 0, 0] = 1.0
        return batch

    def oracle_rule(t, z):
        batch = _empty_batch(z.shape[0], 1)
        batch.b[:, 0] = drift_sign_posterior_mean(z[:, 0])
        batch.c[:, 0, 0] = 1.0
        return batch

    return Scenario(
        name="random_drift_sign", d=1, phi=builtin("process_itself", 1), char_rule=rule,
        n_atoms=0, truncation=TruncationFunction(r), z0=np.zeros(1),
        latent_sampler=lambda u: np.where(u < 0.5, 1.0, -1.0),
        oracle=OracleRule("tanh_drift", oracle_rule, 0),
        bounds=CharBounds(b=1.0, c=1.0, rate=0.0),
        params={"kind": "random_drift_sign", "truncation": r},
    )


def _mixed_poisson(params):
    p = float(_need(params, "p", 0.5))
    lam1 = float(_need(params, "lambda1", 1.0))
    lam2 = float(_need(params, "lambda2", 4.0))
    r = float(_need(params, "truncation", DEFAULT_TRUNCATION))
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixing probability must lie in [0, 1], got {p}")
    if lam1 <= 0 or lam2 <= 0:
        raise ValueError(f"intensities must be positive, got {lam1}, {lam2}")
    # b = 0 relative to h only if unit jumps fall outside the truncation ball
    if r >= 1.0:
        raise ValueError(f"mixed_poisson needs a truncation threshold below 1, got {r}")

    def rule(t, z, lam):
        n = z.shape[0]
        batch = _empty_batch(n, 1, 1)
        batch.locs[:, 0, 0] = 1.0
        batch.rates[:, 0] = lam
        return batch

    def oracle_rule(t, z):
        n = z.shape[0]
        batch = _empty_batch(n, 1, 1)
        batch.locs[:, 0, 0] = 1.0
        batch.rates[:, 0] = mixed_poisson_rate(t, z[:, 0], p, lam1, lam2)
        return batch

    return Scenario(
        name="mixed_poisson", d=1, phi=builtin("process_itself", 1), char_rule=rule,
        n_atoms=1, truncation=TruncationFunction(r), z0=np.zeros(1),
        latent_sampler=lambda u: np.where(u < p, lam1, lam2),
        oracle=OracleRule("posterior_intensity", oracle_rule, 1),
        bounds=CharBounds(b=0.0, c=0.0, rate=max(lam1, lam2)),
        params={"kind": "mixed_poisson", "p": p, "lambda1": lam1, "lambda2": lam2, "truncation": r},
    )


def _sup_dependent_vol(params):
    barrier = float(_need(params, "barrier", 1.0))
    low = float(_need(params, "vol_low", 1.0))
    high = float(_need(params, "vol_high", 2.0))
    r = float(_need(params, "truncation", DEFAULT_TRUNCATION))
    if low < 0 or high < 0:
        raise ValueError("variances must be nonnegative")

    def variance(m):
        return np.where(m >= barrier, high, low)

    def rule(t, z, latent):
        batch = _empty_batch(z.shape[0], 1)
        batch.c[:, 0, 0] = variance(z[:, 1])
        return batch

    return Scenario(
        name="sup_dependent_vol", d=1, phi=builtin("supremum_to_date", 1), char_rule=rule,
        n_atoms=0, truncation=TruncationFunction(r), z0=np.zeros(2),
        oracle=OracleRule("state_measurable", lambda t, z: rule(t, z, None), 0),
        bounds=CharBounds(b=0.0, c=max(low, high), rate=0.0),
        params={"kind": "sup_dependent_vol", "barrier": barrier, "vol_low": low, "vol_high": high, "truncation": r},
    )


def _iterated_integral(params):
    lam = float(_need(params, "lam", 1.0))
    mu = float(_need(params, "mu", 0.0))
    sigma = float(_need(params, "sigma", 0.0))
    r = float(_need(params, "truncation", DEFAULT_TRUNCATION))
    if lam <= 0:
        raise ValueError(f"jump intensity must be positive, got {lam}")
    if r >= 1.0:
        raise ValueError("iterated_integral needs a truncation threshold below 1")

    def rule(t, z, latent=None):
        x = z[:, 0]
        n = z.shape[0]
        batch = _empty_batch(n, 2, 1)
        batch.b[:, 0] = mu
        batch.b[:, 1] = x * mu
        s2 = sigma * sigma
        batch.c[:, 0, 0] = s2
        batch.c[:, 0, 1] = x * s2
        batch.c[:, 1, 0] = x * s2
        batch.c[:, 1, 1] = x * x * s2
        batch.locs[:, 0, 0] = 1.0
        batch.locs[:, 0, 1] = x
        batch.rates[:, 0] = lam
        return batch

    bounded = mu == 0.0 and sigma == 0.0
    return Scenario(
        name="iterated_integral", d=2, phi=builtin("process_itself", 2), char_rule=rule,
        n_atoms=1, truncation=TruncationFunction(r), z0=np.zeros(2),
        oracle=OracleRule("state_measurable", lambda t, z: rule(t, z), 1),
        bounds=CharBounds(b=0.0 if bounded else None, c=0.0 if bounded else None, rate=lam),
        params={"kind": "iterated_integral", "lam": lam, "mu": mu, "sigma": sigma, "truncation": r},
    )


def _levy(params):
    b = np.atleast_1d(np.asarray(_need(params, "b", [0.0]), dtype=float))
    d = b.shape[0]
    c = np.asarray(_need(params, "c", np.eye(d).tolist()), dtype=float).reshape(d, d)
    if not np.allclose(c, c.T, atol=1e-12, rtol=0):
        raise ValueError("diffusion matrix must be symmetric")
    if np.linalg.eigvalsh(c).min() < -1e-10:
        raise ValueError("diffusion matrix must be positive semidefinite")
    kernel = LevyKernel.from_config(_need(params, "kernel", []), d)
    phi_kind = _need(params, "phi", "process_itself")
    phi = builtin(phi_kind, d)
    z0 = np.asarray(_need(params, "z0", [0.0] * phi.state_dim), dtype=float).reshape(phi.state_dim)
    if not phi.state_space.contains(z0):
        raise ValueError(f"z0={z0.tolist()} violates the state space of {phi_kind}")
    r = float(_need(params, "truncation", DEFAULT_TRUNCATION))
    if len(kernel.rates) and np.any(np.isclose(np.linalg.norm(kernel.locs, axis=1), r, rtol=0, atol=1e-12)):
        raise ValueError("kernel atoms must lie off the truncation sphere")
    k = len(kernel.rates)

    def rule(t, z, latent=None):
        n = z.shape[0]
        return CharBatch(
            np.tile(b, (n, 1)), np.tile(c, (n, 1, 1)),
            np.tile(kernel.locs, (n, 1, 1)), np.tile(kernel.rates, (n, 1)),
        )

    return Scenario(
        name="levy", d=d, phi=phi, char_rule=rule, n_atoms=k,
        truncation=TruncationFunction(r), z0=z0,
        oracle=OracleRule("deterministic", lambda t, z: rule(t, z), k),
        bounds=CharBounds(b=float(np.abs(b).max()), c=float(np.abs(c).max()), rate=kernel.total_rate),
        params={"kind": "levy", "b": b.tolist(), "c": c.tolist(), "kernel": kernel.to_config(),
                "phi": phi_kind, "z0": z0.tolist(), "truncation": r},
    )


_BUILDERS = {
    "random_drift_sign": _random_drift_sign,
    "mixed_poisson": _mixed_poisson,
    "sup_dependent_vol": _sup_dependent_vol,
    "iterated_integral": _iterated_integral,
    "levy": _levy,
}


def builtin_scenario(kind: str, params: dict | None = None) -> Scenario:
    """Build a named scenario.

    ``levy`` is a constant-coefficient process (``b``, ``c``, ``kernel`` atoms,
    ``phi``, ``z0``); with ``b=0, c=1`` and no atoms it is Brownian motion.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown scenario {kind!r}; expected one of {SCENARIO_KINDS}")
    return _BUILDERS[kind](dict(params or {}))
