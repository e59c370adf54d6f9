"""Particle simulation of jump Ito semimartingales on a uniform grid.

Each step freezes the characteristics at the left endpoint (Euler). The
continuous part moves by ``(b - ∫h dκ) dt + sqrt(c dt) g``; the number of
jumps in the step is Poisson with the frozen total rate, and each jump mark
is drawn from the kernel evaluated at the state reached after the previous
jumps of the same step. Jumps land on the right grid index of the step.

The same engine drives source runs and mimicking runs: it only needs a
characteristics provider ``(t, z, latent) -> CharBatch``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from markov_mimic.errors import ScenarioError
from markov_mimic.kernels import LevyKernel, TestFunctionFamily, TruncationFunction
from markov_mimic.paths import CadlagPath, TimeGrid
from markov_mimic.rng import INIT_STEP, MARK, POISSON, STREAM_SOURCE, CounterRNG, poisson_inverse
from markov_mimic.scenarios import CharBatch, CharBounds, Scenario
from markov_mimic.updating import UpdatingFunction, apply

WARN_RATE_DT = 0.1
MAX_RATE_DT = 1.0
PSD_TOL = 1e-10


class ThinningWarning(UserWarning):
    """Jump rate times step size is large enough to bias the per-step scheme."""


@dataclass(frozen=True)
class SimConfig:
    n_particles: int
    grid: TimeGrid
    seed: int = 0
    store_characteristics: bool = True
    record_stride: int = 1
    accumulate: bool = False

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles}")
        if self.grid.n_steps < 1:
            raise ValueError("simulation grid needs at least one step")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.record_stride < 1 or self.grid.n_steps % self.record_stride:
            raise ValueError(
                f"record_stride={self.record_stride} must divide n_steps={self.grid.n_steps}"
            )

    @property
    def record_steps(self) -> np.ndarray:
        return np.arange(0, self.grid.n_steps + 1, self.record_stride)


@dataclass
class JumpRecords:
    """Flat list of jumps: owner, grid index, order within the step, mark, pre-jump ``Y``."""

    particle: np.ndarray
    step: np.ndarray
    round: np.ndarray
    xi: np.ndarray
    y_pre: np.ndarray

    @classmethod
    def empty(cls, d: int) -> "JumpRecords":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), np.zeros((0, d)), np.zeros((0, d)))

    def __len__(self) -> int:
        return len(self.particle)

    @classmethod
    def concat(cls, parts: list["JumpRecords"], d: int) -> "JumpRecords":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty(d)
        out = cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("particle", "step", "round", "xi", "y_pre")))
        order = np.lexsort((out.round, out.step, out.particle))
        return cls(out.particle[order], out.step[order], out.round[order], out.xi[order], out.y_pre[order])

    def for_particle(self, i: int) -> "JumpRecords":
        m = self.particle == i
        return JumpRecords(self.particle[m], self.step[m], self.round[m], self.xi[m], self.y_pre[m])


@dataclass
class Accumulators:
    """Per-particle running integrals at record times.

    ``yh`` is ``Y(h)``, ``B`` is ``∫ b dt``, ``C`` is the modified second
    characteristic ``∫ (c + ∫ h hᵀ dκ) dt``, ``f_nu`` is ``∫∫ f dκ dt``,
    ``f_mu`` is ``Σ f(ΔY)`` and ``f2_nu`` is ``∫∫ f² dκ dt`` (the predictable
    quadratic variation of ``f_mu - f_nu``) for every member of ``family``.
    """

    family: TestFunctionFamily
    yh: np.ndarray
    B: np.ndarray
    C: np.ndarray
    f_nu: np.ndarray
    f_mu: np.ndarray
    f2_nu: np.ndarray


@dataclass
class ParticleEnsemble:
    scenario: str
    source_kind: str
    config: SimConfig
    phi: UpdatingFunction
    truncation: TruncationFunction
    z0: np.ndarray
    latent: np.ndarray | None
    Y: np.ndarray
    Z: np.ndarray
    b: np.ndarray | None
    c: np.ndarray | None
    kernel_locs: np.ndarray | None
    kernel_rates: np.ndarray | None
    jumps: JumpRecords
    accumulators: Accumulators | None = None
    bounds: CharBounds = CharBounds()
    n_outside: int = 0
    n_evaluations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.config.grid

    @property
    def n_particles(self) -> int:
        return self.Y.shape[1]

    @property
    def d(self) -> int:
        return self.Y.shape[2]

    @property
    def state_dim(self) -> int:
        return self.Z.shape[2]

    @property
    def record_steps(self) -> np.ndarray:
        return self.config.record_steps

    @property
    def times(self) -> np.ndarray:
        return self.record_steps * self.grid.dt

    @property
    def stores_characteristics(self) -> bool:
        return self.b is not None

    @property
    def outside_fraction(self) -> float:
        return self.n_outside / self.n_evaluations if self.n_evaluations else 0.0

    @property
    def flagged(self) -> bool:
        """More than 1% of lookups fell outside the fitted state range."""
        return self.outside_fraction > 0.01

    def record_index(self, t: float) -> int:
        k = self.grid.index_of(t)
        if k % self.config.record_stride:
            raise ValueError(f"t={t} is not a recorded time (record_stride={self.config.record_stride})")
        return k // self.config.record_stride

    def Z_at(self, t: float) -> np.ndarray:
        return self.Z[self.record_index(t)]

    def Y_at(self, t: float) -> np.ndarray:
        return self.Y[self.record_index(t)]

    def kernel(self, rec: int, i: int) -> LevyKernel:
        if self.kernel_rates is None:
            raise ValueError("ensemble does not store characteristics")
        keep = self.kernel_rates[rec, i] > 0
        return LevyKernel(self.kernel_locs[rec, i][keep], self.kernel_rates[rec, i][keep], d=self.d)

    def _require_full_paths(self):
        if self.config.record_stride != 1:
            raise ValueError("full grid paths need record_stride=1")

    def y_path(self, i: int) -> CadlagPath:
        self._require_full_paths()
        jr = self.jumps.for_particle(i)
        return CadlagPath(self.grid, self.Y[:, i, :], jr.step, jr.xi)

    def z_path(self, i: int) -> CadlagPath:
        """``Φ(Z_0, Y)`` recomputed from the stored increment path."""
        return apply(self.phi, self.z0[i], self.y_path(i))

    def summary(self) -> dict:
        zt = self.Z[-1]
        return {
            "scenario": self.scenario,
            "source_kind": self.source_kind,
            "n_particles": self.n_particles,
            "horizon": self.grid.horizon,
            "n_jumps": len(self.jumps),
            "Z_T_mean": zt.mean(axis=0).tolist(),
            "Z_T_var": zt.var(axis=0).tolist(),
            "outside_fraction": self.outside_fraction,
        }


Provider = Callable[[float, np.ndarray, np.ndarray | None], CharBatch]


@dataclass(frozen=True)
class EngineSpec:
    """Everything the stepping loop needs, independent of where coefficients come from."""

    name: str
    source_kind: str
    d: int
    phi: UpdatingFunction
    provider: Provider
    n_atoms: int
    truncation: TruncationFunction
    sample_z0: Callable[[np.ndarray], np.ndarray]
    sample_latent: Callable[[np.ndarray], np.ndarray | None]
    bounds: CharBounds = CharBounds()


def _diffusion(c: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``A g`` with ``A Aᵀ = c`` for each row, after clipping roundoff-negative eigenvalues."""
    if c.shape[1] == 1:
        v = c[:, 0, 0]
        if np.any(v < -PSD_TOL):
            raise ScenarioError(f"negative variance {v.min():g}")
        return np.sqrt(np.maximum(v, 0.0))[:, None] * g
    w, vecs = np.linalg.eigh(0.5 * (c + np.swapaxes(c, 1, 2)))
    if np.any(w < -PSD_TOL):
        raise ScenarioError(f"diffusion matrix not PSD (eigenvalue {w.min():g})")
    root = vecs * np.sqrt(np.maximum(w, 0.0))[:, None, :]
    return np.einsum("nij,nj->ni", root, g)


def _run_chunk(engine: EngineSpec, cfg: SimConfig, particles: np.ndarray, stream: int,
               family: TestFunctionFamily | None):
    grid = cfg.grid
    dt = grid.dt
    sqdt = np.sqrt(dt)
    n = len(particles)
    d = engine.d
    rng = CounterRNG(cfg.seed, stream)
    h = engine.truncation
    phi = engine.phi

    u0 = rng.uniforms(particles, INIT_STEP, 0)
    latent = engine.sample_latent(u0[:, 0])
    z0 = np.asarray(engine.sample_z0(u0[:, 1:3]), dtype=float)
    y = np.zeros((n, d))
    z = z0.copy()

    rec_steps = cfg.record_steps
    n_rec = len(rec_steps)
    k_atoms = engine.n_atoms
    Y = np.empty((n_rec, n, d))
    Z = np.empty((n_rec, n, phi.state_dim))
    store = cfg.store_characteristics
    if store:
        B_rec = np.empty((n_rec, n, d))
        C_rec = np.empty((n_rec, n, d, d))
        L_rec = np.empty((n_rec, n, k_atoms, d))
        R_rec = np.empty((n_rec, n, k_atoms))
    acc = None
    if cfg.accumulate:
        F = len(family)
        acc = {
            "yh": np.empty((n_rec, n, d)), "B": np.empty((n_rec, n, d)),
            "C": np.empty((n_rec, n, d, d)), "f_nu": np.empty((n_rec, n, F)),
            "f_mu": np.empty((n_rec, n, F)), "f2_nu": np.empty((n_rec, n, F)),
        }
        run_yh = np.zeros((n, d))
        run_B = np.zeros((n, d))
        run_C = np.zeros((n, d, d))
        run_nu = np.zeros((n, F))
        run_mu = np.zeros((n, F))
        run_nu2 = np.zeros((n, F))

    jumps: list[JumpRecords] = []
    n_outside = 0
    n_eval = 0
    warned = False
    rec = 0
    for i in range(grid.n_steps + 1):
        t = i * dt
        ch = engine.provider(t, z, latent)
        n_eval += n
        if ch.outside is not None:
            n_outside += int(ch.outside.sum())
        if ch.locs.shape[1] != k_atoms:
            raise ScenarioError(f"provider returned {ch.locs.shape[1]} atom slots, expected {k_atoms}")
        if rec < n_rec and rec_steps[rec] == i:
            Y[rec] = y
            Z[rec] = z
            if store:
                B_rec[rec] = ch.b
                C_rec[rec] = ch.c
                L_rec[rec] = ch.locs
                R_rec[rec] = ch.rates
            if acc is not None:
                acc["yh"][rec] = run_yh
                acc["B"][rec] = run_B
                acc["C"][rec] = run_C
                acc["f_nu"][rec] = run_nu
                acc["f_mu"][rec] = run_mu
                acc["f2_nu"][rec] = run_nu2
            rec += 1
        if i == grid.n_steps:
            break

        total = ch.rates.sum(axis=1)
        mean = total * dt
        if np.any(ch.rates < 0):
            raise ScenarioError("negative jump rate")
        worst = float(mean.max()) if n else 0.0
        if worst > MAX_RATE_DT:
            raise ScenarioError(f"total_rate*dt={worst:g} exceeds {MAX_RATE_DT}; refine dt")
        if worst > WARN_RATE_DT and not warned:
            warnings.warn(f"total_rate*dt={worst:g} > {WARN_RATE_DT}: thinning bias", ThinningWarning, stacklevel=3)
            warned = True

        h_locs = h(ch.locs) if k_atoms else ch.locs
        drift = ch.b - np.einsum("nk,nkd->nd", ch.rates, h_locs) if k_atoms else ch.b
        y_new = y + drift * dt
        if np.any(ch.c != 0.0):
            g = rng.normals(particles, i, d)
            y_new = y_new + _diffusion(ch.c, g) * sqdt

        step_max = np.full(n, -np.inf)
        jump_corr = np.zeros((n, d))
        if k_atoms and worst > 0:
            u = rng.uniforms(particles, i, POISSON)[:, 0]
            counts = poisson_inverse(mean, u)
            r = 0
            active = np.nonzero(counts > r)[0]
            while len(active):
                if r == 0:
                    locs, rates = ch.locs[active], ch.rates[active]
                else:
                    z_mid = phi.advance(z0[active], z[active], y[active], y_new[active], step_max[active], dt)
                    sub = engine.provider(t, z_mid, None if latent is None else latent[active])
                    locs, rates = sub.locs, sub.rates
                cum = np.cumsum(rates, axis=1)
                tot = cum[:, -1]
                ok = tot > 0
                um = rng.uniforms(particles[active], i, MARK + r)[:, 0]
                k = np.minimum((cum <= (um * tot)[:, None]).sum(axis=1), k_atoms - 1)
                xi = locs[np.arange(len(active)), k]
                ids, xi = active[ok], xi[ok]
                if len(ids):
                    y_pre = y_new[ids].copy()
                    y_new[ids] = y_pre + xi
                    step_max[ids] = np.maximum(step_max[ids], xi[:, 0])
                    jumps.append(JumpRecords(
                        particles[ids].astype(np.int64), np.full(len(ids), i + 1, dtype=np.int64),
                        np.full(len(ids), r, dtype=np.int64), xi, y_pre,
                    ))
                    if acc is not None:
                        jump_corr[ids] += xi - h(xi)
                        run_mu[ids] += family(xi)
                r += 1
                active = np.nonzero(counts > r)[0]

        if acc is not None:
            run_yh += (y_new - y) - jump_corr
            run_B += ch.b * dt
            c_tilde = ch.c
            if k_atoms:
                c_tilde = c_tilde + np.einsum("nk,nki,nkj->nij", ch.rates, h_locs, h_locs)
                fv = family(ch.locs)
                run_nu += dt * np.einsum("nk,nkf->nf", ch.rates, fv)
                run_nu2 += dt * np.einsum("nk,nkf->nf", ch.rates, fv * fv)
            run_C += c_tilde * dt

        z = phi.advance(z0, z, y, y_new, step_max, dt)
        y = y_new

    out = {"Y": Y, "Z": Z, "z0": z0, "latent": latent,
           "jumps": JumpRecords.concat(jumps, d), "n_outside": n_outside, "n_eval": n_eval}
    if store:
        out.update(b=B_rec, c=C_rec, locs=L_rec, rates=R_rec)
    if acc is not None:
        out["acc"] = acc
    return out


def run_engine(engine: EngineSpec, cfg: SimConfig, stream: int = STREAM_SOURCE, threads: int = 1,
               family: TestFunctionFamily | None = None) -> ParticleEnsemble:
    """Simulate ``cfg.n_particles`` particles, split into ``threads`` contiguous chunks.

    Output is identical for any ``threads`` because every draw is keyed by
    particle index.
    """
    if cfg.accumulate and family is None:
        family = TestFunctionFamily(engine.d, engine.truncation)
    threads = max(1, min(int(threads), cfg.n_particles))
    chunks = np.array_split(np.arange(cfg.n_particles, dtype=np.int64), threads)
    if threads == 1:
        parts = [_run_chunk(engine, cfg, chunks[0], stream, family)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda idx: _run_chunk(engine, cfg, idx, stream, family), chunks))

    def cat(key, axis=1):
        return np.concatenate([p[key] for p in parts], axis=axis)

    latent = None if parts[0]["latent"] is None else np.concatenate([p["latent"] for p in parts])
    store = cfg.store_characteristics
    acc = None
    if cfg.accumulate:
        acc = Accumulators(family, *(np.concatenate([p["acc"][k] for p in parts], axis=1) for k in ("yh", "B", "C", "f_nu", "f_mu", "f2_nu")))
    return ParticleEnsemble(
        scenario=engine.name,
        source_kind=engine.source_kind,
        config=cfg,
        phi=engine.phi,
        truncation=engine.truncation,
        z0=np.concatenate([p["z0"] for p in parts]),
        latent=latent,
        Y=cat("Y"),
        Z=cat("Z"),
        b=cat("b") if store else None,
        c=cat("c") if store else None,
        kernel_locs=cat("locs") if store else None,
        kernel_rates=cat("rates") if store else None,
        jumps=JumpRecords.concat([p["jumps"] for p in parts], engine.d),
        accumulators=acc,
        bounds=engine.bounds,
        n_outside=sum(p["n_outside"] for p in parts),
        n_evaluations=sum(p["n_eval"] for p in parts),
    )


def scenario_engine(scn: Scenario) -> EngineSpec:
    return EngineSpec(
        name=scn.name, source_kind="source", d=scn.d, phi=scn.phi,
        provider=scn.char_rule, n_atoms=scn.n_atoms, truncation=scn.truncation,
        sample_z0=scn.sample_z0, sample_latent=scn.sample_latent, bounds=scn.bounds,
    )


def simulate_ensemble(scn: Scenario, cfg: SimConfig, threads: int = 1,
                      family: TestFunctionFamily | None = None) -> ParticleEnsemble:
    """Simulate the source process ``Y`` (``Y_0 = 0``) and ``Z = Φ(Z_0, Y)``."""
    ens = run_engine(scenario_engine(scn), cfg, STREAM_SOURCE, threads, family)
    ens.meta["scenario_config"] = scn.to_config()
    return ens
