"""Marginal-law comparisons plus diagnostics built from the characteristics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from markov_mimic.kernels import TestFunctionFamily
from markov_mimic.simulate import ParticleEnsemble

KS_ALPHA = 0.01
KS_MARGIN = 0.005


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance ``sup |F_a - F_b|`` (ties handled exactly)."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, m: int, alpha: float = KS_ALPHA) -> float:
    """Asymptotic two-sample KS critical value ``sqrt(-ln(α/2) (1/n + 1/m) / 2)``."""
    return float(np.sqrt(-np.log(alpha / 2.0) * (1.0 / n + 1.0 / m) / 2.0))


def wasserstein1(a, b) -> float:
    """1-Wasserstein distance between empirical laws, ``∫ |F_a - F_b| dx``."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    x = np.unique(np.concatenate([a, b]))
    if len(x) < 2:
        return 0.0
    fa = np.searchsorted(a, x[:-1], side="right") / a.size
    fb = np.searchsorted(b, x[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * np.diff(x)))


def is_integer_valued(*samples) -> bool:
    return all(np.all(np.isfinite(s)) and np.all(s == np.round(s)) for s in samples)


def tv_distance(a, b) -> float:
    """Total variation between the empirical pmfs of two integer-valued samples."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    vals = np.unique(np.concatenate([a, b]))
    pa = np.searchsorted(np.sort(a), vals, side="right") - np.searchsorted(np.sort(a), vals, side="left")
    pb = np.searchsorted(np.sort(b), vals, side="right") - np.searchsorted(np.sort(b), vals, side="left")
    return float(0.5 * np.sum(np.abs(pa / a.size - pb / b.size)))


def tv_to_pmf(samples, pmf: np.ndarray) -> float:
    """Total variation between an integer sample and a pmf on ``0..len(pmf)-1``.

    Mass beyond the support of ``pmf`` on either side is lumped into one
    tail cell.
    """
    s = np.asarray(samples).ravel().astype(np.int64)
    m = len(pmf)
    inside = (s >= 0) & (s < m)
    emp = np.bincount(s[inside], minlength=m) / s.size
    tail_emp = 1.0 - inside.mean()
    tail_ref = max(0.0, 1.0 - float(np.sum(pmf)))
    return float(0.5 * (np.sum(np.abs(emp - pmf)) + abs(tail_emp - tail_ref)))


@dataclass
class MarginalReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r["pass"] for r in self.rows)

    def failures(self) -> list:
        return [r for r in self.rows if not r["pass"]]

    def summary_lines(self) -> list[str]:
        out = []
        for r in self.rows:
            tag = "PASS" if r["pass"] else "FAIL"
            line = f"{tag} marginal t={r['t']:g} coord={r['coord']} KS={r['ks']:.5f} (tol {r['ks_tol']:.5f}) W1={r['w1']:.5f}"
            if not np.isnan(r["tv"]):
                line += f" TV={r['tv']:.5f} (tol {r['tv_tol']:.5f})"
            out.append(line)
        return out


def compare_marginals(ens_a: ParticleEnsemble, ens_b: ParticleEnsemble, times, tolerances: dict | None = None) -> MarginalReport:
    """Compare the laws of ``Z_t`` coordinate by coordinate.

    ``tolerances`` may set ``ks`` (default: critical value at α = 0.01 plus
    0.005), ``tv`` (default 0.02, integer-valued coordinates only) and ``w1``
    (default: not checked).
    """
    if ens_a.state_dim != ens_b.state_dim:
        raise ValueError(f"state dimensions differ: {ens_a.state_dim} vs {ens_b.state_dim}")
    tol = dict(tolerances or {})
    rep = MarginalReport()
    for t in times:
        za, zb = ens_a.Z_at(t), ens_b.Z_at(t)
        na, nb = za.shape[0], zb.shape[0]
        ks_tol = tol.get("ks") or ks_critical(na, nb) + KS_MARGIN
        tv_tol = tol.get("tv") or 0.02
        w1_tol = tol.get("w1")
        for j in range(ens_a.state_dim):
            a, b = za[:, j], zb[:, j]
            ks = ks_statistic(a, b)
            w1 = wasserstein1(a, b)
            discrete = is_integer_valued(a, b)
            tv = tv_distance(a, b) if discrete else float("nan")
            ok = ks <= ks_tol and (not discrete or tv <= tv_tol) and (w1_tol is None or w1 <= w1_tol)
            rep.rows.append({
                "t": float(t), "coord": j, "ks": ks, "ks_tol": ks_tol, "w1": w1,
                "w1_tol": float("nan") if w1_tol is None else w1_tol,
                "tv": tv, "tv_tol": tv_tol if discrete else float("nan"),
                "n_a": na, "n_b": nb, "pass": bool(ok),
            })
    return rep


@dataclass
class MartingaleReport:
    rows: list = field(default_factory=list)

    def max_abs_z(self, process: str | None = None) -> float:
        zs = [abs(r["z"]) for r in self.rows if process is None or r["process"] == process]
        return max(zs) if zs else 0.0

    def passed(self, z_max: float = 4.0) -> bool:
        return self.max_abs_z() <= z_max

    def summary_lines(self, z_max: float = 4.0) -> list[str]:
        out = []
        for proc in sorted({r["process"] for r in self.rows}):
            for comp in sorted({r["component"] for r in self.rows if r["process"] == proc}):
                zs = [abs(r["z"]) for r in self.rows if r["process"] == proc and r["component"] == comp]
                tag = "PASS" if max(zs) <= z_max else "FAIL"
                out.append(f"{tag} martingale ({proc}) {comp}: max|z|={max(zs):.3f} over {len(zs)} windows")
        return out


def default_windows(ens: ParticleEnsemble, n_windows: int = 20) -> list[tuple[float, float]]:
    """``n_windows`` equal, non-overlapping windows on recorded times, starting at 0."""
    n_int = len(ens.record_steps) - 1
    length = n_int // n_windows
    if length < 1:
        raise ValueError(f"only {n_int} recorded intervals for {n_windows} windows")
    t = ens.times
    return [(float(t[k * length]), float(t[(k + 1) * length])) for k in range(n_windows)]


def _zscore(x: np.ndarray, qv: np.ndarray | None = None) -> tuple[float, float, float]:
    """Sample mean of window increments with its standard error and z-score.

    ``qv`` holds per-particle increments of the predictable quadratic
    variation. Its mean is an unbiased variance estimate that stays honest
    when jumps are rare and the sample variance sees none of them; the larger
    of the two is used.
    """
    mean = float(x.mean())
    var = float(x.var(ddof=1)) if x.size > 1 else 0.0
    if qv is not None:
        var = max(var, float(qv.mean()))
    se = float(np.sqrt(var / x.size))
    if se > 0:
        return mean, se, mean / se
    return mean, se, 0.0 if mean == 0.0 else float(np.copysign(np.inf, mean))


def martingale_residuals(ens: ParticleEnsemble, family: TestFunctionFamily | None = None, windows=None) -> MartingaleReport:
    """Window increments of the three local martingales built from the characteristics.

    (i) ``Y(h) - B``, (ii) ``(Y(h) - B)(Y(h) - B)ᵀ - C̃`` on window increments,
    (iii) ``Σ f(ΔY) - ∫∫ f dκ dt`` for each test function.
    """
    acc = ens.accumulators
    if acc is None:
        raise ValueError("ensemble was simulated without accumulators")
    if family is not None and list(family.names) != list(acc.family.names):
        raise ValueError("family differs from the one accumulated during simulation")
    windows = windows if windows is not None else default_windows(ens)
    rep = MartingaleReport()
    d = ens.d
    for s, e in windows:
        i0, i1 = ens.record_index(s), ens.record_index(e)
        if i1 <= i0:
            raise ValueError(f"empty window [{s}, {e}]")
        dm = (acc.yh[i1] - acc.B[i1]) - (acc.yh[i0] - acc.B[i0])
        dc = acc.C[i1] - acc.C[i0]
        df = (acc.f_mu[i1] - acc.f_nu[i1]) - (acc.f_mu[i0] - acc.f_nu[i0])
        dq = acc.f2_nu[i1] - acc.f2_nu[i0]
        cols = [("i", f"Y(h)-B[{k}]", dm[:, k], dc[:, k, k]) for k in range(d)]
        cols += [("ii", f"quad[{i}{j}]", dm[:, i] * dm[:, j] - dc[:, i, j], None) for i in range(d) for j in range(i, d)]
        cols += [("iii", name, df[:, k], dq[:, k]) for k, name in enumerate(acc.family.names)]
        for proc, comp, x, qv in cols:
            mean, se, z = _zscore(x, qv)
            rep.rows.append({"process": proc, "component": comp, "t_start": s, "t_end": e,
                             "mean": mean, "se": se, "z": z})
    return rep


def _compensator_paths(ens: ParticleEnsemble, family: TestFunctionFamily) -> np.ndarray:
    """``(n_rec, N, F)`` accumulated ``∫∫ f dκ dt`` per particle."""
    acc = ens.accumulators
    if acc is not None and list(acc.family.names) == list(family.names):
        return acc.f_nu
    if ens.kernel_rates is None or ens.config.record_stride != 1:
        raise ValueError("compensator probe needs accumulators or per-step kernels (record_stride=1)")
    rates = ens.kernel_rates[:-1]
    fv = family(ens.kernel_locs[:-1]) if rates.shape[-1] else np.zeros(rates.shape[:2] + (0, len(family)))
    per_step = ens.grid.dt * np.einsum("snk,snkf->snf", rates, fv)
    out = np.zeros((len(ens.record_steps), ens.n_particles, len(family)))
    out[1:] = np.cumsum(per_step, axis=0)
    return out


def compensator_probe(ens_a: ParticleEnsemble, ens_b: ParticleEnsemble, family: TestFunctionFamily | None, times) -> list[dict]:
    """Compare ``E[(f * ν)_t]`` between two ensembles for every test function."""
    if family is None:
        if ens_a.accumulators is None:
            raise ValueError("no family given and ensemble has no accumulators")
        family = ens_a.accumulators.family
    pa = _compensator_paths(ens_a, family)
    pb = _compensator_paths(ens_b, family)
    rows = []
    for t in times:
        xa = pa[ens_a.record_index(t)]
        xb = pb[ens_b.record_index(t)]
        for k, name in enumerate(family.names):
            ma, mb = float(xa[:, k].mean()), float(xb[:, k].mean())
            se = float(np.sqrt(xa[:, k].var(ddof=1) / len(xa) + xb[:, k].var(ddof=1) / len(xb))) if min(len(xa), len(xb)) > 1 else 0.0
            diff = ma - mb
            scale = max(abs(ma), abs(mb))
            rows.append({
                "t": float(t), "member": name, "mean_a": ma, "mean_b": mb, "diff": diff,
                "rel_diff": diff / scale if scale > 0 else 0.0, "se": se,
                "z": diff / se if se > 0 else (0.0 if diff == 0 else float(np.copysign(np.inf, diff))),
            })
    return rows
