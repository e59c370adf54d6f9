"""CSV persistence for ensembles and projection tables.

Floats are written with ``%.17g`` so every value survives a round trip
bit for bit, and rows are emitted in a fixed order, so equal inputs give
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from pathlib import Path

import numpy as np

from markov_mimic.kernels import TestFunctionFamily, TruncationFunction
from markov_mimic.paths import TimeGrid
from markov_mimic.projector import ProjectedCharacteristics, ProjectionSlice
from markov_mimic.simulate import Accumulators, JumpRecords, ParticleEnsemble, SimConfig
from markov_mimic.updating import builtin

FLOAT = "%.17g"
INT = "%d"

ENSEMBLE_FILES = ("ensemble.csv", "kernels.csv", "jumps.csv")
PROJECTION_FILES = ("projection.csv", "mixture.csv", "projection_kernels.csv", "slices.csv", "edges.csv", "cells.csv")


class MissingInputError(FileNotFoundError):
    """A pipeline stage found its input directory incomplete."""


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _write(path: Path, header: list[str], cols: list[np.ndarray], fmts: list[str], suffix: str = "") -> None:
    """Write equal-length columns as CSV; ``suffix`` is appended verbatim to every row."""
    n = len(cols[0])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if n == 0:
            return
        blocks = [np.asarray(c, dtype=float).reshape(n, -1) for c in cols]
        fmt = ",".join(f for f, blk in zip(fmts, blocks) for _ in range(blk.shape[1]))
        np.savetxt(fh, np.column_stack(blocks), fmt=fmt + suffix)


def _read(path: Path, skip_last: int = 0) -> tuple[list[str], np.ndarray]:
    if not path.is_file():
        raise MissingInputError(f"missing {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise MissingInputError(f"{path} is empty")
    ncol = len(header) - skip_last
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # header-only files
        data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=range(ncol), ndmin=2)
    return header, data.reshape(-1, ncol)


def _names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{k}" for k in range(n)]


def _pair_names(prefix: str, d: int) -> list[str]:
    return [f"{prefix}{i}{j}" for i in range(d) for j in range(d)]


def _dedup_kernels(locs: np.ndarray, rates: np.ndarray):
    """Unique kernels over flattened rows, ignoring zero-rate slots."""
    n, K, d = locs.shape
    locs = np.where((rates > 0)[:, :, None], locs, 0.0)
    rows = np.concatenate([locs.reshape(n, K * d), rates], axis=1)
    uniq, kid = np.unique(rows, axis=0, return_inverse=True)
    return uniq[:, : K * d].reshape(len(uniq), K, d), uniq[:, K * d:], kid.reshape(-1)


def _write_kernel_table(path: Path, locs: np.ndarray, rates: np.ndarray, d: int) -> None:
    k_id, a_id = np.nonzero(rates > 0)
    _write(path, ["kernel_id", "atom_index"] + _names("xi", d) + ["rate"],
           [k_id, a_id, locs[k_id, a_id], rates[k_id, a_id]], [INT, INT, FLOAT, FLOAT])


def _read_kernel_table(path: Path, n_kernels: int, d: int):
    _, data = _read(path)
    k_id = data[:, 0].astype(np.int64)
    a_id = data[:, 1].astype(np.int64)
    K = int(a_id.max()) + 1 if len(a_id) else 0
    locs = np.zeros((n_kernels, K, d))
    rates = np.zeros((n_kernels, K))
    locs[k_id, a_id] = data[:, 2:2 + d]
    rates[k_id, a_id] = data[:, 2 + d]
    return locs, rates


# --- ensembles ---------------------------------------------------------------

def write_ensemble(ens: ParticleEnsemble, out: Path) -> list[str]:
    """Write ``ensemble.csv``, ``kernels.csv``, ``jumps.csv`` and, when present, ``accumulators.csv``."""
    out.mkdir(parents=True, exist_ok=True)
    if not ens.stores_characteristics:
        raise ValueError("only ensembles with stored characteristics can be written")
    n_rec, N, d = ens.Y.shape
    e = ens.state_dim
    pid = np.tile(np.arange(N), n_rec)
    t = np.repeat(ens.times, N)
    locs, rates, kid = _dedup_kernels(
        ens.kernel_locs.reshape(n_rec * N, -1, d), ens.kernel_rates.reshape(n_rec * N, -1)
    )
    header = (["particle_id", "t"] + _names("z", e) + _names("y", d) + _names("b", d)
              + _pair_names("c", d) + ["kernel_id", "source_kind"])
    _write(out / "ensemble.csv", header,
           [pid, t, ens.Z.reshape(-1, e), ens.Y.reshape(-1, d), ens.b.reshape(-1, d),
            ens.c.reshape(-1, d * d), kid],
           [INT, FLOAT, FLOAT, FLOAT, FLOAT, FLOAT, INT], suffix="," + ens.source_kind)
    _write_kernel_table(out / "kernels.csv", locs, rates, d)

    jr = ens.jumps
    _write(out / "jumps.csv", ["particle_id", "step", "round", "t"] + _names("xi", d) + _names("y_pre", d),
           [jr.particle, jr.step, jr.round, jr.step * ens.grid.dt, jr.xi, jr.y_pre],
           [INT, INT, INT, FLOAT, FLOAT, FLOAT])
    files = list(ENSEMBLE_FILES)
    acc = ens.accumulators
    if acc is not None:
        names = list(acc.family.names)
        header = (["particle_id", "t"] + _names("yh", d) + _names("B", d) + _pair_names("C", d)
                  + [f"f_nu:{m}" for m in names] + [f"f_mu:{m}" for m in names]
                  + [f"f2_nu:{m}" for m in names])
        _write(out / "accumulators.csv", header,
               [pid, t, acc.yh.reshape(-1, d), acc.B.reshape(-1, d), acc.C.reshape(-1, d * d),
                acc.f_nu.reshape(-1, len(names)), acc.f_mu.reshape(-1, len(names)),
                acc.f2_nu.reshape(-1, len(names))],
               [INT, FLOAT, FLOAT, FLOAT, FLOAT, FLOAT, FLOAT, FLOAT])
        files.append("accumulators.csv")
    return files


def read_ensemble(src: Path, sim: SimConfig, phi_kind: str, truncation: float, scenario: str) -> ParticleEnsemble:
    """Rebuild a :class:`ParticleEnsemble` from the files of :func:`write_ensemble`."""
    header, data = _read(src / "ensemble.csv", skip_last=1)
    with open(src / "ensemble.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        first = next(reader, None)
    source_kind = first[-1] if first else "source"
    e = sum(1 for h in header if h.startswith("z"))
    d = sum(1 for h in header if h.startswith("y"))
    n_rec = len(sim.record_steps)
    if len(data) % n_rec:
        raise ValueError(f"{src / 'ensemble.csv'} has {len(data)} rows, not a multiple of {n_rec} record times")
    N = len(data) // n_rec
    if N != sim.n_particles:
        raise ValueError(f"ensemble holds {N} particles, configuration says {sim.n_particles}")
    col = 2
    Z = data[:, col:col + e].reshape(n_rec, N, e); col += e
    Y = data[:, col:col + d].reshape(n_rec, N, d); col += d
    b = data[:, col:col + d].reshape(n_rec, N, d); col += d
    c = data[:, col:col + d * d].reshape(n_rec, N, d, d); col += d * d
    kid = data[:, col].astype(np.int64)
    n_kernels = int(kid.max()) + 1 if len(kid) else 0
    klocs, krates = _read_kernel_table(src / "kernels.csv", n_kernels, d)
    K = klocs.shape[1]

    _, jd = _read(src / "jumps.csv")
    jumps = JumpRecords(jd[:, 0].astype(np.int64), jd[:, 1].astype(np.int64), jd[:, 2].astype(np.int64),
                        jd[:, 4:4 + d].copy(), jd[:, 4 + d:4 + 2 * d].copy())

    trunc = TruncationFunction(truncation)
    acc = None
    if (src / "accumulators.csv").is_file():
        ah, ad = _read(src / "accumulators.csv")
        family = TestFunctionFamily(d, trunc)
        names = [h.split(":", 1)[1] for h in ah if h.startswith("f_nu:")]
        if names != list(family.names):
            raise ValueError("accumulator columns do not match the default test-function family")
        F = len(names)
        col = 2
        parts = []
        for width, shape in ((d, (d,)), (d, (d,)), (d * d, (d, d)), (F, (F,)), (F, (F,)), (F, (F,))):
            parts.append(ad[:, col:col + width].reshape((n_rec, N) + shape))
            col += width
        acc = Accumulators(family, *parts)

    return ParticleEnsemble(
        scenario=scenario, source_kind=source_kind, config=sim, phi=builtin(phi_kind, d),
        truncation=trunc, z0=Z[0].copy(), latent=None, Y=Y, Z=Z, b=b, c=c,
        kernel_locs=klocs[kid].reshape(n_rec, N, K, d), kernel_rates=krates[kid].reshape(n_rec, N, K),
        jumps=jumps, accumulators=acc,
    )


# --- projections -------------------------------------------------------------

def write_projection(pc: ProjectedCharacteristics, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    d, e = pc.d, pc.state_dim
    cols = {k: [] for k in ("t", "bin", "lo", "hi", "b", "c", "size", "rate", "count", "centroid", "cell")}
    mix = {k: [] for k in ("t", "bin", "kernel", "weight")}
    kern_locs, kern_rates = [], []
    srows, edges, cells = [], [], []
    offset = 0
    K = max(s.kernel_locs.shape[1] for s in pc.slices)
    for s in pc.slices:
        nb = s.n_bins
        tt = np.full(nb, s.t)
        cols["t"].append(tt)
        cols["bin"].append(np.arange(nb))
        cols["lo"].append(s.bin_lo)
        cols["hi"].append(s.bin_hi)
        cols["b"].append(s.b_hat)
        cols["c"].append(s.c_hat.reshape(nb, d * d))
        cols["size"].append(np.bincount(s.member_bin, minlength=nb))
        cols["rate"].append(s.total_rate)
        cols["count"].append(s.count)
        cols["centroid"].append(s.centroid)
        cols["cell"].append(s.bin_cell)
        mix["t"].append(np.full(len(s.member_bin), s.t))
        mix["bin"].append(s.member_bin)
        mix["kernel"].append(s.member_kernel + offset)
        mix["weight"].append(s.weight)
        nk, k_s = s.kernel_rates.shape
        pad_l = np.zeros((nk, K, d))
        pad_r = np.zeros((nk, K))
        pad_l[:, :k_s] = s.kernel_locs
        pad_r[:, :k_s] = s.kernel_rates
        kern_locs.append(pad_l)
        kern_rates.append(pad_r)
        offset += nk
        srows.append(np.concatenate([[s.t, s.step, s.c_clip, nb], s.data_lo, s.data_hi]))
        for j, ed in enumerate(s.edges):
            edges.append(np.column_stack([np.full(len(ed), s.t), np.full(len(ed), j), np.arange(len(ed)), ed]))
        cells.append(np.column_stack([np.full(len(s.cell_to_bin), s.t), np.arange(len(s.cell_to_bin)), s.cell_to_bin]))

    cat = {k: np.concatenate(v) for k, v in cols.items()}
    header = (["t", "bin_id"] + _names("bin_lo", e) + _names("bin_hi", e) + _names("b_hat", d)
              + _pair_names("c_hat", d) + ["mixture_size", "total_rate", "count"] + _names("centroid", e) + ["cell_id"])
    _write(out / "projection.csv", header,
           [cat["t"], cat["bin"], cat["lo"], cat["hi"], cat["b"], cat["c"], cat["size"], cat["rate"],
            cat["count"], cat["centroid"], cat["cell"]],
           [FLOAT, INT, FLOAT, FLOAT, FLOAT, FLOAT, INT, FLOAT, INT, FLOAT, INT])
    m = {k: np.concatenate(v) for k, v in mix.items()}
    _write(out / "mixture.csv", ["t", "bin_id", "member_kernel_id", "weight"],
           [m["t"], m["bin"], m["kernel"], m["weight"]], [FLOAT, INT, INT, FLOAT])
    _write_kernel_table(out / "projection_kernels.csv", np.concatenate(kern_locs), np.concatenate(kern_rates), d)
    sr = np.array(srows)
    _write(out / "slices.csv", ["t", "step", "c_clip", "n_bins"] + _names("data_lo", e) + _names("data_hi", e),
           [sr[:, 0], sr[:, 1], sr[:, 2], sr[:, 3], sr[:, 4:4 + e], sr[:, 4 + e:]],
           [FLOAT, INT, FLOAT, INT, FLOAT, FLOAT])
    ed = np.concatenate(edges) if edges else np.zeros((0, 4))
    _write(out / "edges.csv", ["t", "dim", "index", "value"], [ed[:, 0], ed[:, 1], ed[:, 2], ed[:, 3]],
           [FLOAT, INT, INT, FLOAT])
    ce = np.concatenate(cells)
    _write(out / "cells.csv", ["t", "cell_id", "bin_id"], [ce[:, 0], ce[:, 1], ce[:, 2]], [FLOAT, INT, INT])
    return list(PROJECTION_FILES)


def read_projection(src: Path, grid: TimeGrid, stride: int, d: int, state_dim: int,
                    truncation: float, phi_name: str, scenario: str) -> ProjectedCharacteristics:
    e = state_dim
    _, sl = _read(src / "slices.csv")
    _, pr = _read(src / "projection.csv")
    _, mx = _read(src / "mixture.csv")
    _, ed = _read(src / "edges.csv")
    _, ce = _read(src / "cells.csv")
    n_kernels = int(mx[:, 2].max()) + 1 if len(mx) else 0
    klocs, krates = _read_kernel_table(src / "projection_kernels.csv", n_kernels, d)
    slices = []
    for row in sl:
        t = row[0]
        p = pr[pr[:, 0] == t]
        m = mx[mx[:, 0] == t]
        used = np.unique(m[:, 2].astype(np.int64))
        local = np.searchsorted(used, m[:, 2].astype(np.int64))
        col = 2
        bin_lo = p[:, col:col + e]; col += e
        bin_hi = p[:, col:col + e]; col += e
        b_hat = p[:, col:col + d]; col += d
        c_hat = p[:, col:col + d * d].reshape(-1, d, d); col += d * d
        col += 2
        count = p[:, col].astype(np.int64); col += 1
        centroid = p[:, col:col + e]; col += e
        bin_cell = p[:, col].astype(np.int64)
        edge_rows = ed[ed[:, 0] == t]
        edges = [edge_rows[edge_rows[:, 1] == j][:, 3] for j in range(e)]
        cell_rows = ce[ce[:, 0] == t]
        slices.append(ProjectionSlice(
            step=int(row[1]), t=float(t), edges=edges, cell_to_bin=cell_rows[:, 2].astype(np.int64),
            data_lo=row[4:4 + e], data_hi=row[4 + e:4 + 2 * e], bin_cell=bin_cell,
            bin_lo=bin_lo, bin_hi=bin_hi, centroid=centroid, count=count, b_hat=b_hat, c_hat=c_hat,
            kernel_locs=klocs[used], kernel_rates=krates[used],
            member_bin=m[:, 1].astype(np.int64), member_kernel=local, weight=m[:, 3], c_clip=float(row[2]),
        ))
    if not slices:
        raise MissingInputError(f"{src / 'slices.csv'} lists no projection times")
    return ProjectedCharacteristics(
        scenario=scenario, d=d, state_dim=state_dim, grid=grid, stride=stride,
        truncation=TruncationFunction(truncation), phi_name=phi_name, slices=slices,
    )


# --- reports -----------------------------------------------------------------

def write_rows(path: Path, rows: list[dict], columns: list[str]) -> None:
    """Write report rows with a fixed column order; floats use ``%.17g``."""
    def fmt(v):
        if isinstance(v, (bool, np.bool_)):
            return "PASS" if v else "FAIL"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return FLOAT % v
        return str(v)

    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(fmt(r[c]) for c in columns) + "\n")


def write_manifest(out: Path, payload: dict) -> None:
    with open(out / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(src: Path) -> dict:
    path = src / "manifest.json"
    if not path.is_file():
        raise MissingInputError(f"missing {path}")
    with open(path) as fh:
        return json.load(fh)
