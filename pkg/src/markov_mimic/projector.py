"""Projected characteristics by binned conditional expectations.

At every projection time the state ``Z_t`` is partitioned into a product of
per-dimension bins. Drift and diffusion are in-bin means of the realized
coefficients; the jump kernel is the in-bin equal-weight mixture of the
realized particle kernels, deduplicated so identical kernels share a weight.
For any test function ``f`` the mixture integral then equals the in-bin mean
of ``∫ f dκ`` exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from markov_mimic.errors import EstimationError, StateLookupError, UnsupportedScenarioError
from markov_mimic.kernels import LevyKernel, MixtureKernel, TestFunctionFamily, TruncationFunction
from markov_mimic.paths import TimeGrid
from markov_mimic.scenarios import CharBatch, OracleRule, Scenario
from markov_mimic.simulate import ParticleEnsemble

__all__ = [
    "ConditioningScheme",
    "ProjectedCharacteristics",
    "ProjectionSlice",
    "TestFunctionFamily",
    "estimate",
    "khat_probe",
    "oracle",
    "sample_jump",
]


@dataclass(frozen=True)
class ConditioningScheme:
    """How to discretize ``(t, Z_t)``.

    ``n_bins`` is per state dimension (an int applies to all). A dimension
    with at most ``n_bins`` distinct values gets one bin per value.
    """

    stride: int = 4
    n_bins: int | tuple[int, ...] = 30
    min_bin_count: int = 50
    degenerate_tol: float = 1e-9

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.min_bin_count < 1:
            raise ValueError("min_bin_count must be positive")
        nb = (self.n_bins,) if isinstance(self.n_bins, int) else tuple(self.n_bins)
        if any(k < 1 for k in nb):
            raise ValueError("n_bins must be positive")

    def bins_for(self, dim: int) -> tuple[int, ...]:
        if isinstance(self.n_bins, int):
            return (self.n_bins,) * dim
        if len(self.n_bins) != dim:
            raise ValueError(f"n_bins has {len(self.n_bins)} entries for a {dim}-dimensional state")
        return tuple(self.n_bins)


def bin_edges(x: np.ndarray, n_bins: int, degenerate_tol: float = 1e-9) -> np.ndarray:
    """Interior bin edges for one coordinate.

    Discrete-looking data (at most ``n_bins`` distinct values) gets an edge
    between each pair of neighbouring values; otherwise quantile edges,
    deduplicated. A coordinate with range below ``degenerate_tol`` gets none.
    """
    if x.size == 0 or np.ptp(x) < degenerate_tol:
        return np.zeros(0)
    vals = np.unique(x)
    if len(vals) <= n_bins:
        return 0.5 * (vals[:-1] + vals[1:])
    q = np.quantile(x, np.arange(1, n_bins) / n_bins)
    q = np.unique(q)
    # an edge at the minimum would leave the first bin empty
    return q[q > vals[0]]


def _cell_multi_index(edges: list[np.ndarray], z: np.ndarray) -> list[np.ndarray]:
    return [np.searchsorted(e, z[:, j], side="right") for j, e in enumerate(edges)]


@dataclass
class ProjectionSlice:
    step: int
    t: float
    edges: list
    cell_to_bin: np.ndarray
    data_lo: np.ndarray
    data_hi: np.ndarray
    bin_cell: np.ndarray
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    centroid: np.ndarray
    count: np.ndarray
    b_hat: np.ndarray
    c_hat: np.ndarray
    kernel_locs: np.ndarray
    kernel_rates: np.ndarray
    member_bin: np.ndarray
    member_kernel: np.ndarray
    weight: np.ndarray
    c_clip: float = 0.0
    flat_locs: np.ndarray = field(default=None, repr=False)
    flat_rates: np.ndarray = field(default=None, repr=False)

    @property
    def n_bins(self) -> int:
        return len(self.count)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(e) + 1 for e in self.edges)

    @property
    def total_rate(self) -> np.ndarray:
        """Per-bin ``κ̂`` mass: weighted mean of member total rates."""
        member_rate = self.kernel_rates.sum(axis=1)[self.member_kernel]
        return np.bincount(self.member_bin, weights=self.weight * member_rate, minlength=self.n_bins)

    def bins_of(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bin index of each state and whether it lies outside the fitted range."""
        z = np.atleast_2d(z)
        if z.shape[1] != len(self.edges):
            raise StateLookupError(f"state has dimension {z.shape[1]}, expected {len(self.edges)}")
        if not np.all(np.isfinite(z)):
            raise StateLookupError("non-finite state")
        cells = np.ravel_multi_index(_cell_multi_index(self.edges, z), self.shape)
        # collapsed dimensions carry no conditioning, so they never count as outside
        active = np.array([len(e) > 0 for e in self.edges])
        tol = 1e-12 * np.maximum(1.0, np.abs(self.data_hi - self.data_lo))
        off = (z < self.data_lo - tol) | (z > self.data_hi + tol)
        outside = np.any(off[:, active], axis=1)
        return self.cell_to_bin[cells], outside

    def members(self, bin_id: int) -> MixtureKernel:
        sel = np.nonzero(self.member_bin == bin_id)[0]
        d = self.b_hat.shape[1]
        kernels = []
        for k in self.member_kernel[sel]:
            keep = self.kernel_rates[k] > 0
            kernels.append(LevyKernel(self.kernel_locs[k][keep], self.kernel_rates[k][keep], d=d))
        return MixtureKernel(tuple(kernels), self.weight[sel])

    def build_flat(self, width: int | None = None):
        """Per-bin mixture flattened to one atom list with rates ``w_m λ_mj``."""
        nb = self.n_bins
        K = self.kernel_locs.shape[1]
        d = self.b_hat.shape[1]
        per_bin = np.bincount(self.member_bin, minlength=nb)
        need = int(per_bin.max()) * K if nb else 0
        width = need if width is None else width
        if width < need:
            raise ValueError("flat width too small")
        locs = np.zeros((nb, width, d))
        rates = np.zeros((nb, width))
        pos = np.zeros(nb, dtype=np.int64)
        for m in range(len(self.member_bin)):
            bn, k = self.member_bin[m], self.member_kernel[m]
            s = pos[bn]
            locs[bn, s:s + K] = self.kernel_locs[k]
            rates[bn, s:s + K] = self.weight[m] * self.kernel_rates[k]
            pos[bn] += K
        self.flat_locs, self.flat_rates = locs, rates
        return need


@dataclass
class ProjectedCharacteristics:
    """Tables of ``(b̂, ĉ, κ̂)`` over projection times and state bins.

    Lookup maps ``t`` to the latest projection time ``<= t`` and ``z`` to its
    containing bin; states outside the fitted range use the nearest bin and
    are flagged.
    """

    scenario: str
    d: int
    state_dim: int
    grid: TimeGrid
    stride: int
    truncation: TruncationFunction
    phi_name: str
    slices: list[ProjectionSlice]
    flat_width: int = 0

    def __post_init__(self):
        if not self.slices:
            raise EstimationError("no projection times")
        need = max(s.build_flat() for s in self.slices)
        self.flat_width = need
        for s in self.slices:
            s.build_flat(need)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.slices])

    def slice_at(self, t: float) -> ProjectionSlice:
        if t < -1e-12:
            raise StateLookupError(f"negative time {t}")
        k = int(np.searchsorted(self.times, t + 1e-9 * self.grid.dt, side="right")) - 1
        return self.slices[max(k, 0)]

    def lookup(self, t: float, z) -> tuple[ProjectionSlice, np.ndarray, np.ndarray]:
        sl = self.slice_at(t)
        bins, outside = sl.bins_of(np.atleast_2d(np.asarray(z, dtype=float)))
        return sl, bins, outside

    def evaluate(self, t: float, z, latent=None) -> CharBatch:
        sl, bins, outside = self.lookup(t, z)
        return CharBatch(
            sl.b_hat[bins], sl.c_hat[bins], sl.flat_locs[bins], sl.flat_rates[bins], outside
        )

    __call__ = evaluate

    def mixture(self, t: float, z) -> MixtureKernel:
        sl, bins, _ = self.lookup(t, z)
        return sl.members(int(bins[0]))


def _anchor_assignment(cell_centroid, counts, min_count, scale):
    anchors = np.nonzero(counts >= min_count)[0]
    if len(anchors) == 0:
        raise EstimationError(
            f"every bin holds fewer than {min_count} particles (largest: {int(counts.max())})"
        )
    diff = (cell_centroid[:, None, :] - cell_centroid[None, anchors, :]) / scale
    dist = np.sum(diff**2, axis=2)
    # argmin returns the first minimum: ties go to the lower anchor index
    nearest = np.argmin(dist, axis=1)
    cell_to_bin = nearest.copy()
    cell_to_bin[anchors] = np.arange(len(anchors))
    return anchors, cell_to_bin


def _psd_clip(c: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = np.linalg.eigh(c)
    bad = w.min(axis=1) < 0
    if not np.any(bad):
        return c, 0.0
    fixed = c.copy()
    fixed[bad] = np.einsum("nij,nj,nkj->nik", v[bad], np.maximum(w[bad], 0.0), v[bad])
    return fixed, float(np.abs(fixed - c).max())


def _estimate_slice(ens: ParticleEnsemble, rec: int, scheme: ConditioningScheme) -> ProjectionSlice:
    zs = ens.Z[rec]
    n, e = zs.shape
    d = ens.d
    nbins = scheme.bins_for(e)
    edges = [bin_edges(zs[:, j], nbins[j], scheme.degenerate_tol) for j in range(e)]
    shape = tuple(len(x) + 1 for x in edges)
    n_cells = int(np.prod(shape))
    cells = np.ravel_multi_index(_cell_multi_index(edges, zs), shape)
    counts = np.bincount(cells, minlength=n_cells)

    lo, hi = zs.min(axis=0), zs.max(axis=0)
    scale = np.where(hi - lo > scheme.degenerate_tol, hi - lo, 1.0)
    grid_idx = np.unravel_index(np.arange(n_cells), shape)
    box_lo = np.empty((n_cells, e))
    box_hi = np.empty((n_cells, e))
    for j in range(e):
        ext = np.concatenate([[-np.inf], edges[j], [np.inf]])
        box_lo[:, j] = ext[grid_idx[j]]
        box_hi[:, j] = ext[grid_idx[j] + 1]
    mids = 0.5 * (np.maximum(box_lo, lo) + np.minimum(box_hi, hi))
    sums = np.stack([np.bincount(cells, weights=zs[:, j], minlength=n_cells) for j in range(e)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cell_centroid = np.where(counts[:, None] > 0, sums / counts[:, None], mids)
    anchors, cell_to_bin = _anchor_assignment(cell_centroid, counts, scheme.min_bin_count, scale)

    nb = len(anchors)
    bins = cell_to_bin[cells]
    count = np.bincount(bins, minlength=nb).astype(float)

    def bin_mean(vals):
        flat = vals.reshape(n, -1)
        out = np.stack([np.bincount(bins, weights=flat[:, k], minlength=nb) for k in range(flat.shape[1])], axis=1)
        return (out / count[:, None]).reshape((nb,) + vals.shape[1:])

    centroid = bin_mean(zs)
    b_hat = bin_mean(ens.b[rec])
    c_hat, c_clip = _psd_clip(bin_mean(ens.c[rec]))

    locs = ens.kernel_locs[rec]
    rates = ens.kernel_rates[rec]
    K = locs.shape[1]
    locs = np.where((rates > 0)[:, :, None], locs, 0.0)
    rows = np.concatenate([locs.reshape(n, K * d), rates], axis=1)
    uniq, kid = np.unique(rows, axis=0, return_inverse=True)
    kid = kid.reshape(-1)
    nk = len(uniq)
    pair, pair_count = np.unique(bins.astype(np.int64) * nk + kid, return_counts=True)
    member_bin = pair // nk
    member_kernel = pair % nk
    weight = pair_count / count[member_bin]

    return ProjectionSlice(
        step=int(ens.record_steps[rec]),
        t=float(ens.times[rec]),
        edges=edges,
        cell_to_bin=cell_to_bin,
        data_lo=lo,
        data_hi=hi,
        bin_cell=anchors,
        bin_lo=box_lo[anchors],
        bin_hi=box_hi[anchors],
        centroid=centroid,
        count=count.astype(np.int64),
        b_hat=b_hat,
        c_hat=c_hat,
        kernel_locs=uniq[:, : K * d].reshape(nk, K, d),
        kernel_rates=uniq[:, K * d:],
        member_bin=member_bin,
        member_kernel=member_kernel,
        weight=weight,
        c_clip=c_clip,
    )


def estimate(ens: ParticleEnsemble, scheme: ConditioningScheme | None = None) -> ProjectedCharacteristics:
    """Regress realized characteristics on ``Z_t`` at every ``scheme.stride``-th grid step."""
    scheme = scheme or ConditioningScheme()
    if ens.n_particles == 0:
        raise ValueError("empty ensemble")
    if not ens.stores_characteristics:
        raise ValueError("ensemble was simulated without stored characteristics")
    if scheme.stride % ens.config.record_stride:
        raise ValueError(
            f"projection stride {scheme.stride} is not a multiple of record_stride {ens.config.record_stride}"
        )
    recs = np.nonzero(ens.record_steps % scheme.stride == 0)[0]
    slices = [_estimate_slice(ens, int(r), scheme) for r in recs]
    return ProjectedCharacteristics(
        scenario=ens.scenario, d=ens.d, state_dim=ens.state_dim, grid=ens.grid,
        stride=scheme.stride, truncation=ens.truncation, phi_name=ens.phi.name, slices=slices,
    )


def oracle(scn: Scenario) -> OracleRule:
    """Closed-form projected characteristics of a built-in scenario."""
    if scn.oracle is None:
        raise UnsupportedScenarioError(f"scenario {scn.name!r} has no closed-form projection")
    return scn.oracle


def _mixture_at(pc, t: float, z) -> MixtureKernel:
    if isinstance(pc, ProjectedCharacteristics):
        return pc.mixture(t, z)
    if isinstance(pc, (OracleRule, Scenario)):
        rule = pc.oracle if isinstance(pc, Scenario) else pc
        batch = rule(t, np.atleast_2d(np.asarray(z, dtype=float)))
        return MixtureKernel((batch.kernel(0),), np.ones(1))
    raise TypeError(f"cannot resolve kernels from {type(pc).__name__}")


def khat_probe(pc, t: float, z, family: TestFunctionFamily) -> np.ndarray:
    """``∫ f dκ̂(t, z, ·)`` for every member of ``family``.

    Each integral is the weight-averaged integral over mixture members.
    """
    mix = _mixture_at(pc, t, z)
    out = np.zeros(len(family))
    for k, w in zip(mix.members, mix.weights):
        locs, rates = k.quadrature_atoms()
        if len(rates):
            out += w * (rates @ family(locs))
    return out


def sample_jump(pc, t: float, z, rng: np.random.Generator):
    """Total rate of ``κ̂(t, z, ·)`` and a mark sampler.

    The sampler picks a member with probability ``weight * rate / total`` and
    then a mark from that member's normalized law. With zero total rate it
    returns an empty ``(0, d)`` array.
    """
    mix = _mixture_at(pc, t, z)
    total = mix.total_rate
    if total <= 0:
        d = mix.members[0].d
        return 0.0, lambda: np.zeros((0, d))
    return total, lambda: mix.sample(rng)
