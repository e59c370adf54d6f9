"""Simulation of the mimicking process from projected characteristics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from markov_mimic.projector import ProjectedCharacteristics
from markov_mimic.rng import STREAM_MIMIC
from markov_mimic.scenarios import OracleRule, Scenario
from markov_mimic.simulate import EngineSpec, ParticleEnsemble, SimConfig, run_engine
from markov_mimic.kernels import TestFunctionFamily


@dataclass(frozen=True)
class MimicSource:
    """Projected coefficients plus the source's updating function and ``Z_0`` law."""

    kind: str
    scenario: Scenario
    table: ProjectedCharacteristics | None = None
    rule: OracleRule | None = None

    @classmethod
    def from_oracle(cls, scn: Scenario) -> "MimicSource":
        from markov_mimic.projector import oracle

        return cls("oracle", scn, rule=oracle(scn))

    @classmethod
    def from_projection(cls, pc: ProjectedCharacteristics, scn: Scenario) -> "MimicSource":
        if pc.d != scn.d or pc.state_dim != scn.state_dim:
            raise ValueError("projection table does not match the scenario dimensions")
        if pc.phi_name != scn.phi.name:
            raise ValueError(f"projection was fitted under {pc.phi_name}, scenario uses {scn.phi.name}")
        return cls("estimated", scn, table=pc)

    @property
    def n_atoms(self) -> int:
        return self.table.flat_width if self.table is not None else self.rule.n_atoms

    def provider(self, t, z, latent=None):
        if self.table is not None:
            return self.table.evaluate(t, z)
        return self.rule(t, z)


def simulate_mimic(src: MimicSource, cfg: SimConfig, threads: int = 1,
                   family: TestFunctionFamily | None = None) -> ParticleEnsemble:
    """Simulate ``(Ẑ_0, Ŷ)`` with coefficients ``(b̂, ĉ, κ̂)(t, Ẑ_t)``.

    Uses the same scheme as the source run on an independent random stream.
    Lookups outside the fitted range fall back to the nearest bin and are
    counted; the ensemble is flagged when they exceed 1% of evaluations.
    """
    scn = src.scenario
    engine = EngineSpec(
        name=scn.name, source_kind=src.kind, d=scn.d, phi=scn.phi,
        provider=src.provider, n_atoms=src.n_atoms, truncation=scn.truncation,
        sample_z0=scn.sample_z0, sample_latent=lambda u: None, bounds=scn.bounds,
    )
    ens = run_engine(engine, cfg, STREAM_MIMIC, threads, family)
    ens.meta["scenario_config"] = scn.to_config()
    return ens


@dataclass
class StructureReport:
    n_jumps: int
    violations: int
    max_error: float

    @property
    def fraction(self) -> float:
        return self.violations / self.n_jumps if self.n_jumps else 0.0


def check_structure_preservation(ens: ParticleEnsemble, tol: float = 1e-10) -> StructureReport:
    """Count jumps breaking ``ΔY₂ = Y₁(pre-jump) · ΔY₁``."""
    if ens.d != 2:
        raise ValueError("structure check needs a two-dimensional ensemble")
    jr = ens.jumps
    if len(jr) == 0:
        return StructureReport(0, 0, 0.0)
    err = np.abs(jr.xi[:, 1] - jr.y_pre[:, 0] * jr.xi[:, 0])
    bad = err > tol * np.maximum(1.0, np.abs(jr.xi[:, 1]))
    return StructureReport(len(jr), int(bad.sum()), float(err.max()))
