"""Command-line pipeline: simulate, project, mimic, validate.

Every command writes a ``manifest.json`` next to its CSV outputs. It records
the effective configuration with its hash, plus hashes of every input and
output file.

Exit codes: 0 pass, 1 validation failure, 2 usage or configuration error,
3 scenario or runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from copy import deepcopy
from pathlib import Path

import jsonschema

from markov_mimic import __version__
from markov_mimic.errors import (
    EstimationError,
    GridAlignmentError,
    ScenarioError,
    UnsupportedScenarioError,
)
from markov_mimic.mimic import MimicSource, simulate_mimic
from markov_mimic.paths import TimeGrid
from markov_mimic.projector import ConditioningScheme, estimate
from markov_mimic.scenarios import SCENARIO_KINDS, Scenario, builtin_scenario
from markov_mimic.simulate import ParticleEnsemble, SimConfig, simulate_ensemble
from markov_mimic import storage
from markov_mimic.validator import compare_marginals, compensator_probe, default_windows, martingale_residuals

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3

_POS = {"type": "number", "exclusiveMinimum": 0}
_OPT_POS = {"anyOf": [_POS, {"type": "null"}]}
_COUNT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "markov_mimic run configuration",
    "type": "object",
    "required": ["scenario", "sim"],
    "additionalProperties": False,
    "properties": {
        "scenario": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(SCENARIO_KINDS)},
                "params": {"type": "object"},
            },
        },
        "sim": {
            "type": "object",
            "required": ["n_particles", "dt", "horizon"],
            "additionalProperties": False,
            "properties": {
                "n_particles": _COUNT,
                "dt": _POS,
                "horizon": _POS,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "record_stride": _COUNT,
                "accumulate": {"type": "boolean"},
            },
        },
        "projection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "stride": _COUNT,
                "n_bins": {"anyOf": [_COUNT, {"type": "array", "items": _COUNT, "minItems": 1}]},
                "min_bin_count": _COUNT,
            },
        },
        "validation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "ks_tol": _OPT_POS,
                "tv_tol": _OPT_POS,
                "w1_tol": _OPT_POS,
                "n_windows": _COUNT,
                "z_max": _POS,
            },
        },
        "output": {"type": "string"},
        "use_oracle": {"type": "boolean"},
    },
}

DEFAULTS = {
    "sim": {"seed": 0, "record_stride": 1, "accumulate": True},
    "projection": {"stride": 4, "n_bins": 30, "min_bin_count": 50},
    "validation": {"ks_tol": None, "tv_tol": 0.02, "w1_tol": None, "n_windows": 20, "z_max": 4.0},
    "use_oracle": False,
}


class ConfigError(ValueError):
    """Unreadable, schema-invalid or inconsistent configuration."""


class RunConfig:
    """Validated configuration with defaults filled in."""

    def __init__(self, raw: dict, source: Path | None = None):
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config error at {where}: {exc.message}") from None
        self.raw = deepcopy(raw)
        self.source = source
        cfg = deepcopy(raw)
        for key, defaults in DEFAULTS.items():
            if isinstance(defaults, dict):
                cfg[key] = {**defaults, **cfg.get(key, {})}
            else:
                cfg.setdefault(key, defaults)
        cfg["scenario"].setdefault("params", {})
        self.cfg = cfg
        try:
            self.grid = TimeGrid.from_horizon(cfg["sim"]["horizon"], cfg["sim"]["dt"])
        except (GridAlignmentError, ValueError) as exc:
            raise ConfigError(f"sim: {exc}") from None
        if self.grid.n_steps % cfg["sim"]["record_stride"]:
            raise ConfigError(f"sim.record_stride={cfg['sim']['record_stride']} must divide {self.grid.n_steps} steps")
        if cfg["projection"]["stride"] % cfg["sim"]["record_stride"]:
            raise ConfigError("projection.stride must be a multiple of sim.record_stride")
        cfg["validation"].setdefault("times", [self.grid.horizon / 2, self.grid.horizon])

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls(raw, path)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        raw = deepcopy(self.raw)
        raw["sim"]["seed"] = seed
        return RunConfig(raw, self.source)

    @property
    def seed(self) -> int:
        return int(self.cfg["sim"]["seed"])

    def scenario(self) -> Scenario:
        sc = self.cfg["scenario"]
        try:
            return builtin_scenario(sc["kind"], sc["params"])
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"scenario {sc['kind']}: {exc}") from exc

    def sim_config(self) -> SimConfig:
        s = self.cfg["sim"]
        return SimConfig(n_particles=s["n_particles"], grid=self.grid, seed=s["seed"],
                         record_stride=s["record_stride"], accumulate=s["accumulate"])

    def scheme(self) -> ConditioningScheme:
        p = self.cfg["projection"]
        nb = p["n_bins"] if isinstance(p["n_bins"], int) else tuple(p["n_bins"])
        return ConditioningScheme(stride=p["stride"], n_bins=nb, min_bin_count=p["min_bin_count"])


def _manifest(command: str, rc: RunConfig, out: Path, outputs: list[str], inputs: dict[str, Path], extra=None) -> dict:
    payload = {
        "tool": "markov_mimic",
        "version": __version__,
        "command": command,
        "config": rc.cfg,
        "config_sha256": storage.config_hash(rc.cfg),
        "seed": rc.seed,
        "dt": rc.cfg["sim"]["dt"],
        "n_particles": rc.cfg["sim"]["n_particles"],
        "inputs": {k: storage.sha256_file(p) for k, p in sorted(inputs.items())},
        "outputs": {f: storage.sha256_file(out / f) for f in sorted(outputs)},
    }
    if extra:
        payload.update(extra)
    storage.write_manifest(out, payload)
    return payload


def _input_hashes(role: str, src: Path) -> dict[str, Path]:
    return {f"{role}/{p.name}": p for p in sorted(src.iterdir()) if p.suffix == ".csv"}


def _config_inputs(rc: RunConfig) -> dict[str, Path]:
    return {f"config/{rc.source.name}": rc.source} if rc.source is not None else {}


def _summary(out: Path, lines: list[str]) -> str:
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return "summary.txt"


def _ensemble_summary(ens: ParticleEnsemble) -> list[str]:
    s = ens.summary()
    lines = [f"{k}: {v}" for k, v in s.items()]
    if ens.flagged:
        lines.append(f"WARNING {100 * ens.outside_fraction:.2f}% of coefficient lookups fell outside the fitted state range")
    return lines


def _write_ensemble_dir(command: str, ens: ParticleEnsemble, rc: RunConfig, out: Path, inputs: dict) -> None:
    files = storage.write_ensemble(ens, out)
    files.append(_summary(out, _ensemble_summary(ens)))
    _manifest(command, rc, out, files, {**_config_inputs(rc), **inputs},
              {"source_kind": ens.source_kind, "outside_fraction": ens.outside_fraction, "flagged": ens.flagged})


def _load_ensemble(src: Path) -> tuple[ParticleEnsemble, RunConfig]:
    if not src.is_dir():
        raise storage.MissingInputError(f"ensemble directory {src} does not exist")
    man = storage.read_manifest(src)
    rc = RunConfig(man["config"])
    scn = rc.scenario()
    try:
        ens = storage.read_ensemble(src, rc.sim_config(), scn.phi.name, scn.truncation.r, scn.name)
    except ValueError as exc:
        raise ConfigError(f"cannot read ensemble in {src}: {exc}") from None
    return ens, rc


def _threads(n: int | None) -> int:
    return max(1, n if n is not None else (os.cpu_count() or 1))


# --- commands ----------------------------------------------------------------

def cmd_simulate(rc: RunConfig, out: Path, threads: int) -> int:
    scn = rc.scenario()
    ens = simulate_ensemble(scn, rc.sim_config(), threads=threads)
    _write_ensemble_dir("simulate", ens, rc, out, {})
    return EXIT_PASS


def cmd_project(ens_dir: Path, rc: RunConfig | None, out: Path) -> int:
    ens, ens_rc = _load_ensemble(ens_dir)
    rc = rc or ens_rc
    pc = estimate(ens, rc.scheme())
    out.mkdir(parents=True, exist_ok=True)
    files = storage.write_projection(pc, out)
    lines = [f"scenario: {pc.scenario}", f"projection times: {len(pc.slices)}",
             f"bins per time: min {min(s.n_bins for s in pc.slices)}, max {max(s.n_bins for s in pc.slices)}",
             f"largest PSD correction: {max(s.c_clip for s in pc.slices):.3g}"]
    files.append(_summary(out, lines))
    meta = {"projection": {"d": pc.d, "state_dim": pc.state_dim, "phi": pc.phi_name, "stride": pc.stride,
                           "truncation": pc.truncation.r, "scenario": pc.scenario,
                           "dt": ens.grid.dt, "n_steps": ens.grid.n_steps},
            "ensemble_config": ens_rc.cfg}
    _manifest("project", rc, out, files, {**_config_inputs(rc), **_input_hashes("ensemble", ens_dir)}, meta)
    return EXIT_PASS


def cmd_mimic(proj_dir: Path | None, rc: RunConfig, out: Path, threads: int, use_oracle: bool) -> int:
    scn = rc.scenario()
    inputs = {}
    if use_oracle:
        src = MimicSource.from_oracle(scn)
    else:
        if proj_dir is None:
            raise ConfigError("mimic needs a projection directory or --oracle")
        if not proj_dir.is_dir():
            raise storage.MissingInputError(f"projection directory {proj_dir} does not exist")
        meta = storage.read_manifest(proj_dir).get("projection")
        if meta is None:
            raise storage.MissingInputError(f"{proj_dir} does not hold a projection")
        grid = TimeGrid(meta["dt"], meta["n_steps"])
        pc = storage.read_projection(proj_dir, grid, meta["stride"], meta["d"], meta["state_dim"],
                                     meta["truncation"], meta["phi"], meta["scenario"])
        try:
            src = MimicSource.from_projection(pc, scn)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        inputs = _input_hashes("projection", proj_dir)
    ens = simulate_mimic(src, rc.sim_config(), threads=threads)
    _write_ensemble_dir("mimic", ens, rc, out, inputs)
    return EXIT_PASS


_MARGINAL_COLS = ["t", "coord", "n_a", "n_b", "ks", "ks_tol", "w1", "w1_tol", "tv", "tv_tol", "pass"]
_MARTINGALE_COLS = ["ensemble", "process", "component", "t_start", "t_end", "mean", "se", "z"]
_PROBE_COLS = ["t", "member", "mean_a", "mean_b", "diff", "rel_diff", "se", "z"]


def cmd_validate(dir_a: Path, dir_b: Path, rc: RunConfig | None, out: Path) -> int:
    ens_a, rc_a = _load_ensemble(dir_a)
    ens_b, _ = _load_ensemble(dir_b)
    rc = rc or rc_a
    v = rc.cfg["validation"]
    if ens_a.state_dim != ens_b.state_dim:
        raise ConfigError(f"state dimensions differ: {ens_a.state_dim} vs {ens_b.state_dim}")
    times = v["times"]
    for t in times:
        try:
            ens_a.record_index(t)
            ens_b.record_index(t)
        except (GridAlignmentError, ValueError) as exc:
            raise ConfigError(f"validation time {t}: {exc}") from None
    tol = {k: v[f"{k}_tol"] for k in ("ks", "tv", "w1") if v[f"{k}_tol"] is not None}
    marg = compare_marginals(ens_a, ens_b, times, tol)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_rows(out / "marginal_report.csv", marg.rows, _MARGINAL_COLS)
    files = ["marginal_report.csv"]

    lines = [f"{'PASS' if marg.passed else 'FAIL'} marginal laws ({len(marg.rows)} comparisons)"]
    lines += marg.summary_lines()
    mart_rows = []
    for tag, ens in (("a", ens_a), ("b", ens_b)):
        if ens.accumulators is None:
            continue
        rep = martingale_residuals(ens, windows=default_windows(ens, v["n_windows"]))
        mart_rows += [{"ensemble": tag, **r} for r in rep.rows]
        lines += [f"[{tag}, informational] {s}" for s in rep.summary_lines(v["z_max"])]
    storage.write_rows(out / "martingale_report.csv", mart_rows, _MARTINGALE_COLS)
    files.append("martingale_report.csv")
    if ens_a.accumulators is not None and ens_b.accumulators is not None and ens_a.d == ens_b.d:
        probe = compensator_probe(ens_a, ens_b, None, times)
        storage.write_rows(out / "compensator_report.csv", probe, _PROBE_COLS)
        files.append("compensator_report.csv")
    for tag, ens in (("a", ens_a), ("b", ens_b)):
        if ens.source_kind == "estimated":
            lines.append(f"[{tag}] estimated mimic: {100 * ens.outside_fraction:.2f}% lookups outside fitted range")
    files.append(_summary(out, lines))
    _manifest("validate", rc, out, files,
              {**_config_inputs(rc), **_input_hashes("ensemble_a", dir_a), **_input_hashes("ensemble_b", dir_b)},
              {"passed": marg.passed})
    for line in lines[:1]:
        print(line)
    return EXIT_PASS if marg.passed else EXIT_FAIL


def cmd_pipeline(rc: RunConfig, out: Path, threads: int, use_oracle: bool) -> int:
    source, proj, mim, val = out / "source", out / "projection", out / "mimic", out / "validation"
    cmd_simulate(rc, source, threads)
    if use_oracle:
        cmd_mimic(None, rc, mim, threads, True)
    else:
        cmd_project(source, rc, proj)
        cmd_mimic(proj, rc, mim, threads, False)
    code = cmd_validate(source, mim, rc, val)
    stages = [source, mim, val] if use_oracle else [source, proj, mim, val]
    _manifest("pipeline", rc, out, [], _config_inputs(rc),
              {"stages": {p.name: storage.sha256_file(p / "manifest.json") for p in stages},
               "use_oracle": use_oracle, "passed": code == EXIT_PASS})
    return code


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markov-mimic", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True, oracle=False):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: config 'output' or ./out)")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        if oracle:
            p.add_argument("--oracle", action="store_true", help="use closed-form projected characteristics")
        return p

    common(sub.add_parser("simulate", help="simulate the source ensemble"))
    p = common(sub.add_parser("project", help="estimate projected characteristics"), config_required=False)
    p.add_argument("ensemble", help="directory written by 'simulate'")
    p = common(sub.add_parser("mimic", help="simulate the mimicking process"), oracle=True)
    p.add_argument("projection", nargs="?", help="directory written by 'project'")
    p = common(sub.add_parser("validate", help="compare two ensembles"), config_required=False)
    p.add_argument("ensemble_a")
    p.add_argument("ensemble_b")
    common(sub.add_parser("pipeline", help="simulate, project, mimic and validate"), oracle=True)
    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


def _out_dir(args, rc: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if rc is not None and "output" in rc.cfg:
        return Path(rc.cfg["output"])
    return Path("out")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "schema":
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_PASS
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        rc = RunConfig.load(args.config).with_seed(args.seed) if args.config else None
        out = _out_dir(args, rc)
        threads = _threads(args.threads)
        if args.command == "simulate":
            return cmd_simulate(rc, out, threads)
        if args.command == "project":
            return cmd_project(Path(args.ensemble), rc, out)
        if args.command == "mimic":
            use_oracle = args.oracle or rc.cfg["use_oracle"]
            return cmd_mimic(Path(args.projection) if args.projection else None, rc, out, threads, use_oracle)
        if args.command == "validate":
            return cmd_validate(Path(args.ensemble_a), Path(args.ensemble_b), rc, out)
        return cmd_pipeline(rc, out, threads, args.oracle or rc.cfg["use_oracle"])
    except (ConfigError, storage.MissingInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, EstimationError, UnsupportedScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
