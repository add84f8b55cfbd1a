"""Command-line front end.

Configuration is plain ``key = value`` text with the sections ``[mesh]``,
``[scheme]``, ``[noise]`` and ``[experiment]``. Every key has a default (see
``DEFAULTS``); unknown keys and sections are errors. Example::

    snse --command convergence --config configs/smoke.ini --out out/ --workers 4
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path


COMMANDS = ("mesh-info", "infsup", "stability", "convergence", "single-run", "project-rates")

# section -> key -> (type, default); the order here is the serialization order
DEFAULTS: dict[str, dict[str, tuple[str, object]]] = {
    "mesh": {
        "base_n": ("int", 4),          # divisions of the coarsest square mesh
    },
    "scheme": {
        "mu": ("float", 1.0),
        "T": ("float", 0.5),
        "steps_base": ("int", 4),      # time steps on the coarsest level
        "theta": ("float", 0.5),
        "u0_energy": ("float", 1.0),   # |u0|^2 of the initial field
        "solver": ("str", "auto"),     # auto | direct | krylov
        "R": ("optfloat", None),       # fixed truncation radius; none = quantile policy
    },
    "noise": {
        "kind": ("str", "multiplicative"),
        "J": ("int", 16),
        "decay": ("float", 2.0),       # s in gamma_k = |k|^(-2s)
        "amplitude": ("float", 1.0),
        "probe_scale": ("float", 1.0),
    },
    "experiment": {
        "N": ("int", 64),
        "levels": ("int", 3),
        "seed": ("int", 0),
        "alpha": ("float", 0.45),
        "beta": ("float", 0.9),
        "xi": ("floats", (0.01, 0.1, 1.0, 10.0)),
        "R_quantile": ("float", 0.99),
        "bootstrap": ("int", 1000),
    },
}

log = logging.getLogger("snse")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def _convert(section: str, key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optfloat":
            return None if raw.lower() == "none" else float(raw)
        if kind == "floats":
            vals = tuple(float(v) for v in raw.split(",") if v.strip())
            if not vals:
                raise ValueError("empty list")
            return vals
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from None


def _format(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind in ("float", "optfloat"):
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class Config:
    values: dict  # section -> key -> parsed value

    def get(self, section: str, key: str):
        return self.values[section][key]

    def plan(self, seed: int | None = None):
        from .harness import ExperimentPlan
        from .noise import NoiseModel

        m, s, n, e = (self.values[k] for k in ("mesh", "scheme", "noise", "experiment"))
        noise = NoiseModel(J=n["J"], decay=n["decay"], kind=n["kind"],
                           amplitude=n["amplitude"], probe_scale=n["probe_scale"])
        return ExperimentPlan(
            levels=e["levels"], base_n=m["base_n"], steps_base=s["steps_base"], N=e["N"],
            seed=e["seed"] if seed is None else seed, mu=s["mu"], T=s["T"], theta=s["theta"],
            noise=noise, u0_energy=s["u0_energy"], alpha=e["alpha"], beta=e["beta"],
            xi=e["xi"], R=s["R"], R_quantile=e["R_quantile"], bootstrap=e["bootstrap"],
            solver=s["solver"])

    def scheme_config(self, level: int | None = None):
        plan = self.plan()
        return plan.scheme_config(plan.levels if level is None else level)

    def noise_model(self):
        return self.plan().noise


def _validate(values: dict) -> None:
    s, n, e = values["scheme"], values["noise"], values["experiment"]
    checks = [
        ("mesh", "base_n", values["mesh"]["base_n"] >= 1, "must be >= 1"),
        ("scheme", "mu", s["mu"] > 0, "must be > 0"),
        ("scheme", "T", s["T"] > 0, "must be > 0"),
        ("scheme", "steps_base", s["steps_base"] >= 1, "must be >= 1"),
        ("scheme", "theta", 0.0 <= s["theta"] <= 1.0, "must lie in [0, 1]"),
        ("scheme", "u0_energy", s["u0_energy"] >= 0, "must be >= 0"),
        ("scheme", "solver", s["solver"] in ("auto", "direct", "krylov"), "must be auto, direct or krylov"),
        ("scheme", "R", s["R"] is None or s["R"] > 0, "must be > 0 or none"),
        ("noise", "kind", n["kind"] in ("additive", "multiplicative", "none"),
         "must be additive, multiplicative or none"),
        ("noise", "J", n["J"] >= 1, "must be >= 1"),
        ("noise", "decay", n["decay"] > 0, "must be > 0"),
        ("experiment", "N", e["N"] >= 1, "must be >= 1"),
        ("experiment", "levels", e["levels"] >= 1, "must be >= 1"),
        ("experiment", "seed", 0 <= e["seed"] < 2 ** 64, "must be an unsigned 64-bit integer"),
        ("experiment", "alpha", 0 < e["alpha"] < 0.5, "must lie in (0, 1/2)"),
        ("experiment", "beta", 0 < e["beta"] < 1, "must lie in (0, 1)"),
        ("experiment", "xi", all(x > 0 for x in e["xi"]), "entries must be > 0"),
        ("experiment", "R_quantile", 0 < e["R_quantile"] <= 1, "must lie in (0, 1]"),
        ("experiment", "bootstrap", e["bootstrap"] >= 0, "must be >= 0"),
    ]
    for section, key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"[{section}] {key} = {values[section][key]!r} {msg}")
    for section in values:
        for key, v in values[section].items():
            if isinstance(v, float) and not math.isfinite(v):
                raise ConfigError(f"[{section}] {key} must be finite")


def parse_config(text: str) -> Config:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (T, J, N, R)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".replace("\n", " ")) from None
    unknown = [s for s in parser.sections() if s not in DEFAULTS]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    missing = [s for s in DEFAULTS if not parser.has_section(s)]
    if missing:
        raise ConfigError(f"missing section [{missing[0]}]")
    values = {}
    for section, spec in DEFAULTS.items():
        items = dict(parser.items(section))
        extra = [k for k in items if k not in spec]
        if extra:
            raise ConfigError(f"[{section}] unknown key {extra[0]!r}")
        values[section] = {key: (_convert(section, key, kind, items[key]) if key in items else default)
                           for key, (kind, default) in spec.items()}
    _validate(values)
    return Config(values)


def serialize_config(config: Config) -> str:
    lines = []
    for section, spec in DEFAULTS.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {_format(kind, config.values[section][key])}"
                     for key, (kind, _) in spec.items())
        lines.append("")
    return "\n".join(lines)


def config_hash(config: Config) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()


# -- commands -------------------------------------------------------------------

def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _cmd_mesh_info(config, args, out):
    from .fem import DofMap
    from .mesh import mesh_hierarchy

    plan = config.plan(args.seed)
    rows = []
    for lev, mesh in enumerate(mesh_hierarchy(plan.base_n, plan.reference_level), start=1):
        dm = DofMap.build(mesh)
        rows.append([lev, plan.n(lev), mesh.n_vertices, mesh.n_triangles, mesh.n_edges,
                     repr(mesh.h_max), repr(mesh.shape_ratio), dm.velocity_dofs, dm.pressure_dofs,
                     dm.free_count])
        print(f"level {lev}: n={plan.n(lev)} vertices={mesh.n_vertices} triangles={mesh.n_triangles} "
              f"h_max={mesh.h_max:.6g} velocity_dofs={dm.velocity_dofs} pressure_dofs={dm.pressure_dofs}")
    _write_rows(out / "mesh_info.csv", ["level", "n", "vertices", "triangles", "edges", "h_max",
                                        "shape_ratio", "velocity_dofs", "pressure_dofs", "free_velocity_dofs"], rows)
    return ["mesh_info.csv"]


def _cmd_infsup(config, args, out):
    from .fem import assemble_static
    from .linsolve import infsup_constant, infsup_dense
    from .mesh import mesh_hierarchy

    plan = config.plan(args.seed)
    rows = []
    for lev, mesh in enumerate(mesh_hierarchy(plan.base_n, plan.levels), start=1):
        ops = assemble_static(mesh)
        beta = infsup_constant(ops)
        dense = infsup_dense(ops) if lev == 1 else float("nan")
        rows.append([lev, repr(plan.h(lev)), repr(beta), repr(dense)])
        extra = f" dense={dense:.12f}" if lev == 1 else ""
        print(f"level {lev}: h={plan.h(lev):.6g} beta_h={beta:.12f}{extra}")
    _write_rows(out / "infsup.csv", ["level", "h", "beta_h", "beta_h_dense"], rows)
    return ["infsup.csv"]


def _cmd_stability(config, args, out):
    from .harness import stability_report, write_stability

    report = stability_report(config.plan(args.seed), workers=args.workers)
    write_stability(report, out / "stability.csv")
    for i, lev in enumerate(report.levels):
        print(f"level {lev}: E[max|u|^2 + tau sum|grad u|^2] = {report.mean[i]:.6g} "
              f"[{report.ci_low[i]:.6g}, {report.ci_high[i]:.6g}]")
    print(f"growth flag: {report.growth_flag}")
    return ["stability.csv"]


def _cmd_convergence(config, args, out):
    from . import harness

    plan = config.plan(args.seed)
    result = harness.run_experiment(plan, workers=args.workers)
    harness.write_records(result.records, out / "records.csv")
    written = ["records.csv"]
    report = harness.estimate_rates(result.records, plan.alpha, plan.beta, plan.xi,
                                    plan.bootstrap, seed=plan.seed)
    harness.write_rates(report, out / "rates.csv")
    harness.write_exceedance(report, out / "exceedance.csv")
    written += ["rates.csv", "exceedance.csv"]
    if harness.plot_rates(report, out / "rates.svg"):
        written.append("rates.svg")
    for i, lev in enumerate(report.levels):
        print(f"level {lev}: h={report.h[i]:.6g} tau={report.tau[i]:.6g} median E={report.medians[i]:.6g}")
    print(f"slope {report.slope:.4f} CI [{report.ci[0]:.4f}, {report.ci[1]:.4f}]; "
          f"R={result.R:.6g} stopped fraction {result.stopped_fraction:.3f}; failed samples {len(result.failures)}")
    args._extra = {"R": result.R, "stopped_fraction": result.stopped_fraction,
                   "failed_samples": [i for i, _ in result.failures], "slope": report.slope}
    return written


def _cmd_single_run(config, args, out):
    from .harness import _setup, sample_fine_path
    from .noise import coarsen

    plan = config.plan(args.seed)
    lv = _setup(plan, with_reference=False)[-1]
    fine = sample_fine_path(plan, 0)
    path = coarsen(fine, plan.M_reference // plan.steps(plan.levels))
    traj = lv.scheme.run(lv.u0, path, store_every=plan.steps(plan.levels))
    traj.write_csv(out / "trajectory.csv")
    path.dump(out / "path.bin")
    print(f"level {plan.levels}: M={traj.M} final energy={traj.energy[-1]:.6g} "
          f"stability functional={traj.stability_functional():.6g} "
          f"max energy residual={traj.energy_residual.max():.3g} max |B u|={traj.div_residual.max():.3g}")
    return ["trajectory.csv", "path.bin"]


def _cmd_project_rates(config, args, out):
    from .verification import projection_study

    plan = config.plan(args.seed)
    study = projection_study(plan.base_n, max(plan.levels, 2))
    rows = [[lev, repr(h), repr(a), repr(b), repr(c)]
            for lev, (h, a, b, c) in enumerate(zip(study.h, study.l2, study.h1, study.p_l2), start=1)]
    _write_rows(out / "project_rates.csv", ["level", "h", "velocity_l2", "velocity_h1", "pressure_l2"], rows)
    print(f"velocity L2 rate {study.rate('l2'):.4f}, H1 rate {study.rate('h1'):.4f}, "
          f"pressure L2 rate {study.rate('p_l2'):.4f}")
    return ["project_rates.csv"]


HANDLERS = {
    "mesh-info": _cmd_mesh_info,
    "infsup": _cmd_infsup,
    "stability": _cmd_stability,
    "convergence": _cmd_convergence,
    "single-run": _cmd_single_run,
    "project-rates": _cmd_project_rates,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pymetis", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snse", description="Finite element experiments for stochastic Navier-Stokes.")
    p.add_argument("--command", required=True, choices=COMMANDS)
    p.add_argument("--config", type=Path, help="key = value config file (defaults if omitted)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (created if absent)")
    p.add_argument("--seed", type=int, help="master seed override (unsigned 64-bit)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sample loops")
    return p


def _fail(kind: str, message: str, command: str | None) -> int:
    message = " ".join(str(message).split())
    print(json.dumps({"error": kind, "command": command, "message": message}), file=sys.stderr)
    return 2 if kind == "ConfigError" else 1


def main(argv=None) -> int:
    level = os.environ.get("SNSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        text = args.config.read_text() if args.config else "".join(f"[{s}]\n" for s in DEFAULTS)
        config = parse_config(text)
    except (ConfigError, OSError) as exc:
        return _fail("ConfigError", exc, args.command)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        args._extra = {}
        written = HANDLERS[args.command](config, args, out)
    except Exception as exc:  # one-line report for any module error
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, exc, args.command)
    seed = config.get("experiment", "seed") if args.seed is None else args.seed
    manifest = {
        "command": args.command,
        "config_hash": config_hash(config),
        "config": serialize_config(config),
        "seed": seed,
        "workers": args.workers,
        "outputs": written,
        "versions": _versions(),
        **args._extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
