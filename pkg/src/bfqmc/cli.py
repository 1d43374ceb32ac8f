"""Command-line front end: config files, run orchestration, artifacts.

Subcommands
-----------
run      simulate every V_c in the config; per scan point writes
         profile.csv, report.json, figures, and optional checkpoints
oracle   exact-diagonalization reference for small systems, same CSV schema
compare  z-score two profile CSVs against each other (QMC vs oracle)

Config files are flat ``key = value`` text with ``#`` comments; unknown
keys are hard errors so typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import signal
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .model import ModelParams, params_hash, validate
from .observables import (
    InsufficientData,
    MeasurementReport,
    PlateauReport,
    detect_plateau,
    finalize,
)
from .sampler import (
    ChainInterrupted,
    RunPlan,
    WeightViolationError,
    load_checkpoint,
    run_chain,
    validate_plan,
)
from .ed import thermal_expectations

CSV_SCHEMA = "bfqmc-profile-v1"
REPORT_SCHEMA = "bfqmc-report-v1"
CSV_COLUMNS = (
    "site",
    "n_b", "n_b_err",
    "n_f", "n_f_err",
    "n_tot", "n_tot_err",
    "kappa_b", "kappa_b_err",
    "kappa_f", "kappa_f_err",
    "kappa_bf", "kappa_bf_err",
)


class ConfigError(Exception):
    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, round-trippable through a config file."""

    sites: int = 80
    bosons: int = 35
    fermions: int = 30
    t_b: float = 1.0
    t_f: float = 1.0
    u_bb: float = 8.0
    u_bf: float = 8.0
    v_c: tuple = (0.008,)
    temperature: float = 0.08
    trotter_slices: int = 100
    n_max: int = 4
    seed: int = 1
    chains: int = 1
    therm_sweeps: int = 10_000
    measure_sweeps: int = 20_000
    measure_interval: int = 2
    bin_size: int = 100
    plateau_density_tol: float = 0.05
    plateau_kappa_frac: float = 0.2
    plateau_min_sites: int = 5
    checkpoint_interval: int = 0
    out_dir: str = "out"
    make_plots: bool = True

    def model_params(self, v_c: float) -> ModelParams:
        return ModelParams(
            L=self.sites,
            N_b=self.bosons,
            N_f=self.fermions,
            t_b=self.t_b,
            t_f=self.t_f,
            U_bb=self.u_bb,
            U_bf=self.u_bf,
            V_c=v_c,
            T=self.temperature,
            L_tau=self.trotter_slices,
            n_max=self.n_max,
        )

    def run_plan(self) -> RunPlan:
        return RunPlan(
            seed=self.seed,
            therm_sweeps=self.therm_sweeps,
            measure_sweeps=self.measure_sweeps,
            measure_interval=self.measure_interval,
            bin_size=self.bin_size,
            chains=self.chains,
        )


_INT_KEYS = {
    "sites", "bosons", "fermions", "trotter_slices", "n_max", "seed", "chains",
    "therm_sweeps", "measure_sweeps", "measure_interval", "bin_size",
    "plateau_min_sites", "checkpoint_interval",
}
_FLOAT_KEYS = {
    "t_b", "t_f", "u_bb", "u_bf", "temperature",
    "plateau_density_tol", "plateau_kappa_frac",
}
_ALL_KEYS = [f.name for f in fields(RunConfig)]


def parse_config(text: str) -> RunConfig:
    """Parse flat key = value text; collects every error with its line number."""
    values: dict = {}
    errors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _ALL_KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        try:
            if key in _INT_KEYS:
                values[key] = int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key == "v_c":
                values[key] = tuple(float(x) for x in val.split(","))
            elif key == "make_plots":
                if val not in ("true", "false"):
                    raise ValueError("expected true or false")
                values[key] = val == "true"
            else:  # out_dir
                values[key] = val
        except ValueError as exc:
            errors.append(f"line {lineno}: bad value for {key!r}: {exc}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(**values)


def serialize_config(rc: RunConfig) -> str:
    """Canonical text form; parse(serialize(parse(x))) == parse(x)."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(rc, f.name)
        if f.name == "v_c":
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"])
    return parse_config(text)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_profile_csv(path, params: ModelParams, rows: dict, kind: str) -> None:
    """CSV with a versioned schema comment; floats use round-trip repr so
    identical results produce byte-identical files."""
    with open(path, "w") as f:
        f.write(f"# {CSV_SCHEMA} params={params_hash(params)} kind={kind}\n")
        f.write(",".join(CSV_COLUMNS) + "\n")
        for i in range(params.L):
            vals = [str(i)] + [_fmt(rows[c][i]) for c in CSV_COLUMNS[1:]]
            f.write(",".join(vals) + "\n")


def read_profile_csv(path) -> dict:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith(f"# {CSV_SCHEMA} "):
            raise ValueError(f"{path}: missing or unsupported schema header")
        meta = dict(part.split("=", 1) for part in header[2:].split()[1:])
        cols = f.readline().strip().split(",")
        if tuple(cols) != CSV_COLUMNS:
            raise ValueError(f"{path}: column set does not match {CSV_SCHEMA}")
        data = {c: [] for c in cols}
        for line in f:
            parts = line.strip().split(",")
            for c, v in zip(cols, parts):
                data[c].append(float(v))
    out = {c: np.array(v) for c, v in data.items()}
    out["_params_hash"] = meta["params"]
    out["_kind"] = meta.get("kind", "unknown")
    return out


def report_rows(rep: MeasurementReport) -> dict:
    return {
        "n_b": rep.n_b, "n_b_err": rep.n_b_err,
        "n_f": rep.n_f, "n_f_err": rep.n_f_err,
        "n_tot": rep.n_tot, "n_tot_err": rep.n_tot_err,
        "kappa_b": rep.kappa_b, "kappa_b_err": rep.kappa_b_err,
        "kappa_f": rep.kappa_f, "kappa_f_err": rep.kappa_f_err,
        "kappa_bf": rep.kappa_bf, "kappa_bf_err": rep.kappa_bf_err,
    }


def oracle_rows(ed) -> dict:
    zero = np.zeros_like(ed.n_b)
    return {
        "n_b": ed.n_b, "n_b_err": zero,
        "n_f": ed.n_f, "n_f_err": zero,
        "n_tot": ed.n_tot, "n_tot_err": zero,
        "kappa_b": ed.kappa_b, "kappa_b_err": zero,
        "kappa_f": ed.kappa_f, "kappa_f_err": zero,
        "kappa_bf": ed.kappa_bf, "kappa_bf_err": zero,
    }


def _plateau_dicts(pl: PlateauReport) -> list:
    return [
        {
            "m": r.m,
            "start": r.start,
            "end": r.end,
            "n_sites": r.n_sites,
            "mean_n_b": r.mean_n_b,
            "mean_n_f": r.mean_n_f,
            "mixed_mott": r.mixed_mott,
        }
        for r in pl.runs
    ]


def build_report_json(rc: RunConfig, params: ModelParams, rep: MeasurementReport,
                      plateaus: PlateauReport, runtime: dict) -> dict:
    rows = report_rows(rep)
    results = {
        "sites": list(range(params.L)),
        **{k: [float(x) for x in v] for k, v in rows.items()},
        "cov_bf": [float(x) for x in rep.cov_bf],
        "cov_bf_err": [float(x) for x in rep.cov_bf_err],
        "plateaus": _plateau_dicts(plateaus),
        "plateau_thresholds": {
            "density_tol": plateaus.density_tol,
            "kappa_frac": plateaus.kappa_frac,
            "min_sites": plateaus.min_sites,
        },
        "acceptance": rep.acceptance,
        "tau_int": {k: float(v) for k, v in rep.tau_int.items()},
        "saturation_fraction": rep.saturation_fraction,
        "saturation_warning": rep.saturation_warning,
        "n_bins": rep.n_bins,
        "bin_size": rep.bin_size,
        "n_measurements": rep.n_measurements,
        "sum_n_b": float(rep.n_b.sum()),
        "sum_n_f": float(rep.n_f.sum()),
    }
    return {
        "format": REPORT_SCHEMA,
        "params": asdict(params),
        "params_hash": params_hash(params),
        "config": asdict(rc),
        "results": results,
        "runtime": runtime,
    }


def _point_dir(out_dir: Path, v_c: float) -> Path:
    return out_dir / f"vc_{v_c:g}"


def run_point(rc: RunConfig, v_c: float, out_dir: Path, resume=None, stop_flag=None) -> dict:
    """Simulate one V_c value and write its artifact set; returns a summary."""
    params = rc.model_params(v_c)
    plan = rc.run_plan()
    point_dir = _point_dir(out_dir, v_c)
    point_dir.mkdir(parents=True, exist_ok=True)
    ckpt = point_dir / "checkpoint.json" if (rc.checkpoint_interval > 0 or resume or stop_flag) else None

    t0 = time.monotonic()
    if plan.chains == 1:
        acc = run_chain(
            params, plan,
            checkpoint_path=ckpt,
            checkpoint_interval=rc.checkpoint_interval,
            resume_from=resume,
            stop_flag=stop_flag,
        )
    else:
        if resume is not None:
            raise ValueError("checkpoint resume supports chains = 1 only")
        acc = None
        for c in range(plan.chains):
            part = run_chain(
                params, plan, chain_index=c,
                checkpoint_path=(point_dir / f"checkpoint_chain{c}.json" if rc.checkpoint_interval > 0 else None),
                checkpoint_interval=rc.checkpoint_interval,
                stop_flag=stop_flag,
            )
            if acc is None:
                acc = part
            else:
                acc.merge(part)
    wall = time.monotonic() - t0

    rep = finalize(acc)
    plateaus = detect_plateau(
        rep,
        density_tol=rc.plateau_density_tol,
        kappa_frac=rc.plateau_kappa_frac,
        min_sites=rc.plateau_min_sites,
    )
    runtime = {
        "wall_seconds": wall,
        "rng": "PCG64",
        "seed": plan.seed,
        "resumed_from": str(resume) if resume else None,
    }
    write_profile_csv(point_dir / "profile.csv", params, report_rows(rep), kind="qmc")
    report = build_report_json(rc, params, rep, plateaus, runtime)
    with open(point_dir / "report.json", "w") as f:
        json.dump(report, f, indent=2)
    if rc.make_plots:
        from . import plotting

        plotting.save_profile_figure(
            report_rows(rep), point_dir / "profile.png",
            title=f"V_c = {v_c:g}", plateaus=_plateau_dicts(plateaus),
        )
        plotting.save_compressibility_figure(
            report_rows(rep), point_dir / "compressibility.png", title=f"V_c = {v_c:g}",
        )
    return {
        "v_c": v_c,
        "dir": str(point_dir),
        "plateaus": _plateau_dicts(plateaus),
        "saturation_warning": rep.saturation_warning,
        "wall_seconds": wall,
    }


def _validate_for_run(rc: RunConfig) -> list[str]:
    errors = []
    for v in rc.v_c:
        errors.extend(f"v_c={v:g}: {msg}" for msg in validate(rc.model_params(v)))
    errors.extend(validate_plan(rc.run_plan()))
    return errors


def cmd_run(args) -> int:
    try:
        rc = load_config(args.config)
    except ConfigError as exc:
        print("config errors:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        rc = replace(rc, seed=args.seed)
    if args.sweeps is not None:
        rc = replace(rc, measure_sweeps=args.sweeps)
    if args.therm is not None:
        rc = replace(rc, therm_sweeps=args.therm)
    if args.out is not None:
        rc = replace(rc, out_dir=args.out)
    if args.no_plots:
        rc = replace(rc, make_plots=False)

    errors = _validate_for_run(rc)
    if errors:
        print("validation failures:", file=sys.stderr)
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    if args.resume and len(rc.v_c) != 1:
        print("--resume requires a config with a single v_c value", file=sys.stderr)
        return 1

    stop = {"flag": False}

    def _handler(signum, frame):
        stop["flag"] = True

    old_term = signal.signal(signal.SIGTERM, _handler)
    old_int = signal.signal(signal.SIGINT, _handler)
    out_dir = Path(rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    try:
        if args.workers > 1 and len(rc.v_c) > 1:
            # scan points are independent; SIGTERM checkpointing is only
            # guaranteed in the default sequential mode
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                futures = [pool.submit(run_point, rc, v, out_dir) for v in rc.v_c]
                summaries = [f.result() for f in futures]
        else:
            for v in rc.v_c:
                summaries.append(
                    run_point(rc, v, out_dir, resume=args.resume, stop_flag=lambda: stop["flag"])
                )
    except ChainInterrupted as exc:
        print(f"interrupted: {exc}", file=sys.stderr)
        return 3
    except (WeightViolationError, InsufficientData, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    finally:
        signal.signal(signal.SIGTERM, old_term)
        signal.signal(signal.SIGINT, old_int)

    with open(out_dir / "run_summary.json", "w") as f:
        json.dump({"config": asdict(rc), "points": summaries}, f, indent=2)
    for s in summaries:
        n_pl = len(s["plateaus"])
        mixed = sum(1 for p in s["plateaus"] if p["mixed_mott"])
        print(
            f"v_c={s['v_c']:g}: {n_pl} plateau(s) ({mixed} mixed-Mott), "
            f"artifacts in {s['dir']}"
        )
    return 0


def cmd_oracle(args) -> int:
    try:
        rc = load_config(args.config)
    except ConfigError as exc:
        print("config errors:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    errors = _validate_for_run(rc)
    if errors:
        print("validation failures:", file=sys.stderr)
        for e in errors:
            print(f"  {e}", file=sys.stderr)
        return 1
    out_dir = Path(args.out if args.out is not None else rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for v in rc.v_c:
        params = rc.model_params(v)
        try:
            ed = thermal_expectations(params)
        except ValueError as exc:
            print(f"oracle failed for v_c={v:g}: {exc}", file=sys.stderr)
            return 1
        point_dir = _point_dir(out_dir, v)
        point_dir.mkdir(parents=True, exist_ok=True)
        rows = oracle_rows(ed)
        write_profile_csv(point_dir / "profile.csv", params, rows, kind="oracle")
        payload = {
            "format": REPORT_SCHEMA,
            "params": asdict(params),
            "params_hash": params_hash(params),
            "results": {
                "sites": list(range(params.L)),
                **{k: [float(x) for x in vv] for k, vv in rows.items()},
                "saturation_fraction": float(ed.saturation.max()),
                "energy": ed.energy,
            },
            "runtime": {"kind": "oracle"},
        }
        with open(point_dir / "report.json", "w") as f:
            json.dump(payload, f, indent=2)
        if rc.make_plots:
            from . import plotting

            plotting.save_profile_figure(rows, point_dir / "profile.png", title=f"oracle V_c = {v:g}")
            plotting.save_compressibility_figure(
                rows, point_dir / "compressibility.png", title=f"oracle V_c = {v:g}"
            )
        print(f"v_c={v:g}: oracle profile in {point_dir}")
    return 0


def compare_profiles(a: dict, b: dict, z_threshold: float) -> dict:
    """Per-site, per-observable z-scores between two profile tables."""
    if a["_params_hash"] != b["_params_hash"]:
        raise ValueError(
            f"params hash mismatch: {a['_params_hash']} vs {b['_params_hash']}"
        )
    if len(a["site"]) != len(b["site"]):
        raise ValueError("site count mismatch")
    observables = ("n_b", "n_f", "n_tot", "kappa_b", "kappa_f", "kappa_bf")
    per_obs = {}
    worst = 0.0
    n_comparisons = 0
    for obs in observables:
        diff = a[obs] - b[obs]
        err = np.sqrt(a[obs + "_err"] ** 2 + b[obs + "_err"] ** 2)
        z = np.zeros_like(diff)
        nonzero = diff != 0
        with np.errstate(divide="ignore"):
            z[nonzero] = np.abs(diff[nonzero]) / err[nonzero]
        per_obs[obs] = {
            "max_z": float(np.max(z)),
            "mean_z": float(np.mean(z)),
            "z": [float(x) for x in z],
        }
        worst = max(worst, float(np.max(z)))
        n_comparisons += len(z)
    p_single = math.erf(z_threshold / math.sqrt(2))
    p_exceed = 1.0 - p_single**n_comparisons
    return {
        "observables": per_obs,
        "max_z": worst,
        "z_threshold": z_threshold,
        "n_comparisons": n_comparisons,
        "pass": bool(worst <= z_threshold),
        "note": (
            f"{n_comparisons} simultaneous comparisons; even with perfect "
            f"statistics, max|z| exceeds {z_threshold:g} with probability "
            f"~{100 * p_exceed:.1f}%"
        ),
    }


def cmd_compare(args) -> int:
    try:
        a = read_profile_csv(args.csv_a)
        b = read_profile_csv(args.csv_b)
        result = compare_profiles(a, b, args.z)
    except (OSError, ValueError) as exc:
        print(f"compare failed: {exc}", file=sys.stderr)
        return 1
    for obs, r in result["observables"].items():
        print(f"{obs}: max|z| = {r['max_z']:.3f}  mean|z| = {r['mean_z']:.3f}")
    print(result["note"])
    print(f"overall max|z| = {result['max_z']:.3f} -> {'PASS' if result['pass'] else 'FAIL'}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(result, f, indent=2)
    return 0 if result["pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bfqmc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the world-line QMC for every configured V_c")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--sweeps", type=int, default=None, help="override measure_sweeps")
    r.add_argument("--therm", type=int, default=None, help="override therm_sweeps")
    r.add_argument("--out", default=None, help="override out_dir")
    r.add_argument("--resume", default=None, help="checkpoint file to continue from")
    r.add_argument("--workers", type=int, default=1, help="parallel V_c scan points")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(fn=cmd_run)

    o = sub.add_parser("oracle", help="exact thermal reference for small systems")
    o.add_argument("--config", required=True)
    o.add_argument("--out", default=None)
    o.set_defaults(fn=cmd_oracle)

    c = sub.add_parser("compare", help="z-score two profile CSV files")
    c.add_argument("csv_a")
    c.add_argument("csv_b")
    c.add_argument("--z", type=float, default=3.0)
    c.add_argument("--out", default=None, help="write the comparison report JSON here")
    c.set_defaults(fn=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
