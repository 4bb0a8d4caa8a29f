"""Command-line front end: dataset generation, runs, sweeps, theory checks.

Exit codes: 0 success, 2 argument/config error, 3 data error, 4 check failure.
The default output root is the current directory unless HYPASS_OUTPUT_ROOT
is set. Every command is deterministic under (flags, master seed); run
timestamps live in manifest.json, never in result.json.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, loop, synth, theory
from .encoder import save_checkpoint

EXIT_OK = 0
EXIT_ARGUMENT = 2
EXIT_DATA = 3
EXIT_CHECK_FAILED = 4

RESULT_SCHEMA_VERSION = 1
RESULT_KEYS = {
    "schema_version",
    "version",
    "experiment_id",
    "mode",
    "master_seed",
    "n_epochs",
    "selected_lambda_history",
    "final_target_ari",
    "final_target_map",
    "final_target_rank1",
    "final_n_clusters",
    "final_n_noise",
}


class ConfigError(Exception):
    """Flat-config schema violation, carrying file/line context."""


class DataError(Exception):
    """Unreadable or structurally invalid data files."""


# ---------------------------------------------------------------------------
# flat key = value config files


@dataclass
class ExperimentSpec:
    """Dataset recipe plus loop configuration parsed from a config file."""

    seed: int = 0
    n_ids_source: int = 16
    n_ids_target: int = 16
    samples_per_id: int = 16
    dim: int = 8
    preset: str = "standard"
    n_val: int = 128
    target_per_id: int = 8
    data_dir: str | None = None
    loop: loop.LoopConfig = None  # filled by parse

    def datasets(self) -> tuple[synth.DomainDataset, synth.DomainDataset, synth.DomainDataset]:
        """(source_train, source_val, target_train) per the recipe."""
        if self.data_dir is not None:
            base = Path(self.data_dir)
            try:
                source = synth.read_csv(base / "source.csv", seed=self.seed)
                target = synth.read_csv(base / "target.csv", seed=self.seed)
            except OSError as exc:
                raise DataError(f"cannot read datasets under {base}: {exc}") from exc
            except ValueError as exc:
                raise DataError(str(exc)) from exc
        else:
            shift = synth.SHIFT_PRESETS[self.preset]
            source, target = synth.generate_domain_pair(
                self.seed, self.n_ids_source, self.n_ids_target, self.samples_per_id, self.dim, shift
            )
            if self.target_per_id:
                target = synth.subsample_per_id(target, self.target_per_id, seed=self.seed + 2)
        train, val = synth.split_validation(source, self.n_val, seed=self.seed + 1)
        return train, val, target


_SPEC_FIELDS = {
    "seed": int,
    "n_ids_source": int,
    "n_ids_target": int,
    "samples_per_id": int,
    "dim": int,
    "preset": str,
    "n_val": int,
    "target_per_id": int,
    "data_dir": str,
}

_LOOP_FIELDS = {
    "n_epochs": int,
    "init_epochs": int,
    "hidden": int,
    "n_features": int,
    "lr": float,
    "momentum": float,
    "margin": float,
    "batch_p": int,
    "batch_k": int,
    "algorithm": str,
    "min_samples": int,
    "hp_strategy": str,
    "fixed_lambda": float,
    "bayes_init": float,
    "n_search": int,
    "grid_step": float,
    "metric": str,
    "eps_range": tuple,
    "enable_target_id": bool,
    "enable_source_id": bool,
    "enable_align": bool,
    "keep_noise": bool,
    "max_pairs": int,
}

# the config key "seed" is the master seed and feeds both the dataset recipe
# and the loop, so LoopConfig.seed is deliberately absent above
assert set(_LOOP_FIELDS) | {"seed"} == {f.name for f in fields(loop.LoopConfig)}

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(key: str, value: str, where: str):
    if key in _SPEC_FIELDS:
        target = _SPEC_FIELDS[key]
    elif key in _LOOP_FIELDS:
        target = _LOOP_FIELDS[key]
    else:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    try:
        if target is bool:
            return _BOOL_VALUES[value.lower()]
        if target is tuple:
            return tuple(float(v) for v in value.split(","))
        return target(value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: cannot parse {value!r} for key {key!r}") from exc


def parse_config(path) -> ExperimentSpec:
    """Parse a flat ``key = value`` config file into an experiment spec."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    spec_kwargs: dict = {}
    loop_kwargs: dict = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first at line {seen[key]})")
        seen[key] = lineno
        parsed = _coerce(key, value, f"{path}:{lineno}")
        if key in _SPEC_FIELDS:
            spec_kwargs[key] = parsed
        else:
            loop_kwargs[key] = parsed
    try:
        spec = ExperimentSpec(**spec_kwargs)
        cfg = loop.LoopConfig(seed=spec.seed, **loop_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if spec.preset not in synth.SHIFT_PRESETS:
        raise ConfigError(f"{path}: unknown preset {spec.preset!r} (choices: {sorted(synth.SHIFT_PRESETS)})")
    spec.loop = cfg
    return spec


def default_spec() -> ExperimentSpec:
    spec = ExperimentSpec()
    spec.loop = loop.LoopConfig()
    return spec


def apply_quick(spec: ExperimentSpec) -> ExperimentSpec:
    """Shrink all budgets roughly tenfold for CI."""
    spec.loop = replace(
        spec.loop,
        n_epochs=max(1, spec.loop.n_epochs // 10),
        init_epochs=max(1, spec.loop.init_epochs // 5),
        n_search=max(3, spec.loop.n_search // 10),
    )
    return spec


# ---------------------------------------------------------------------------
# result / manifest files


def _out_dir(arg: str) -> Path:
    root = Path(os.environ.get("HYPASS_OUTPUT_ROOT", "."))
    out = Path(arg)
    if not out.is_absolute():
        out = root / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_records(path, records: list[loop.CycleRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(loop.CycleRecord.FIELDS)
        for rec in records:
            writer.writerow([v if isinstance(v, int) else repr(float(v)) for v in rec.row()])


def write_result(path, payload: dict) -> None:
    unknown = set(payload) - RESULT_KEYS
    missing = RESULT_KEYS - set(payload)
    if unknown or missing:
        raise ValueError(f"result schema mismatch: unknown={sorted(unknown)} missing={sorted(missing)}")
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_result(path) -> dict:
    """Strict reader: unknown or missing fields are rejected."""
    payload = json.loads(Path(path).read_text())
    unknown = set(payload) - RESULT_KEYS
    missing = RESULT_KEYS - set(payload)
    if unknown:
        raise DataError(f"{path}: unknown result fields {sorted(unknown)}")
    if missing:
        raise DataError(f"{path}: missing result fields {sorted(missing)}")
    if payload["schema_version"] != RESULT_SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {payload['schema_version']}")
    return payload


def write_manifest(path, experiment_id: str, config_path, out_dir: Path, seed: int) -> None:
    manifest = {
        "experiment_id": experiment_id,
        "config_path": str(config_path) if config_path else None,
        "output_dir": str(out_dir),
        "master_seed": seed,
        "version": f"hypass-{__version__}",
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    out = _out_dir(args.out)
    shift = synth.SHIFT_PRESETS[args.preset]
    source, target = synth.generate_domain_pair(
        args.seed, args.ids, args.target_ids, args.samples_per_id, args.dim, shift
    )
    synth.write_csv(source, out / "source.csv")
    synth.write_csv(target, out / "target.csv")
    synth.write_meta(out / "meta.json", args.seed, args.ids, args.target_ids, args.samples_per_id, args.dim, shift)
    print(f"wrote {out / 'source.csv'} ({len(source)} rows) and {out / 'target.csv'} ({len(target)} rows)")
    return EXIT_OK


def _resolve_mode(mode: str, cfg: loop.LoopConfig) -> loop.LoopConfig:
    if mode == "hypass":
        return loop.ablation_config(5, cfg)
    if mode.startswith("fixed:"):
        try:
            lam = float(mode.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad fixed lambda in mode {mode!r}") from exc
        return replace(cfg, hp_strategy="fixed", fixed_lambda=lam)
    if mode.startswith("ablation:"):
        try:
            variant = int(mode.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad ablation variant in mode {mode!r}") from exc
        return loop.ablation_config(variant, cfg)
    raise ConfigError(f"unknown mode {mode!r} (hypass | fixed:<lambda> | ablation:<1..5>)")


def cmd_run(args) -> int:
    spec = parse_config(args.config) if args.config else default_spec()
    if args.quick:
        spec = apply_quick(spec)
    cfg = _resolve_mode(args.mode, spec.loop)
    out = _out_dir(args.out)
    source_train, source_val, target_train = spec.datasets()

    encoder, records = loop.run(source_train, source_val, target_train, cfg)
    final_map, final_rank1 = loop.retrieval_scores(encoder, target_train)

    write_records(out / "records.csv", records)
    save_checkpoint(out / "checkpoint.txt", {f"enc.{k}": v for k, v in encoder.params().items()})
    write_result(
        out / "result.json",
        {
            "schema_version": RESULT_SCHEMA_VERSION,
            "version": f"hypass-{__version__}",
            "experiment_id": f"run-{args.mode}-seed{cfg.seed}",
            "mode": args.mode,
            "master_seed": cfg.seed,
            "n_epochs": cfg.n_epochs,
            "selected_lambda_history": [rec.selected_lambda for rec in records],
            "final_target_ari": records[-1].target_ari if records else None,
            "final_target_map": final_map,
            "final_target_rank1": final_rank1,
            "final_n_clusters": records[-1].n_clusters if records else None,
            "final_n_noise": records[-1].n_noise if records else None,
        },
    )
    write_manifest(out / "manifest.json", f"run-{args.mode}", args.config, out, cfg.seed)
    print(
        f"run mode={args.mode} epochs={cfg.n_epochs}: "
        f"final target ARI={records[-1].target_ari:.4f} mAP={final_map:.4f}"
        if records
        else f"run mode={args.mode}: no epochs executed"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = parse_config(args.config) if args.config else default_spec()
    if args.quick:
        spec = apply_quick(spec)
    try:
        lo, hi = (float(v) for v in args.range.split(":"))
    except ValueError as exc:
        raise ConfigError(f"bad --range {args.range!r}, expected lo:hi") from exc
    if args.steps < 2:
        raise ConfigError("--steps must be >= 2")
    values = np.linspace(lo, hi, args.steps)
    cfg = spec.loop
    if args.param == "k":
        cfg = replace(cfg, algorithm="kmeans")
        values = np.unique(np.round(values)).astype(float)
    out = _out_dir(args.out)
    source_train, source_val, target_train = spec.datasets()
    points = loop.sensitivity_sweep(source_train, source_val, target_train, values, cfg)
    with (out / "sweep.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "final_target_ari", "final_target_map"])
        for pt in points:
            writer.writerow([repr(pt.lam), repr(pt.final_target_ari), repr(pt.final_target_map)])
    write_manifest(out / "manifest.json", f"sweep-{args.param}", args.config, out, spec.loop.seed)
    best = max(points, key=lambda p: p.final_target_ari)
    print(f"sweep {args.param} over [{lo}, {hi}] x{len(values)}: best {best.lam:.4g} (ARI {best.final_target_ari:.4f})")
    return EXIT_OK


def cmd_verify_theory(args) -> int:
    try:
        alphas = tuple(float(a) for a in args.alpha.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --alpha list {args.alpha!r}") from exc
    replicates = args.replicates
    n_mc = args.n_mc
    if args.quick:
        replicates = max(200, replicates // 10)
        n_mc = max(2000, n_mc // 10)
    checks = theory.run_theory_checks(alphas=alphas, n_mc=n_mc, replicates=replicates, seed=args.seed)
    out = _out_dir(args.out)
    theory.write_report(out / "theory_report.csv", checks)
    n_fail = sum(not c.passed for c in checks)
    for check in checks:
        print(f"[{'PASS' if check.passed else 'FAIL'}] {check.config}")
    print(f"theory report: {len(checks) - n_fail}/{len(checks)} checks passed -> {out / 'theory_report.csv'}")
    return EXIT_OK if n_fail == 0 else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypass", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hypass-{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a two-domain synthetic dataset")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--ids", type=int, default=10, help="source identities")
    gen.add_argument("--target-ids", type=int, default=12)
    gen.add_argument("--samples-per-id", type=int, default=12)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--preset", choices=sorted(synth.SHIFT_PRESETS), default="standard")
    gen.add_argument("--out", default="data")
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run the self-training loop")
    run.add_argument("--config", default=None, help="flat key=value config file")
    run.add_argument("--mode", default="hypass", help="hypass | fixed:<lambda> | ablation:<1..5>")
    run.add_argument("--out", default="out")
    run.add_argument("--quick", action="store_true", help="shrink budgets ~10x for CI")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="fixed-lambda sensitivity sweep")
    sweep.add_argument("--param", choices=("eps", "k"), default="eps")
    sweep.add_argument("--range", default="0.1:1.9")
    sweep.add_argument("--steps", type=int, default=10)
    sweep.add_argument("--config", default=None)
    sweep.add_argument("--out", default="sweep")
    sweep.add_argument("--quick", action="store_true")
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify-theory", help="run the estimator/bound checks")
    verify.add_argument("--alpha", default="1,2")
    verify.add_argument("--n-mc", type=int, default=20000)
    verify.add_argument("--replicates", type=int, default=2000)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", default="theory")
    verify.add_argument("--quick", action="store_true")
    verify.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ARGUMENT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"argument error: {exc}", file=sys.stderr)
        return EXIT_ARGUMENT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
