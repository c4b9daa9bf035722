"""Command line entry point: ``locus simulate|verify|report``.

Exit codes: 0 success (no failed check), 1 a check failed, 2 bad input
(config, check names, missing manifests), 3 runtime sampler error,
4 an inconclusive check under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .mcengine import ConfigError, ExperimentConfig, ReplicateError, estimate_density, run_replicates
from .procgen import GridTooLarge
from .verify import CHECK_NAMES, SuiteResult, applicable_checks, run_checks, write_report

log = logging.getLogger("locus")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_RUNTIME, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    config: dict
    seed: int
    version: str
    command: str
    started: str
    finished: str = ""
    outputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.seed, "version": self.version,
                "command": self.command, "started": self.started, "finished": self.finished,
                "outputs": self.outputs}

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _key_line(text: str, dotted: str) -> int | None:
    """Line (1-based) where the last component of a dotted key appears,
    searching inside the section named by the first component."""
    parts = dotted.split(".")
    pos = 0
    line = None
    for part in parts:
        m = re.compile(r'"%s"\s*:' % re.escape(part)).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def load_config(path: str) -> ExperimentConfig:
    """Parse a config file (or a run manifest embedding one)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise InputError(f"{path}:1: config must be a JSON object")
    if "config" in data and "version" in data:
        data = data["config"]
        text = json.dumps(data, indent=2)
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError as exc:
        line = _key_line(text, exc.key)
        where = f"{path}:{line}" if line else path
        raise InputError(f"{where}: {exc}") from None


def _write_samples(samples: np.ndarray, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "location"])
        for i, x in enumerate(samples):
            w.writerow([i, "INF" if math.isinf(x) else repr(float(x))])


def _prepare(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def cmd_simulate(args) -> int:
    cfg, out = _prepare(args)
    manifest = RunManifest(cfg.to_dict(), cfg.master_seed, __version__, "simulate", _now())
    samples = run_replicates(cfg, workers=args.workers)
    snapped = cfg.snap(cfg.interval)
    density = estimate_density(samples, snapped.a, snapped.b, cfg.bins)
    _write_samples(samples, out / "samples.csv")
    density.to_csv(out / "density.csv")
    manifest.outputs = {"samples": "samples.csv", "density": "density.csv"}
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    log.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


def _parse_checks(text: str | None, cfg: ExperimentConfig) -> list[str]:
    if not text:
        return applicable_checks(cfg)
    names = [n.strip() for n in text.split(",") if n.strip()]
    unknown = [n for n in names if n not in CHECK_NAMES]
    if unknown:
        raise InputError(f"unknown check {unknown[0]!r}; choose from {', '.join(CHECK_NAMES)}")
    return names


def cmd_verify(args) -> int:
    cfg, out = _prepare(args)
    names = _parse_checks(args.checks, cfg)
    manifest = RunManifest(cfg.to_dict(), cfg.master_seed, __version__, "verify", _now())
    try:
        result: SuiteResult = run_checks(cfg, names, workers=args.workers)
    except (ReplicateError, GridTooLarge):
        raise
    except ValueError as exc:
        raise InputError(f"check precondition: {exc}") from None
    outputs = {"verdicts": "verdicts.json"}
    write_report(result.verdicts, out / "verdicts.json")
    for v in result.verdicts:
        name = f"check_{v.check_name}.csv"
        v.write_details_csv(out / name)
        outputs[v.check_name] = name
    if result.density is not None:
        result.density.to_csv(out / "density.csv")
        outputs["density"] = "density.csv"
    for i, pot in enumerate(result.potentials):
        name = "noether_potential.csv" if i == 0 else f"noether_potential_{i}.csv"
        pot.to_csv(out / name)
        outputs["noether_potential"] = name
    manifest.outputs = outputs
    manifest.finished = _now()
    manifest.write(out / "manifest.json")
    statuses = [v.status for v in result.verdicts]
    for v in result.verdicts:
        print(f"{v.check_name}: {v.status} (slack {v.slack_se:.3g} SE)")
    if "fail" in statuses:
        return EXIT_FAIL
    if args.strict and "inconclusive" in statuses:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    if not args.run_dirs:
        raise InputError("report needs at least one run directory")
    runs = []
    for d in args.run_dirs:
        mpath = Path(d) / "manifest.json"
        if not mpath.is_file():
            raise InputError(f"{d}: missing manifest.json")
        manifest = json.loads(mpath.read_text())
        vpath = Path(d) / "verdicts.json"
        verdicts = json.loads(vpath.read_text()) if vpath.is_file() else []
        runs.append({"run_dir": str(d), "manifest": manifest, "verdicts": verdicts})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"version": __version__, "runs": runs}, indent=2) + "\n")
    bundle = out.with_name(out.stem + "_csv")
    bundle.mkdir(exist_ok=True)
    _bundle(runs, bundle)
    print(f"merged {len(runs)} run(s) into {out}")
    return EXIT_OK


def _bundle(runs: list[dict], bundle: Path) -> None:
    """Plot-ready CSVs: density curves, K(y) curves and flux masses against epsilon."""
    with (bundle / "density_curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "bin_left", "bin_right", "density", "se"])
        for run in runs:
            p = Path(run["run_dir"]) / "density.csv"
            if p.is_file():
                for row in _read_csv(p):
                    if not row["bin_left"].startswith("ATOM"):
                        w.writerow([run["run_dir"], row["bin_left"], row["bin_right"], row["density"], row["se"]])
    with (bundle / "noether_potential.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "y", "K", "se"])
        for run in runs:
            p = Path(run["run_dir"]) / "noether_potential.csv"
            if p.is_file():
                for row in _read_csv(p):
                    w.writerow([run["run_dir"], row["y"], row["K"], row["se"]])
    with (bundle / "flux_masses.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "step", "mass_before", "mass_after", "difference", "se"])
        for run in runs:
            for v in run["verdicts"]:
                if v["check_name"] != "flux_convergence":
                    continue
                for row in v["details"]:
                    w.writerow([run["run_dir"], row["label"], row.get("mass_before"),
                                row.get("mass_after"), row["observed"], row["se"]])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON) or a run manifest")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--workers", type=int, help="worker processes (default: $LOCUS_WORKERS or 1)")

    common(sub.add_parser("simulate", help="sample locations and estimate their density"))
    v = sub.add_parser("verify", help="run statistical checks")
    common(v)
    v.add_argument("--checks", help="comma-separated check names (default: all applicable)")
    v.add_argument("--strict", action="store_true", help="exit 4 when a check is inconclusive")
    r = sub.add_parser("report", help="merge run directories into one summary")
    r.add_argument("run_dirs", nargs="*")
    r.add_argument("--out", required=True, help="summary JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INPUT
    handlers = {"simulate": cmd_simulate, "verify": cmd_verify, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ReplicateError, GridTooLarge) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
