"""Command-line entry point: ``run``, ``verify`` and ``dump-schema``.

Exit status is 0 on success, 1 for runtime diagnostics (numerical failure,
boundary violation, a failed statistical check) and 2 for configuration or
usage errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import SCHEMA, ScenarioConfig, load_config
from .errors import BoundaryViolation, BranchError, ConfigError, NumericalError, SamplingError
from .field_io import encode_field, field_csv
from .measurement import branch_decompose, monitor_crossings, run_measurement, subensemble_analysis
from .scenarios import run_equivariance

log = logging.getLogger("hiddenconf")

#: Environment variable that overrides the root directory for run outputs.
OUTPUT_ROOT_ENV = "HIDDENCONF_OUTPUT_ROOT"

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
RUNTIME_ERRORS = (NumericalError, BoundaryViolation, SamplingError, BranchError)


class _Writer:
    """Writes artifact files and remembers their sha256 for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.hashes: dict[str, str] = {}

    def bytes(self, rel: str, data: bytes) -> None:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.hashes[rel] = hashlib.sha256(data).hexdigest()

    def json(self, rel: str, obj) -> None:
        self.bytes(rel, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())

    def text(self, rel: str, text: str) -> None:
        self.bytes(rel, text.encode())

    def field(self, rel: str, f, alpha: float) -> None:
        self.bytes(rel, encode_field(f, alpha))


def output_directory(cfg: ScenarioConfig, override: str | None = None) -> Path:
    if override:
        return Path(override)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "."))
    return root / cfg.directory


def _alpha_dir(alpha: float) -> str:
    return f"alpha_{alpha:g}"


def _trajectory_csv(times, positions, ids, labels, hits, limit: int) -> str:
    """Tidy rows: member_id, t, x_1..x_d, branch_label, regularized_hits."""
    n = positions.shape[1] if limit == 0 else min(limit, positions.shape[1])
    d = positions.shape[2]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["member_id", "t"] + [f"x_{k + 1}" for k in range(d)] + ["branch_label", "regularized_hits"])
    for m in range(n):
        for i, t in enumerate(times):
            w.writerow([int(ids[m]), repr(float(t))] + [repr(float(v)) for v in positions[i, m]]
                       + [int(labels[i, m]), int(hits[m])])
    return buf.getvalue()


def _snapshot_name(t: float) -> str:
    return f"psi_t{t:.4f}"


def _run_packets(cfg: ScenarioConfig, out: _Writer) -> list[str]:
    problems = []
    for alpha in cfg.alphas:
        run = run_equivariance(cfg.scenario, alpha, cfg.n, cfg.seed, cfg.substeps)
        sub = _alpha_dir(alpha)
        report = dict(run.to_dict(), name=cfg.name)
        if "json" in cfg.formats:
            out.json(f"{sub}/report.json", report)
        if "csv" in cfg.formats:
            labels = np.zeros(run.positions.shape[:2], dtype=int)
            out.text(f"{sub}/trajectories.csv", _trajectory_csv(run.times, run.positions, np.arange(cfg.n),
                                                                labels, run.regularized_hits,
                                                                cfg.trajectory_members))
            last = run.times[-1]
            out.text(f"{sub}/{_snapshot_name(last)}.csv", field_csv(run.fields[last]))
        if "hcf" in cfg.formats:
            for t in run.times:
                out.field(f"{sub}/{_snapshot_name(t)}.hcf", run.fields[t], alpha)
        log.info("alpha=%g worst L1/floor %.3f", alpha, run.worst_ratio)
        if not run.passed:
            problems.append(f"alpha={alpha:g}: L1 exceeds twice the sampling floor")
    return problems


def _run_measurement(cfg: ScenarioConfig, out: _Writer) -> list[str]:
    problems = []
    s = cfg.scenario
    for alpha in cfg.alphas:
        rec = run_measurement(s, alpha, cfg.n, cfg.seed, cfg.substeps)
        sub = _alpha_dir(alpha)
        report = {"name": cfg.name, "kind": cfg.kind, "scenario": s.to_dict(), "scenario_hash": s.digest(),
                  "alpha": alpha, "n": cfg.n, "seed": cfg.seed, "summary": rec.summary}
        crossing = monitor_crossings(rec)
        report["crossing"] = crossing.to_dict()
        if s.dims == 2:
            try:
                report["subensemble"] = subensemble_analysis(rec, cfg.bins or (32, 16)).to_dict()
            except ValueError as exc:
                report["subensemble"] = None
                problems.append(f"alpha={alpha:g}: sub-ensemble analysis skipped: {exc}")
        else:
            o1, o2 = rec.outcome1, rec.outcome2
            report["repeat_table"] = {f"{a},{b}": int(np.sum((o1 == a) & (o2 == b)))
                                      for a in (1, 2, 0) for b in (1, 2, 0)}
        if "json" in cfg.formats:
            out.json(f"{sub}/report.json", report)
            out.json(f"{sub}/record.json", rec.to_json())
        if "csv" in cfg.formats:
            labels = np.stack([branch_decompose(rec.fields[t], s.eps_branch, order_axis=1).branch_of(p)
                               for t, p in zip(rec.monitor_times, rec.monitor_positions)])
            out.text(f"{sub}/trajectories.csv", _trajectory_csv(rec.monitor_times, rec.monitor_positions,
                                                                rec.ids, labels, rec.regularized_hits,
                                                                cfg.trajectory_members))
            last = rec.monitor_times[-1]
            out.text(f"{sub}/{_snapshot_name(last)}.csv", field_csv(rec.fields[last]))
        if "hcf" in cfg.formats:
            for t in sorted(set(s.record_times) | {0.0}):
                key = min(rec.fields, key=lambda u: abs(u - t))
                out.field(f"{sub}/{_snapshot_name(key)}.hcf", rec.fields[key], alpha)
        if rec.summary.get("misconfigured"):
            problems.append(f"alpha={alpha:g}: undecided fraction {rec.summary['undecided_fraction']:.3g} "
                            "marks the scenario as misconfigured")
    return problems


def run(config_path: str, output: str | None = None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = output_directory(cfg, output)
    out = _Writer(root)
    try:
        problems = _run_measurement(cfg, out) if cfg.is_measurement else _run_packets(cfg, out)
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        problems = [f"{type(exc).__name__}: {exc}"]
        status = "error"
    else:
        status = "ok" if not problems else "diagnostic"
    raw = cfg.source.read_bytes()
    manifest = {
        "name": cfg.name,
        "kind": cfg.kind,
        "status": status,
        "problems": problems,
        "config": cfg.raw,
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "versions": {"hiddenconf": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "files": dict(sorted(out.hashes.items())),
    }
    out.json("manifest.json", manifest)
    for p in problems:
        print(f"diagnostic: {p}", file=sys.stderr)
    print(f"wrote {len(out.hashes)} files to {root}")
    return EXIT_OK if status == "ok" else EXIT_RUNTIME


def verify(suite: str, json_path: str | None = None) -> int:
    from .suites import run_suite

    checks = run_suite(suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    if json_path:
        Path(json_path).write_text(json.dumps([c.to_dict() for c in checks], indent=2, default=float) + "\n")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    from .suites import SUITES

    parser = argparse.ArgumentParser(prog="hiddenconf", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario configuration")
    p_run.add_argument("config", help="path to a TOML scenario file")
    p_run.add_argument("-o", "--output", help=f"output directory (default: ${OUTPUT_ROOT_ENV} or . / output.directory)")
    p_ver = sub.add_parser("verify", help="run an acceptance suite")
    p_ver.add_argument("suite", choices=list(SUITES) + ["all"])
    p_ver.add_argument("--json", dest="json_path", help="also write the checks as JSON")
    sub.add_parser("dump-schema", help="print the configuration JSON schema")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run(args.config, args.output)
    if args.command == "verify":
        return verify(args.suite, args.json_path)
    print(json.dumps(SCHEMA, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
