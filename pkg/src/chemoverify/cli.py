"""
Command line entry point.

    chemoverify run --config PATH [--out DIR] [--set section.key=value ...]
    chemoverify sweep --config PATH --grid PATH [--out DIR] [--workers N]
    chemoverify selftest [--out DIR]

``run`` exits 0 when every enabled check passes or is skipped, 1 when a check
fails and 2 on configuration or runtime errors. The ledger is written in
every case where the configuration was valid.
"""
from __future__ import annotations

import argparse
import csv
import filecmp
import itertools
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, initial_condition, load_config, parse_config
from .diagnostics import BoundLedger, Monitor, MonitorSettings, Verdict, evaluate
from .dynamics import Simulator, StepControl
from .errors import ConfigError, Negativity, ZeroMass
from .output import SnapshotRecorder, write_outputs

log = logging.getLogger("chemoverify")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass
class RunResult:
    exit_code: int
    status: str
    ledger: BoundLedger
    verdicts: list[Verdict] = field(default_factory=list)
    error: str | None = None
    out_dir: Path | None = None

    def verdict(self, key: str) -> Verdict | None:
        return next((v for v in self.verdicts if v.key == key), None)


def _corrupt(ledger: BoundLedger, how: str) -> None:
    """Deliberate ledger damage for the negative fixtures."""
    if how == "halve_V":
        col = "V" if not np.all(np.isnan(ledger.column("V"))) else "V_general"
        for row in ledger.rows:
            row[col] *= 0.5
    elif how == "floor":
        floor = ledger.meta["m0"] * ledger.meta["omega_star_h"]
        for row in ledger.rows:
            row["inf_v"] = min(row["inf_v"], 0.5 * floor)


def run_command(cfg: RunConfig, out_dir=None) -> RunResult:
    """Simulate, evaluate the enabled checks and write the artifacts."""
    grid = cfg.build_grid()
    gamma = cfg.build_motility()
    sim = Simulator(grid, gamma, cfg.run["solver"], conservative=cfg.debug["corrupt"] != "nonconservative")
    ctrl = StepControl(T=cfg.run["T"], sigma=cfg.run["sigma"], dt_min=cfg.run["dt_min"],
                       dt_max=cfg.run["dt_max"], max_steps=cfg.run["max_steps"], cadence=cfg.run["cadence"])
    monitor = Monitor(sim, MonitorSettings())
    snaps = SnapshotRecorder(ctrl.T, cfg.output["snapshots"])
    run_info: dict = {"status": "completed", "error": None, "error_kind": None}
    try:
        state = sim.init_state(initial_condition(cfg))
    except (Negativity, ZeroMass, ValueError) as exc:
        run_info.update(status="invalid_initial_data", error=str(exc), error_kind=type(exc).__name__,
                        exit_code=EXIT_ERROR)
        result = RunResult(EXIT_ERROR, "invalid_initial_data", monitor.ledger, error=str(exc))
        if out_dir is not None:
            result.out_dir = write_outputs(out_dir, config=cfg.to_dict(), ledger=monitor.ledger,
                                           verdicts=[], run_info=run_info)
        return result

    traj = sim.run(state, ctrl, [monitor, snaps])
    ledger = monitor.ledger
    if cfg.debug["corrupt"] in ("halve_V", "floor"):
        _corrupt(ledger, cfg.debug["corrupt"])
    verdicts = evaluate(ledger, cfg.enabled_checks, cfg.checks["delta_stab"])

    if traj.status != "completed":
        code = EXIT_ERROR
    elif any(v.status == "fail" for v in verdicts):
        code = EXIT_FAIL
    else:
        code = EXIT_OK
    run_info.update(status=traj.status, error=traj.error, error_kind=traj.error_kind,
                    cadence=traj.cadence, samples=len(ledger.rows), exit_code=code)
    result = RunResult(code, traj.status, ledger, verdicts, traj.error)
    if out_dir is not None:
        result.out_dir = write_outputs(out_dir, config=cfg.to_dict(), ledger=ledger, verdicts=verdicts,
                                       run_info=run_info, grid=grid, snapshots=snaps.snapshots)
    return result


def report(result: RunResult, stream=None) -> None:
    stream = stream or sys.stdout
    for v in result.verdicts:
        margin = "" if math.isnan(v.margin) else f" margin={v.margin:.3e}"
        print(f"{v.status.upper():4s} {v.key}{margin}  {v.detail}", file=stream)
    if result.error:
        print(f"run {result.status}: {result.error}", file=stream)


# ---------------------------------------------------------------------------
# sweeps


def parse_sweep_grid(text: str) -> list[tuple[str, list[str]]]:
    """``section.key = a | b | c`` lines (an optional ``[sweep]`` header is allowed)."""
    axes: list[tuple[str, list[str]]] = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body or body == "[sweep]":
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'section.key = a | b', got {body!r}", lineno)
        key, values = (part.strip() for part in body.split("=", 1))
        if "." not in key:
            raise ConfigError(f"sweep key {key!r} must be section.key", lineno, key)
        if key in seen:
            raise ConfigError(f"sweep key {key!r} repeated", lineno, key)
        options = [v.strip() for v in values.split("|")]
        if not all(options):
            raise ConfigError(f"empty alternative for {key!r}", lineno, key)
        seen.add(key)
        axes.append((key, options))
    if not axes:
        raise ConfigError("sweep grid is empty")
    return axes


def _sweep_one(args):
    index, text, overrides, out_dir = args
    row = {"run": index, **overrides}
    try:
        cfg = parse_config(text, overrides)
        result = run_command(cfg, Path(out_dir) / f"run_{index:03d}")
    except ConfigError as exc:
        row.update(exit_code=EXIT_ERROR, status="invalid_config", error=str(exc))
        return row
    except Exception as exc:  # keep sweeping past unexpected failures
        row.update(exit_code=EXIT_ERROR, status="crashed", error=f"{type(exc).__name__}: {exc}")
        return row
    meta = result.ledger.meta
    last = result.ledger.rows[-1] if result.ledger.rows else {}
    row.update(exit_code=result.exit_code, status=result.status, error=result.error or "",
               cells=cfg.grid["cells"][0], steps=meta.get("steps"), t_final=meta.get("t_final"),
               sup_u_final=last.get("sup_u"), sup_v_final=last.get("sup_v"), E_final=last.get("E"))
    for v in result.verdicts:
        row[f"check_{v.key}"] = v.status
    return row


def observed_order(ns, values) -> float:
    """Richardson order from three runs at n, r n, r^2 n (finest last)."""
    (n1, n2, n3), (q1, q2, q3) = ns, values
    r = n2 / n1
    if not math.isclose(n3 / n2, r, rel_tol=1e-9):
        return math.nan
    num, den = abs(q1 - q2), abs(q2 - q3)
    if den == 0 or num == 0:
        return math.nan
    return math.log(num / den) / math.log(r)


def convergence_table(rows: list[dict], keys: list[str]) -> list[dict]:
    """Observed orders of E(T) and sup v(T) for every group that varies only in cells."""
    others = [k for k in keys if k != "grid.cells"]
    ok = [r for r in rows if r.get("status") == "completed" and r.get("E_final") is not None]
    ok.sort(key=lambda r: tuple(str(r[k]) for k in others))
    out = []
    for group, members in itertools.groupby(ok, key=lambda r: tuple(str(r[k]) for k in others)):
        members = sorted(members, key=lambda r: r["cells"])
        if len({r["cells"] for r in members}) < 3:
            continue
        finest = members[-3:]
        ns = [r["cells"] for r in finest]
        entry = {"group": ";".join(f"{k}={v}" for k, v in zip(others, group)) or "all",
                 "n1": ns[0], "n2": ns[1], "n3": ns[2]}
        for qty in ("E_final", "sup_v_final"):
            entry[f"order_{qty}"] = observed_order(ns, [r[qty] for r in finest])
        out.append(entry)
        for r in finest:
            r["observed_order"] = entry["order_E_final"]
    return out


def _write_rows(path: Path, rows: list[dict]) -> None:
    names: list[str] = []
    for r in rows:
        names.extend(k for k in r if k not in names)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, names, lineterminator="\n", restval="")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def sweep_command(config_text: str, grid_text: str, out_dir, workers: int | None = None) -> list[dict]:
    """Run the Cartesian product of alternatives and write summary.csv."""
    axes = parse_sweep_grid(grid_text)
    parse_config(config_text)  # the base configuration itself must be valid
    keys = [k for k, _ in axes]
    combos = [dict(zip(keys, values)) for values in itertools.product(*(opts for _, opts in axes))]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, config_text, combo, str(out)) for i, combo in enumerate(combos)]
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        rows = [_sweep_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    table = convergence_table(rows, keys) if "grid.cells" in keys else []
    _write_rows(out / "summary.csv", rows)
    if table:
        _write_rows(out / "convergence.csv", table)
    return rows


# ---------------------------------------------------------------------------
# selftest

SELFTEST_CONFIG = """\
[grid]
dimension = 1
cells = 32
[motility]
preset = power_growth
k = 1
[initial]
kind = cosine
level = 1.0
amplitude = 0.5
[run]
T = 0.2
[output]
snapshots = 2
"""

# (name, corruption, check expected to fail)
SELFTEST_FIXTURES = (
    ("nonconservative stencil", "nonconservative", "mass"),
    ("halved V trace", "halve_V", "ode_domination"),
    ("floor-violating ledger", "floor", "v_floor"),
)


def selftest(out_dir=None, stream=None) -> int:
    """Clean run passes, each corrupted fixture fails its check, outputs are reproducible."""
    stream = stream or sys.stdout
    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(out_dir) if out_dir is not None else Path(tmp)
        clean = run_command(parse_config(SELFTEST_CONFIG), root / "clean")
        good = clean.exit_code == EXIT_OK
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} clean fixture exits 0 (got {clean.exit_code})", file=stream)
        for name, how, key in SELFTEST_FIXTURES:
            cfg = parse_config(SELFTEST_CONFIG + f"[debug]\ncorrupt = {how}\n")
            res = run_command(cfg, root / how)
            v = res.verdict(key)
            caught = res.exit_code == EXIT_FAIL and v is not None and v.status == "fail"
            ok &= caught
            print(f"{'PASS' if caught else 'FAIL'} {name} recorded as {key} failure "
                  f"(exit {res.exit_code}, {key} {v.status if v else 'missing'})", file=stream)
        again = run_command(parse_config(SELFTEST_CONFIG), root / "clean_again")
        same = identical_dirs(clean.out_dir, again.out_dir) and again.exit_code == clean.exit_code
        ok &= same
        print(f"{'PASS' if same else 'FAIL'} repeated run is byte-identical", file=stream)
    return EXIT_OK if ok else EXIT_FAIL


def identical_dirs(a, b) -> bool:
    a, b = Path(a), Path(b)
    names = sorted(p.name for p in a.iterdir())
    if names != sorted(p.name for p in b.iterdir()):
        return False
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    return not mismatch and not errors


# ---------------------------------------------------------------------------


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {pair!r}")
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemoverify", description="Verify a chemotaxis local-sensing simulation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one configuration and check every bound")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="output directory (default: [output] dir)")
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config value")

    sweep = sub.add_parser("sweep", help="run every combination listed in a sweep grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--grid", required=True)
    sweep.add_argument("--out", default="sweep_out")
    sweep.add_argument("--workers", type=int, default=None)

    st = sub.add_parser("selftest", help="check that corrupted fixtures are caught")
    st.add_argument("--out", help="keep fixture outputs here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            cfg = load_config(args.config, _overrides(args.set))
            result = run_command(cfg, args.out or cfg.output["dir"])
            report(result)
            return result.exit_code
        if args.command == "sweep":
            rows = sweep_command(Path(args.config).read_text(), Path(args.grid).read_text(), args.out, args.workers)
            failed = sum(1 for r in rows if r["exit_code"] != EXIT_OK)
            print(f"{len(rows)} runs, {failed} not clean; summary in {Path(args.out) / 'summary.csv'}")
            return EXIT_OK if failed == 0 else EXIT_FAIL
        return selftest(args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
