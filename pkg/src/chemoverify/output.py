"""
Run artifacts: ledger.csv, verdicts.json, meta.json and field snapshots.

Everything is written with ``repr`` floats and sorted JSON keys, so two runs
of the same configuration produce byte-identical directories. ``load_ledger``
rebuilds the ``BoundLedger`` from the files, which is enough to recompute
every verdict.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import COLUMNS, BoundLedger, Verdict
from .dynamics import SimulationState
from .grid import Grid

VERSION_LINE = f"# chemoverify {__version__}\n"


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else repr(value)
    return obj


def _restore(obj):
    if isinstance(obj, dict):
        return {k: _restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


class SnapshotRecorder:
    """Observer that keeps (t, u, v) at evenly spaced target times.

    With ``count`` targets spread over [0, T], each is captured at the first
    state whose time reaches it. ``count = 1`` keeps only the final state.
    """

    def __init__(self, T: float, count: int):
        if count <= 0:
            self.targets = []
        elif count == 1 or T == 0:
            self.targets = [T]
        else:
            self.targets = list(np.linspace(0.0, T, count))
        self.snapshots: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._next = 0

    def _offer(self, state: SimulationState) -> None:
        hit = False
        while self._next < len(self.targets) and state.t >= self.targets[self._next]:
            self._next += 1
            hit = True
        if hit:
            self.snapshots.append((state.t, state.u, state.v))

    def on_start(self, state):
        self._offer(state)

    def on_step(self, prev, state, dt, sample):
        self._offer(state)

    def on_finish(self, state):
        if self.targets and (not self.snapshots or self.snapshots[-1][0] != state.t):
            self.snapshots.append((state.t, state.u, state.v))


def write_ledger_csv(path: Path, ledger: BoundLedger) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(VERSION_LINE)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in ledger.rows:
            writer.writerow([repr(float(row[c])) for c in COLUMNS])


def verdict_record(v: Verdict) -> dict:
    return {"key": v.key, "status": v.status,
            "margin": v.margin if math.isfinite(v.margin) else None, "detail": v.detail}


def write_snapshot(path: Path, grid: Grid, u: np.ndarray, v: np.ndarray) -> None:
    coords = [x.ravel() for x in grid.coordinates()]
    names = ["x", "y"][: grid.dimension]
    with open(path, "w", newline="") as fh:
        fh.write(VERSION_LINE)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + ["u", "v"])
        for row in zip(*coords, u.ravel(), v.ravel()):
            writer.writerow([repr(float(x)) for x in row])


def write_outputs(out_dir, *, config: dict, ledger: BoundLedger, verdicts: list[Verdict],
                  run_info: dict, grid: Grid | None = None,
                  snapshots: list[tuple[float, np.ndarray, np.ndarray]] = ()) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("snapshot_*.csv"):
        stale.unlink()
    write_ledger_csv(out / "ledger.csv", ledger)
    records = sorted((verdict_record(v) for v in verdicts), key=lambda r: r["key"])
    _dump(out / "verdicts.json", {"version": __version__, "exit_code": run_info.get("exit_code"),
                                  "verdicts": records})
    _dump(out / "meta.json", {"version": __version__, "config": config, "run": run_info,
                              "ledger_meta": ledger.meta})
    if grid is not None:
        for t, u, v in snapshots:
            write_snapshot(out / f"snapshot_{t:.10g}.csv", grid, u, v)
    return out


def load_ledger(out_dir) -> BoundLedger:
    out = Path(out_dir)
    meta = _restore(json.loads((out / "meta.json").read_text())["ledger_meta"])
    ledger = BoundLedger(meta=meta)
    with open(out / "ledger.csv", newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            ledger.rows.append({c: float(row[c]) for c in COLUMNS})
    return ledger


def load_verdicts(out_dir) -> list[dict]:
    return json.loads((Path(out_dir) / "verdicts.json").read_text())["verdicts"]
