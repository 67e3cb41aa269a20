"""CSV, JSON and SVG output for trajectories and experiment summaries."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

TRAJECTORY_COLUMNS = ["t", "s", "lambda", "b", "gamma_unwrapped", "w", "eps_h1", "eps_weighted_l2",
                      "mod_norm", "H", "S", "mass", "energy", "flags"]
SIMULATION_COLUMNS = ["t", "mass", "energy", "momentum", "grad_norm", "dt"]


def fmt(v) -> str:
    """Fixed 17-significant-digit rendering so identical runs give identical bytes."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, columns: list[str], rows: Iterable[Mapping]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for row in rows:
            wr.writerow([fmt(row[c]) for c in columns])
            n += 1
    return n


def jsonable(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(asdict(obj))
    if isinstance(obj, Mapping):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(data), indent=2, sort_keys=True) + "\n")


# --- simulation ----------------------------------------------------------------------
def simulation_rows(traj) -> list[dict]:
    return [
        {"t": t, "mass": r.mass, "energy": r.energy, "momentum": r.momentum[0],
         "grad_norm": r.grad_norm, "dt": dt}
        for t, r, dt in zip(traj.times, traj.reports, traj.snapshot_dt)
    ]


# --- experiment ------------------------------------------------------------------------
def run_summary(record) -> dict:
    from .experiment import InsufficientWindow, rate_fits

    n = len(record)
    summary = {
        "label": record.label, "samples": n, "stop_reason": record.stop_reason,
        "s_star": record.s_star, "steps": record.steps, "drift": record.drift, "mu": record.mu,
        "energy_params": record.params, "refined_bootstrap": record.refined,
    }
    if n:
        keys = list(record.flags[0])
        summary["flag_fraction"] = {k: float(np.mean([f[k] for f in record.flags])) for k in keys}
        summary["s_range"] = [float(record.s.min()), float(record.s.max())]
        try:
            summary["rate_fits"] = [asdict(f) for f in rate_fits(record)]
        except InsufficientWindow as exc:
            summary["rate_fits"] = {"error": str(exc)}
    else:
        summary["flag_fraction"] = {}
        summary["rate_fits"] = []
    return summary


def _plot_record(record, directory: Path, stem: str) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "blowup-lab"
    meta = {"Date": None}
    paths = []
    t = np.abs(record.t)

    fig, ax = plt.subplots(figsize=(5, 4))
    if len(record):
        ax.loglog(t, record.column("lambda"), label="lambda")
        ax.loglog(t, record.column("b"), "--", label="b")
        ax.loglog(t, t, ":", color="gray", label="|t|")
        ax.legend()
    ax.set_xlabel("|t|")
    ax.set_title("scaling and chirp")
    p = directory / f"{stem}_lambda_b.svg"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(5, 4))
    mod = record.mod_norms() if len(record) else np.array([])
    ok = np.isfinite(mod) & (mod > 0)
    if ok.any():
        ax.loglog(record.s[ok], mod[ok])
    ax.set_xlabel("s")
    ax.set_ylabel("|Mod(s)|")
    p = directory / f"{stem}_mod.svg"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(5, 3))
    if len(record):
        keys = list(record.flags[0])
        grid = np.array([[f[k] for f in record.flags] for k in keys], dtype=float)
        ax.imshow(grid, aspect="auto", interpolation="nearest", cmap="RdYlGn", vmin=0, vmax=1,
                  extent=(record.s.min(), record.s.max(), len(keys) - 0.5, -0.5))
        ax.set_yticks(range(len(keys)))
        ax.set_yticklabels(keys)
    ax.set_xlabel("s")
    ax.set_title("bootstrap flags")
    fig.tight_layout()
    p = directory / f"{stem}_flags.svg"
    fig.savefig(p, metadata=meta)
    plt.close(fig)
    paths.append(p)
    return paths


def emit_outputs(results, cfg, directory=None, extra: dict | None = None) -> list[Path]:
    """Write one trajectory CSV per run, summary.json and (if enabled) SVG plots.

    ``results`` is a TrajectoryRecord or a mapping label -> TrajectoryRecord;
    ``cfg`` is a RunConfig or its output section.
    """
    out = getattr(cfg, "output", cfg)
    directory = Path(directory if directory is not None else out.directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not isinstance(results, Mapping):
        results = {results.label or "run": results}
    written: list[Path] = []
    summary = {"runs": {}}
    for label, rec in results.items():
        stem = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(label))
        p = directory / f"{stem}_trajectory.csv"
        write_csv(p, TRAJECTORY_COLUMNS, rec.rows())
        written.append(p)
        summary["runs"][label] = run_summary(rec)
        if out.plots:
            written.extend(_plot_record(rec, directory, stem))
    if extra:
        summary.update(extra)
    p = directory / "summary.json"
    write_json(p, summary)
    written.append(p)
    return written
