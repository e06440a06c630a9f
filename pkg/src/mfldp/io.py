"""CSV tables, trajectory dumps, run manifests and optional SVG plots."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
from importlib import metadata
from pathlib import Path

import numpy as np

from . import rng


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def fmt(value) -> str:
    """Cell text: 17 significant digits for floats, lowercase booleans."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def write_csv(path, header, rows) -> Path:
    """RFC 4180 table (CRLF line ends, minimal quoting)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            cells = [row[h] for h in header] if isinstance(row, dict) else row
            w.writerow([fmt(v) for v in cells])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def trajectory_rows(paths: np.ndarray, steps, times, replica: int = 0):
    """Rows (replica, particle, k, t, c, w_1, ...) for paths of shape (N, K, d)."""
    N, K, d = paths.shape
    for j in range(N):
        for i in range(K):
            yield [replica, j, int(steps[i]), float(times[i])] + [float(v) for v in paths[j, i]]


def trajectory_header(d: int) -> list[str]:
    return ["replica", "particle", "k", "t", "c"] + [f"w_{i}" for i in range(1, d)]


def write_trajectories(path, paths, steps, times, replica: int = 0) -> Path:
    return write_csv(path, trajectory_header(paths.shape[2]), trajectory_rows(paths, steps, times, replica))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_manifest(out_dir, cfg, statuses: dict, outputs, workers: int, checked: bool, extra=None) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.sha256(),
        "config": cfg.document,
        "tool": "mfldp",
        "version": tool_version(),
        "seed": cfg.seed,
        "rng": rng.GENERATOR,
        "constants": cfg.constants(),
        "statuses": statuses,
        "workers": workers,
        "checked": checked,
        "warnings": list(cfg.warnings),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return path


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, logx: bool = False, logy: bool = False) -> Path:
    """SVG line plot; series maps a label to y values aligned with x."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, y in series.items():
        ax.plot(x, y, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
