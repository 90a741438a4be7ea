"""Run artifacts on disk: report.json, curves.csv, error_matrix.csv and boundary grids.

Every file is written to a temporary sibling first and moved into place, so
an interrupted run never leaves a half-written artifact behind.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DimensionError, ParameterError
from .nn import ModelParams, mlp_forward, save_params
from .trainer import Report

CURVE_COLUMNS = ("iteration", "total_loss", "ce_loss", "method_loss", "target_accuracy")


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def curves_rows(report: Report):
    return zip(report.iterations, report.total_loss, report.ce_loss,
               report.method_loss, report.target_accuracy)


def write_report(report: Report, out_dir, config: Optional[Dict] = None,
                 manifest: Optional[Dict] = None,
                 params: Optional[ModelParams] = None) -> Dict[str, Path]:
    """Write the standard artifact set for one run and return their paths.

    ``report.json`` holds the echoed config and every report field except
    wall time, so reruns from the same manifest produce identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {"config": config or {}, "report": report.to_dict()}
    paths = {
        "report": atomic_write_text(out / "report.json", _json_text(body)),
        "curves": atomic_write_text(out / "curves.csv",
                                    _csv_text(CURVE_COLUMNS, curves_rows(report))),
    }
    k = len(report.error_matrix)
    paths["error_matrix"] = atomic_write_text(
        out / "error_matrix.csv",
        _csv_text([f"pred_{j}" for j in range(k)], report.error_matrix),
    )
    if manifest is not None:
        paths["manifest"] = atomic_write_text(out / "manifest.json", _json_text(manifest))
    if params is not None:
        paths["model"] = save_params(params, out / "model.json")
    return paths


def load_report(path) -> Tuple[Dict, Report]:
    """Read a report.json written by :func:`write_report`; returns (config, report)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    data = json.loads(path.read_text())
    if "report" not in data:
        raise ContractError(f"{path}: not a report file")
    return data.get("config", {}), Report.from_dict(data["report"])


def boundary_grid(params: ModelParams, bounds: Tuple[float, float, float, float],
                  resolution: int) -> np.ndarray:
    """Predictions on a ``resolution`` x ``resolution`` grid over 2D input space.

    Rows are ``(x, y, predicted class, max probability)``; ``y`` varies in the
    outer loop and ``x`` in the inner one.
    """
    if params.d_in != 2:
        raise DimensionError(f"boundary export needs a 2-input model, got d_in={params.d_in}")
    if resolution < 2:
        raise ParameterError(f"grid resolution must be at least 2, got {resolution}")
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmin < xmax and ymin < ymax):
        raise ParameterError(f"empty bounds {bounds}")
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)  # gy constant along each row: y outer, x inner
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    _, logits = mlp_forward(params, pts)
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    return np.column_stack([pts, np.argmax(probs, axis=1), probs.max(axis=1)])


def export_boundary_grid(params: ModelParams, bounds, resolution: int, path) -> Path:
    grid = boundary_grid(params, bounds, resolution)
    rows = ((float(x), float(y), int(c), float(p)) for x, y, c, p in grid)
    return atomic_write_text(path, _csv_text(("x", "y", "pred", "confidence"), rows))
