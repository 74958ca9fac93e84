"""
Artifact Writer
Writes result tables as CSV (17 significant digits, LF endings, header row),
optional .dat mirrors and plotly figures, and the run manifest.
"""

from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional
import hashlib
import json
import logging

import pandas as pd
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


def csv_body(frame: pd.DataFrame) -> bytes:
    """CSV with a header row, 17 significant digits and LF endings."""
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n").encode("utf-8")


def dat_body(frame: pd.DataFrame) -> bytes:
    header = "# " + " ".join(str(c) for c in frame.columns) + "\n"
    rows = frame.to_csv(index=False, header=False, sep=" ", float_format=FLOAT_FORMAT, lineterminator="\n")
    return (header + rows).encode("utf-8")


def sha256_hex(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    return value


class ArtifactWriter:
    """Collects the artifacts of one run under its output directory"""

    def __init__(self, out_dir: str, write_dat: bool = False, write_plots: bool = False):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.write_dat = write_dat
        self.write_plots = write_plots
        self.artifacts: Dict[str, Dict[str, Any]] = {}

    def _record(self, name: str, path: Path, payload: bytes, **extra) -> Path:
        path.write_bytes(payload)
        self.artifacts[name] = {"path": path.name, "sha256": sha256_hex(payload), **extra}
        logger.info(f"Wrote {path}")
        return path

    def write_table(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._record(name, self.out_dir / f"{name}.csv", csv_body(frame), rows=int(len(frame)))
        if self.write_dat:
            self._record(f"{name}.dat", self.out_dir / f"{name}.dat", dat_body(frame))
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        body = (json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n").encode("utf-8")
        return self._record(name, self.out_dir / f"{name}.json", body)

    def write_figure(self, name: str, fig: go.Figure) -> Optional[Path]:
        if not self.write_plots:
            return None
        path = self.out_dir / f"{name}.html"
        fig.write_html(str(path), include_plotlyjs="cdn")
        self.artifacts[f"{name}.html"] = {"path": path.name}
        logger.info(f"Wrote figure {path}")
        return path

    def write_manifest(self, resolved: Dict[str, Any], version: str, status: int) -> Path:
        """manifest.json: resolved config, version, artifact digests and a timestamp."""
        manifest = {
            "version": version,
            **_jsonable(resolved),
            "status": status,
            "artifacts": self.artifacts,
            "created": datetime.now(timezone.utc).isoformat(),
        }
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Wrote manifest {path}")
        return path


def line_figure(frame: pd.DataFrame, x: str, columns, title: str, error_column: Optional[str] = None,
                y_title: str = "") -> go.Figure:
    """
    Line chart of one or more columns against x

    Args:
        frame: Source table
        x: Column for the horizontal axis
        columns: Columns drawn as separate traces
        title: Figure title
        error_column: Optional column of symmetric error bars for every trace
        y_title: Vertical axis title

    Returns:
        plotly Figure
    """
    fig = go.Figure()
    for column in columns:
        error = None
        if error_column is not None and column == columns[0]:
            error = dict(type="data", array=frame[error_column].tolist(), visible=True)
        fig.add_trace(go.Scatter(x=frame[x], y=frame[column], mode="lines+markers", name=column, error_y=error))
    fig.update_layout(title=title, xaxis_title=x, yaxis_title=y_title, height=450,
                      margin=dict(l=40, r=20, t=50, b=40))
    return fig
