import hashlib
import json

import pandas as pd

from workbench.artifact_writer import ArtifactWriter, csv_body, dat_body, line_figure


def test_csv_keeps_full_precision_and_lf_endings():
    frame = pd.DataFrame({"theta": [0.1, 1.0 / 3.0], "value": [2.0, -0.5]})
    body = csv_body(frame).decode("utf-8")
    assert body.splitlines()[0] == "theta,value"
    assert "0.33333333333333331" in body
    assert "\r" not in body
    assert dat_body(frame).decode("utf-8").startswith("# theta value\n")


def test_writer_records_digests(tmp_path):
    writer = ArtifactWriter(str(tmp_path / "run"), write_dat=True, write_plots=False)
    frame = pd.DataFrame({"x": [1.0, 2.0], "y": [3.0, 4.0]})
    path = writer.write_table("table", frame)
    assert writer.write_figure("table", line_figure(frame, "x", ["y"], "y vs x")) is None
    writer.write_manifest({"subcommand": "demo", "params": {"seed": 1}}, "0.0.0", 0)

    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["artifacts"]["table"]["sha256"] == hashlib.sha256(path.read_bytes()).hexdigest()
    assert manifest["artifacts"]["table"]["rows"] == 2
    assert "table.dat" in manifest["artifacts"]
    assert manifest["params"] == {"seed": 1}
    assert manifest["version"] == "0.0.0"


def test_figures_are_written_when_enabled(tmp_path):
    writer = ArtifactWriter(str(tmp_path), write_plots=True)
    frame = pd.DataFrame({"x": [0.0, 1.0], "y": [1.0, 0.5], "err": [0.1, 0.1]})
    path = writer.write_figure("curve", line_figure(frame, "x", ["y"], "curve", error_column="err"))
    assert path.exists()
    assert "curve.html" in writer.artifacts
