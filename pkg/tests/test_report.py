import csv
import json

import numpy as np
import pytest

from hoitrack.errors import SchemaError
from hoitrack.report import evaluate_tracking, render_figures, write_per_frame_csv
from hoitrack.sequence import write_eval_report


def perfect_track(seq, indices=(0, 2, 4, 6)):
    gt = seq.gt()
    frames = []
    for i in indices:
        g = gt["frames"][i]
        frames.append(
            {
                "index": i,
                "obj_q_wxyz": g["obj_q_wxyz"],
                "obj_T": g["obj_T"],
                "hand_T": g["hand_T"],
                "scale": gt["object_scale"],
            }
        )
    return {"frames": frames, "iof_index": 2, "failure": {"flag": False, "reason": ""}}


@pytest.fixture(scope="module")
def perfect_report(synth_sequence):
    return evaluate_tracking(synth_sequence, perfect_track(synth_sequence), n_samples=500)


def test_perfect_track_scores_zero(perfect_report):
    r = perfect_report
    assert r.rot_err_deg == pytest.approx(0.0, abs=1e-6)
    assert r.trans_err_mm == pytest.approx(0.0, abs=1e-9)
    assert r.cd_cm2 == pytest.approx(0.0, abs=1e-12)
    assert r.cdh_cm2 == pytest.approx(0.0, abs=1e-9)
    assert r.mpjpe_mm == pytest.approx(0.0, abs=1e-6)
    assert r.f5_pct == 100.0 and r.f10_pct == 100.0
    assert r.add_pct == 100.0 and r.adds_pct == 100.0
    assert r.success_rate_pct == 100.0
    assert len(r.per_frame) == 4


def test_known_offset_reflected(synth_sequence):
    track = perfect_track(synth_sequence)
    for f in track["frames"]:
        f["obj_T"] = list(np.array(f["obj_T"]) + np.array([0.002, 0.0, 0.0]))
    r = evaluate_tracking(synth_sequence, track, n_samples=500)
    assert r.trans_err_mm == pytest.approx(2.0, abs=1e-9)
    assert r.rot_err_deg == pytest.approx(0.0, abs=1e-6)


def test_failed_track_success_rate(synth_sequence):
    track = perfect_track(synth_sequence)
    track["failure"] = {"flag": True, "reason": "lost"}
    r = evaluate_tracking(synth_sequence, track, n_samples=200)
    assert r.success_rate_pct == 0.0


def test_unknown_frame_rejected(synth_sequence):
    track = perfect_track(synth_sequence)
    track["frames"][0]["index"] = 99
    with pytest.raises(SchemaError):
        evaluate_tracking(synth_sequence, track, n_samples=200)


def test_empty_track_rejected(synth_sequence):
    with pytest.raises(SchemaError):
        evaluate_tracking(synth_sequence, {"frames": []}, n_samples=200)


def test_csv_columns_and_rows(perfect_report, tmp_path):
    p = tmp_path / "per_frame.csv"
    write_per_frame_csv(perfect_report, p)
    with open(p) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert list(rows[0]) == [
        "index", "rot_deg", "trans_mm", "add_pass", "adds_pass",
        "mpjpe_mm", "cd_cm2", "f5_pct", "f10_pct", "cdh_cm2",
    ]
    assert [r["index"] for r in rows] == ["0", "2", "4", "6"]


def test_figures_written(perfect_report, tmp_path):
    written = render_figures(perfect_report, tmp_path / "report")
    assert len(written) == 2
    for p in written:
        assert p.suffix == ".png"
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_report_json_contains_conventions(perfect_report, tmp_path):
    p = tmp_path / "report.json"
    write_eval_report(perfect_report, p)
    payload = json.loads(p.read_text())
    assert "conventions" in payload
    assert "cd" in payload["conventions"]
    assert payload["f5_pct"] == 100.0
    assert len(payload["per_frame"]) == 4
