import json
import subprocess
import sys

import numpy as np
import pytest

from octseg import image_io
from octseg.cli import main
from octseg.config import ConfigError, RunConfig, load_config


# config --------------------------------------------------------------------

def test_defaults_without_file(monkeypatch):
    monkeypatch.delenv("OCTSEG_CONFIG", raising=False)
    cfg = load_config()
    assert cfg.phase2.k == 0.9 and cfg.graph.w_min == 1e-5 and cfg.io.formats == ["csv", "json"]


def test_sections_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("phase2:\n  k: 0.8\ngraph:\n  max_vertical_step: 2\nio:\n  formats: json\n")
    cfg = load_config(p)
    assert cfg.phase2.k == 0.8 and cfg.graph.max_vertical_step == 2 and cfg.io.formats == ["json"]
    assert cfg.segment_config().phase2.k == 0.8


def test_env_fallback(tmp_path, monkeypatch):
    p = tmp_path / "c.yaml"
    p.write_text("metrics:\n  axial_scale: 3.9\n")
    monkeypatch.setenv("OCTSEG_CONFIG", str(p))
    assert load_config().metrics.axial_scale == 3.9


@pytest.mark.parametrize(
    "text",
    [
        "phase2:\n  k: 1.5\n",
        "phase2:\n  bogus: 1\n",
        "nonsense:\n  a: 1\n",
        "preprocess:\n  smooth_kernel: 4\n",
        "io:\n  formats: xml\n",
        "- just\n- a list\n",
        "phantom:\n  rowz: 3\n",
    ],
)
def test_invalid_configs(tmp_path, text):
    p = tmp_path / "c.yaml"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_round_trip_dict():
    cfg = RunConfig()
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


# segment -------------------------------------------------------------------

@pytest.fixture
def phantom_dir(tmp_path):
    d = tmp_path / "ph"
    assert main(["phantom", "--out", str(d), "--seed", "5"]) == 0
    return d


def test_phantom_writes_two_files(phantom_dir):
    assert sorted(p.name for p in phantom_dir.iterdir()) == ["phantom_seed5.pgm", "phantom_seed5.truth.csv"]


def test_phantom_same_seed_identical_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    spec = tmp_path / "s.yaml"
    spec.write_text("speckle_sigma: 0.1\n")
    assert main(["phantom", str(spec), "--out", str(a), "--seed", "3"]) == 0
    assert main(["phantom", str(spec), "--out", str(b), "--seed", "3"]) == 0
    for name in ("phantom_seed3.pgm", "phantom_seed3.truth.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_phantom_ordering_violation_exit_2(tmp_path, capsys):
    spec = tmp_path / "bad.yaml"
    spec.write_text("ilm_curve: [[0, 60], [255, 60]]\nrnfl_curve: [[0, 50], [255, 50]]\n")
    assert main(["phantom", str(spec), "--out", str(tmp_path / "o")]) == 2
    assert "invalid phantom spec" in capsys.readouterr().err


def test_segment_single_file(phantom_dir, tmp_path):
    out = tmp_path / "out"
    assert main(["segment", str(phantom_dir / "phantom_seed5.pgm"), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == [
        "phantom_seed5.boundaries.csv", "phantom_seed5.json", "phantom_seed5.metrics.csv",
    ]
    doc = json.loads((out / "phantom_seed5.json").read_text())
    assert doc["source_id"] == "phantom_seed5.pgm" and len(doc["boundaries"]["rnfl"]) == doc["columns"]


def test_segment_overlay_and_format(phantom_dir, tmp_path):
    out = tmp_path / "out"
    args = ["segment", str(phantom_dir), "--out", str(out), "--overlay", "--format", "json"]
    assert main(args) == 0
    assert sorted(p.name for p in out.iterdir()) == ["phantom_seed5.json", "phantom_seed5.overlay.png"]


def test_segment_batch_with_corrupt_file(phantom_dir, tmp_path, capsys):
    (phantom_dir / "corrupt.pgm").write_bytes(b"P5\n10 10\n255\n\x00")
    out = tmp_path / "out"
    assert main(["segment", str(phantom_dir), "--out", str(out)]) == 1
    assert (out / "phantom_seed5.json").exists()
    assert not list(out.glob("corrupt*"))
    err = capsys.readouterr().err
    assert "corrupt.pgm" in err


def test_segment_bad_config_exit_2(phantom_dir, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("phase2:\n  k: 1.5\n")
    out = tmp_path / "out"
    assert main(["segment", str(phantom_dir), "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_segment_no_inputs_exit_2(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["segment", str(empty), "--out", str(tmp_path / "o")]) == 2


def test_segment_bad_jobs_exit_2(phantom_dir, tmp_path):
    assert main(["segment", str(phantom_dir), "--jobs", "0", "--out", str(tmp_path / "o")]) == 2


def test_segment_small_image_fails_cleanly(tmp_path, capsys):
    p = tmp_path / "tiny.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(16))
    assert main(["segment", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "tiny.pgm" in capsys.readouterr().err


# eval ----------------------------------------------------------------------

def _write_csv(path, offset=0, cols=20):
    rows = np.arange(cols)
    lines = ["column,ilm_row,rnfl_row,rpe_row"]
    lines += [f"{c},{20 + offset},{30 + offset},{80 + offset}" for c in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_eval_identical(tmp_path, capsys):
    a = _write_csv(tmp_path / "a.csv")
    assert main(["eval", str(a), str(a), "--tolerance", "0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["pass"] and doc["ilm"]["mae_px"] == 0.0


def test_eval_offset_fails(tmp_path):
    a = _write_csv(tmp_path / "a.csv", offset=5)
    t = _write_csv(tmp_path / "t.csv")
    assert main(["eval", str(a), str(t), "--tolerance", "2"]) == 1


def test_eval_per_boundary_tolerance(tmp_path):
    a = _write_csv(tmp_path / "a.csv", offset=1)
    t = _write_csv(tmp_path / "t.csv")
    assert main(["eval", str(a), str(t), "--tolerance", "ilm=1,rnfl=1,rpe=1"]) == 0


def test_eval_column_mismatch_exit_2(tmp_path):
    a = _write_csv(tmp_path / "a.csv", cols=20)
    t = _write_csv(tmp_path / "t.csv", cols=21)
    assert main(["eval", str(a), str(t)]) == 2


def test_eval_on_segmented_phantom(phantom_dir, tmp_path):
    out = tmp_path / "out"
    main(["segment", str(phantom_dir), "--out", str(out)])
    pred = out / "phantom_seed5.boundaries.csv"
    truth = phantom_dir / "phantom_seed5.truth.csv"
    assert main(["eval", str(pred), str(truth), "--tolerance", "1"]) == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "octseg", "phantom", "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert image_io.load_grayscale(tmp_path / "phantom_seed0.pgm").shape == (160, 256)
