import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from octseg import image_io
from octseg.image_io import EmptyImageError, ImageFormatError
from octseg.types import Boundary, BScan, InvalidImageError, SegmentationResult


def _pgm(tmp_path, w, h, payload, maxval=255, name="img.pgm"):
    p = tmp_path / name
    p.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + bytes(payload))
    return p


def test_pgm_linear_normalization(tmp_path):
    img = image_io.load_grayscale(_pgm(tmp_path, 2, 2, [0, 255, 128, 64]))
    assert img.shape == (2, 2)
    assert img.intensity.ravel().tolist() == [0.0, 1.0, 128 / 255, 64 / 255]


def test_all_zero_pgm(tmp_path):
    img = image_io.load_grayscale(_pgm(tmp_path, 16, 16, [0] * 256))
    assert np.all(img.intensity == 0.0) and img.shape == (16, 16)


def test_ascii_pgm_with_comment(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# a comment\n3 1\n10\n0 5 10\n")
    assert image_io.load_grayscale(p).intensity.ravel().tolist() == [0.0, 0.5, 1.0]


def test_sixteen_bit_pgm(tmp_path):
    p = tmp_path / "w.pgm"
    p.write_bytes(b"P5 2 1 65535\n" + np.array([0, 65535], ">u2").tobytes())
    assert image_io.load_grayscale(p).intensity.ravel().tolist() == [0.0, 1.0]


def test_missing_file():
    with pytest.raises(FileNotFoundError, match="file not found"):
        image_io.load_grayscale("/nonexistent/scan.pgm")


def test_unsupported_format(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"GIF89a....")
    with pytest.raises(ImageFormatError):
        image_io.load_grayscale(p)


def test_rgb_png_rejected(tmp_path):
    p = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(p)
    with pytest.raises(ImageFormatError):
        image_io.load_grayscale(p)


def test_zero_sized_pgm(tmp_path):
    with pytest.raises(EmptyImageError):
        image_io.load_grayscale(_pgm(tmp_path, 0, 5, []))


def test_truncated_pgm(tmp_path):
    with pytest.raises(ImageFormatError):
        image_io.load_grayscale(_pgm(tmp_path, 4, 4, [1, 2, 3]))


def test_errors_are_distinct():
    assert not issubclass(ImageFormatError, EmptyImageError)
    assert not issubclass(EmptyImageError, ImageFormatError)


@settings(max_examples=25, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.sampled_from([8, 16]),
       st.sampled_from([".pgm", ".png"]))
def test_lossless_round_trip(tmp_path_factory, raw, depth, suffix):
    maxval = 255 if depth == 8 else 65535
    raw = raw.astype(np.int64) % (maxval + 1)
    p = tmp_path_factory.mktemp("rt") / f"x{suffix}"
    image_io.save_grayscale(BScan(raw / maxval), p, bit_depth=depth)
    back = image_io.load_grayscale(p).intensity
    assert np.array_equal(np.rint(back * maxval).astype(np.int64), raw.astype(np.int64))


def test_normalization_monotone(tmp_path):
    img = image_io.load_grayscale(_pgm(tmp_path, 256, 1, list(range(256))))
    assert np.all(np.diff(img.intensity.ravel()) > 0)


def test_bscan_validation():
    with pytest.raises(InvalidImageError):
        BScan(np.zeros((8, 32))).validate()
    with pytest.raises(InvalidImageError):
        BScan(np.full((16, 16), 1.5)).validate()
    with pytest.raises(InvalidImageError):
        BScan(np.full((16, 16), np.nan)).validate()


def _result(ilm, rnfl, rpe):
    return SegmentationResult(
        Boundary("ILM", ilm), Boundary("RNFL", rnfl), Boundary("RPE", rpe),
        metrics={"x": 1.0}, corrections=[{"interval": [0, 2]}],
    )


def test_boundaries_csv(tmp_path):
    p = tmp_path / "b.csv"
    image_io.write_boundaries(_result([5, 5, 6], [8, 9, 9], [20, 20, 21]), p, "csv")
    assert p.read_text().splitlines() == [
        "column,ilm_row,rnfl_row,rpe_row", "0,5,8,20", "1,5,9,20", "2,6,9,21",
    ]
    back = image_io.read_boundaries_csv(p)
    assert back["rnfl"].tolist() == [8, 9, 9]


def test_empty_result_rejected(tmp_path):
    with pytest.raises(ValueError):
        image_io.write_boundaries(_result([], [], []), tmp_path / "e.csv")


def test_json_round_trip(tmp_path):
    res = _result([5, 5, 6], [8, 9, 9], [20, 20, 21])
    p = tmp_path / "b.json"
    image_io.write_boundaries(res, p, "json")
    doc = json.loads(p.read_text())
    assert doc["metrics"] == {"x": 1.0} and doc["corrections"] == [{"interval": [0, 2]}]
    back = image_io.read_boundaries_json(p)
    for name, b in zip(("ilm", "rnfl", "rpe"), res.boundaries()):
        assert np.array_equal(back[name], b.row)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        image_io.write_boundaries(_result([1], [2], [3]), tmp_path / "missing" / "b.csv")


def test_overlay_flat_boundaries(tmp_path):
    img = BScan(np.full((20, 10), 0.5))
    res = _result([3] * 10, [8] * 10, [15] * 10)
    rgb = image_io.render_overlay(img, res)
    bg = np.array([128, 128, 128])
    assert (np.any(rgb != bg, axis=2)).sum() == 30
    p = tmp_path / "o.png"
    image_io.write_overlay(img, res, p)
    assert np.array_equal(np.asarray(Image.open(p)), rgb)


def test_overlay_overlap_takes_later_colour():
    img = BScan(np.full((20, 10), 0.5))
    rgb = image_io.render_overlay(img, _result([4] * 10, [4] * 10, [15] * 10))
    assert (np.any(rgb != 128, axis=2)).sum() == 20
    assert tuple(rgb[4, 0]) == image_io.OVERLAY_COLORS["rnfl"]


def test_overlay_out_of_bounds():
    img = BScan(np.full((20, 10), 0.5))
    with pytest.raises(ValueError):
        image_io.render_overlay(img, _result([4] * 10, [8] * 10, [20] * 10))


def test_metrics_csv_with_scale(tmp_path):
    from octseg.metrics import MetricsConfig, compute_metrics

    img = BScan(np.full((30, 3), 0.5))
    res = _result([2, 2, 2], [5, 6, 7], [20, 20, 20])
    res.metrics, res.profiles = compute_metrics(img, res.ilm, res.rnfl, res.rpe, MetricsConfig(axial_scale=2.0))
    p = tmp_path / "m.csv"
    image_io.write_metrics_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "column,rnfl_px,total_px,rnfl_um,total_um"
    assert lines[1] == "0,3,18,6,36"
