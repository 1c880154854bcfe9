import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octseg.layers import segment_all
from octseg.metrics import MetricsConfig, OrderingError, band_intensity, compute_metrics, thickness_profile
from octseg.phantom import generate, ramp_thickness_spec
from octseg.types import Boundary, BScan


def test_vanished_layer_is_zero():
    p = thickness_profile(Boundary("ILM", [20] * 5), Boundary("RNFL", [20] * 5))
    assert p.px.tolist() == [0] * 5


def test_thickness_with_axial_scale():
    p = thickness_profile(Boundary("ILM", [10, 10]), Boundary("RPE", [50, 52]), 3.9)
    assert p.px.tolist() == [40, 42]
    assert p.um == pytest.approx([156.0, 163.8])
    assert p.summary()["mean_um"] == pytest.approx(159.9)


def test_thickness_ordering_error():
    with pytest.raises(OrderingError):
        thickness_profile(Boundary("ILM", [10, 30]), Boundary("RPE", [20, 20]))


def test_ramp_profile_recovered():
    img, truth = generate(ramp_thickness_spec(12))
    res = segment_all(img)
    expected = truth[1].row - truth[0].row
    assert expected.min() == 0 and expected.max() == 12
    assert np.all(np.abs(res.profiles["ILM-RNFL"].px - expected) <= 2)


def test_uniform_band_intensity():
    a = np.full((20, 6), 0.1)
    a[5:10] = 0.7
    assert band_intensity(BScan(a), np.full(6, 5), np.full(6, 9)) == pytest.approx(0.7, abs=1e-15)


def test_two_column_band_mean():
    a = np.zeros((10, 2))
    a[2:6, 0] = 0.2
    a[2:6, 1] = 0.6
    assert band_intensity(BScan(a), [2, 2], [5, 5]) == pytest.approx(0.4, abs=1e-15)


def test_zero_height_column_uses_single_pixel():
    a = np.zeros((10, 2))
    a[4, 0] = 0.9
    assert band_intensity(BScan(a), [4, 0], [4, 0]) == pytest.approx(0.45)


def _loop_band(a, up, lo):
    total, n = 0.0, 0
    for c in range(a.shape[1]):
        for r in range(up[c], lo[c] + 1):
            total += a[r, c]
            n += 1
    return total / n


@pytest.mark.parametrize("seed", range(5))
def test_band_intensity_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((40, 30))
    up = rng.integers(0, 20, 30)
    lo = up + rng.integers(0, 20, 30)
    assert band_intensity(BScan(a), up, lo) == pytest.approx(_loop_band(a, up, lo), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.integers(0, 8), st.randoms(use_true_random=False))
def test_band_intensity_column_permutation(top, height, rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    a = rng.random((20, 12))
    perm = np.array(rnd.sample(range(12), 12))
    up, lo = np.full(12, top), np.full(12, top + height)
    x = band_intensity(BScan(a), up, lo)
    y = band_intensity(BScan(a[:, perm]), up, lo)
    assert x == pytest.approx(y, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=30))
def test_thickness_decomposition_exact(triples):
    ilm = np.array([sorted(t)[0] for t in triples])
    rnfl = np.array([sorted(t)[1] for t in triples])
    rpe = np.array([sorted(t)[2] for t in triples])
    total = thickness_profile(ilm, rpe).px
    parts = thickness_profile(ilm, rnfl).px + thickness_profile(rnfl, rpe).px
    assert np.array_equal(total, parts)


def test_compute_metrics_keys_and_rpe_window():
    a = np.full((40, 8), 0.2)
    a[20:23] = 0.9
    img = BScan(a)
    ilm, rnfl, rpe = Boundary("ILM", [5] * 8), Boundary("RNFL", [9] * 8), Boundary("RPE", [21] * 8)
    metrics, profiles = compute_metrics(img, ilm, rnfl, rpe, MetricsConfig(rpe_halfwidth=1))
    assert set(profiles) == {"ILM-RNFL", "RNFL-RPE", "ILM-RPE"}
    assert metrics["rpe_intensity"] == pytest.approx(0.9)
    assert metrics["rnfl_thickness"]["mean_px"] == 4.0
    assert metrics["total_retinal_thickness"]["max_px"] == 16
    # RNFL band covers rows 6..9, below the ILM row
    assert metrics["rnfl_mean_intensity"] == pytest.approx(0.2)


def test_metrics_config_validation():
    with pytest.raises(ValueError):
        MetricsConfig(axial_scale=0)
    with pytest.raises(ValueError):
        MetricsConfig(rpe_halfwidth=-1)
