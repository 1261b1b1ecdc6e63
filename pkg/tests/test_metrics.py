import numpy as np
import pytest

from masklab import InputError, auc, deletion_curve, insertion_curve, score
from masklab.metrics import (Curve, curve_from_json, curve_to_json, make_curve,
                             read_curve_csv, write_curve_csv)


# ---------------------------------------------------------------------------
# auc identities


def test_auc_constant_one_is_exactly_one():
    curve = make_curve([0, 0.5, 1.0], [1.0, 1.0, 1.0])
    assert auc(curve) == 1.0


def test_auc_linear_descent_is_half():
    fractions = np.linspace(0, 1, 11)
    curve = make_curve(fractions, 1.0 - fractions)
    assert auc(curve) == pytest.approx(0.5, abs=1e-9)


def test_auc_step_curve_is_rectangle_up_to_discretization():
    fractions = np.linspace(0, 1, 21)
    confidences = np.where(fractions <= 0.5, 1.0, 0.0)
    # rectangle of width 0.5 plus at most one trapezoid of the step width
    assert auc(make_curve(fractions, confidences)) == pytest.approx(0.5, abs=0.05)


def test_curve_needs_two_points():
    with pytest.raises(InputError):
        make_curve([0.0], [1.0])
    with pytest.raises(InputError):
        auc(Curve(np.array([0.0]), np.array([1.0]), 0.0))


def test_curve_rejects_decreasing_fractions():
    with pytest.raises(InputError):
        make_curve([0.0, 0.6, 0.5, 1.0], [1, 1, 1, 1])


# ---------------------------------------------------------------------------
# deletion / insertion


def test_identical_image_and_baseline_give_constant_curves(trained_model, fixture_image):
    heat = np.random.default_rng(0).uniform(0, 1, (32, 32))
    full = score(trained_model, fixture_image, 1)
    for fn in (deletion_curve, insertion_curve):
        curve = fn(trained_model, fixture_image, heat, 1, steps=5, baseline=fixture_image)
        np.testing.assert_allclose(curve.confidences, full, atol=1e-12)
        assert curve.auc == pytest.approx(full)


def test_steps_two_gives_three_points(trained_model, fixture_image):
    baseline = np.zeros_like(fixture_image)
    heat = np.ones((32, 32))
    curve = deletion_curve(trained_model, fixture_image, heat, 1, steps=2, baseline=baseline)
    np.testing.assert_array_equal(curve.fractions, [0.0, 0.5, 1.0])
    assert curve.confidences.size == 3


def test_curve_endpoints(trained_model, fixture_image):
    rng = np.random.default_rng(1)
    heat = rng.uniform(0, 1, (32, 32))
    baseline = np.full_like(fixture_image, 0.2)
    full = score(trained_model, fixture_image, 1)
    base_conf = score(trained_model, baseline, 1)

    deletion = deletion_curve(trained_model, fixture_image, heat, 1, 7, baseline)
    insertion = insertion_curve(trained_model, fixture_image, heat, 1, 7, baseline)
    assert deletion.confidences[0] == pytest.approx(full, abs=1e-12)
    assert deletion.confidences[-1] == pytest.approx(base_conf, abs=1e-12)
    assert insertion.confidences[0] == pytest.approx(base_conf, abs=1e-12)
    assert insertion.confidences[-1] == pytest.approx(full, abs=1e-12)
    # insertion's last point and deletion's first point are both f_c(I)
    assert abs(insertion.confidences[-1] - deletion.confidences[0]) < 1e-6


def test_tied_heatmap_deletes_in_raster_order(trained_model, fixture_image):
    baseline = np.full_like(fixture_image, 0.2)
    ones = np.ones((32, 32))
    curve = deletion_curve(trained_model, fixture_image, ones, 1, steps=4, baseline=baseline)

    # independent construction: raster-order replacement
    expected = []
    flat_img = fixture_image.reshape(-1, 1)
    for k in range(5):
        n = int(np.ceil(k / 4 * 1024))
        frame = fixture_image.copy().reshape(-1, 1)
        frame[:n] = baseline.reshape(-1, 1)[:n]
        expected.append(score(trained_model, frame.reshape(32, 32, 1), 1))
    np.testing.assert_allclose(curve.confidences, expected, atol=1e-12)

    again = deletion_curve(trained_model, fixture_image, ones, 1, steps=4, baseline=baseline)
    np.testing.assert_array_equal(curve.confidences, again.confidences)


def test_curve_input_validation(trained_model, fixture_image):
    baseline = np.zeros_like(fixture_image)
    with pytest.raises(InputError):
        deletion_curve(trained_model, fixture_image, np.ones((7, 7)), 1, 5, baseline)
    with pytest.raises(InputError):
        deletion_curve(trained_model, fixture_image, np.ones((32, 32)), 1, 1, baseline)
    with pytest.raises(InputError):
        insertion_curve(trained_model, fixture_image, np.ones((32, 32)), 1, 5, None)


# ---------------------------------------------------------------------------
# serialization


def test_curve_csv_roundtrip(tmp_path):
    curve = make_curve([0, 0.25, 0.5, 0.75, 1], [0.9, 0.7, 0.4, 0.2, 0.1])
    path = tmp_path / "curve.csv"
    write_curve_csv(path, curve)
    again = read_curve_csv(path)
    np.testing.assert_allclose(again.fractions, curve.fractions)
    np.testing.assert_allclose(again.confidences, curve.confidences)
    assert again.auc == pytest.approx(curve.auc)


def test_curve_json_roundtrip():
    curve = make_curve([0, 0.5, 1], [1.0, 0.4, 0.0])
    again = curve_from_json(curve_to_json(curve))
    np.testing.assert_allclose(again.confidences, curve.confidences)
    assert again.auc == pytest.approx(curve.auc)
