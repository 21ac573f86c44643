import math

import numpy
import pytest
from numpy.testing import assert_allclose

from tandist.atoms import Atom, AtomParams, Pattern, pattern_norm, smooth_pattern
from tandist.exceptions import CalibrationError
from tandist.manifold import ManifoldGeometry
from tandist.transforms import DEFAULT_ROTATION_GAIN, TransformKind, TransformModel, calibrate_gains


def _pattern() -> Pattern:
    return Pattern.from_components(
        coeffs=[1.0, 0.5, -0.3],
        psis=[0.2, 1.0, -0.7],
        centers=[(0.4, 0.1), (-0.8, 0.6), (0.3, -1.0)],
        sigmas=[(1.0, 0.6), (0.7, 0.9), (0.5, 0.8)],
    )


def test_kind_axes() -> None:
    assert TransformModel(TransformKind.TRANSLATION_2D).axes == ("tx", "ty")
    assert TransformModel("TransRot3D").axes == ("theta", "tx", "ty")
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    assert model.dim == 4
    assert model.domain[3] == (0.0, 2.0)
    assert_allclose(model.identity(), [0.0, 0.0, 0.0, 1.0])


def test_unknown_kind_is_rejected() -> None:
    with pytest.raises(ValueError):
        TransformModel("Affine6D")  # type: ignore[arg-type]


def test_parameter_length_is_checked() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_3D)
    with pytest.raises(ValueError):
        model.check([0.0, 0.0])
    with pytest.raises(ValueError):
        model.check([0.0, math.nan, 0.0])


def test_identity_coordinate_map() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    points = numpy.array([[0.3, -1.2], [2.0, 0.5]])
    assert_allclose(model.coord_map(model.identity(), points), points)


def test_physical_components() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    angle, shift, scale = model.components([0.5, 0.1, -0.2, 1.6])
    assert angle == pytest.approx(0.5 * DEFAULT_ROTATION_GAIN)
    assert_allclose(shift, [0.1, -0.2])
    assert scale == pytest.approx(1.13)


def test_apply_to_pattern_matches_coordinate_map() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    p = _pattern()
    lam = numpy.array([0.7, -0.3, 0.25, 1.4])
    points = numpy.random.default_rng(0).uniform(-3.0, 3.0, size=(50, 2))

    transformed = model.apply_to_pattern(lam, p)

    assert_allclose(transformed.evaluate(points), p.evaluate(model.coord_map(lam, points)), rtol=1e-12, atol=1e-14)


def test_identity_leaves_atoms_unchanged() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_3D)
    p = _pattern()
    assert model.apply_to_pattern(model.identity(), p) == p


def test_inverse_undoes_coordinate_map() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    lam = numpy.array([-0.4, 0.3, 0.6, 0.7])
    points = numpy.array([[0.3, -1.2], [2.0, 0.5], [-0.1, 0.0]])
    round_trip = model.coord_map(model.inverse(lam), model.coord_map(lam, points))
    assert_allclose(round_trip, points, atol=1e-12)


def test_domain_membership() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    assert model.contains([0.5, -1.0])
    assert not model.contains([1.5, 0.0])
    assert model.on_boundary([1.0, 0.2])
    assert not model.on_boundary([0.3, 0.2])
    assert_allclose(model.clip([1.5, -3.0]), [1.0, -1.0])


def test_sample_stays_in_range() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    rng = numpy.random.default_rng(3)
    for _ in range(20):
        lam = model.sample(rng)
        assert numpy.all(numpy.abs(lam[:3]) <= 0.4)
        assert 0.4 <= lam[3] <= 1.6


def test_invalid_gain_is_rejected() -> None:
    with pytest.raises(ValueError):
        TransformModel(TransformKind.TRANS_ROT_3D, rotation_gain=0.0)


def test_calibrated_tangents_have_equal_norms() -> None:
    p = _pattern()
    model = calibrate_gains(TransformModel(TransformKind.TRANS_ROT_SCALE_4D), p)
    norms = ManifoldGeometry(model, p).tangent_norms(model.identity())
    assert_allclose(norms[0], norms[1], rtol=1e-9)
    assert_allclose(norms[3], norms[1], rtol=1e-9)


def test_calibration_fails_for_rotation_invariant_pattern() -> None:
    isotropic = Pattern((Atom(1.0, AtomParams(0.0, (0.0, 0.0), (1.0, 1.0))),))
    with pytest.raises(CalibrationError):
        calibrate_gains(TransformModel(TransformKind.TRANS_ROT_3D), isotropic)


def test_calibration_fails_for_zero_pattern() -> None:
    with pytest.raises(CalibrationError):
        calibrate_gains(TransformModel(TransformKind.TRANS_ROT_3D), Pattern())


def test_calibration_is_idempotent() -> None:
    p = _pattern()
    once = calibrate_gains(TransformModel(TransformKind.TRANS_ROT_SCALE_4D), p)
    twice = calibrate_gains(once, p)
    assert twice.rotation_gain == pytest.approx(once.rotation_gain, rel=1e-6)
    assert twice.scale_gain == pytest.approx(once.scale_gain, rel=1e-6)


@pytest.mark.parametrize(
    "kind, lam",
    [
        (TransformKind.TRANSLATION_2D, [0.3, -0.6]),
        (TransformKind.TRANS_ROT_3D, [0.8, -0.2, 0.5]),
        (TransformKind.TRANS_ROT_SCALE_4D, [0.8, -0.2, 0.5, 1.0]),
    ],
)
def test_smoothing_commutes_with_scale_free_transforms(kind: TransformKind, lam: list) -> None:
    model = TransformModel(kind)
    p = _pattern()
    points = numpy.random.default_rng(1).uniform(-4.0, 4.0, size=(200, 2))
    for rho in (0.5, 2.0):
        filtered_first = model.apply_to_pattern(lam, smooth_pattern(p, rho))
        transformed_first = smooth_pattern(model.apply_to_pattern(lam, p), rho)
        assert_allclose(filtered_first.evaluate(points), transformed_first.evaluate(points), rtol=1e-12, atol=1e-12)


def test_smoothing_does_not_commute_with_scaling() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    p = _pattern()
    lam = [0.8, -0.2, 0.5, 1.6]
    assert model.components(lam).scale != 1.0

    filtered_first = model.apply_to_pattern(lam, smooth_pattern(p, 2.0))
    transformed_first = smooth_pattern(model.apply_to_pattern(lam, p), 2.0)

    assert pattern_norm(filtered_first + (-transformed_first)) > 1e-3
