import math
import tempfile
from pathlib import Path

import numpy
import pytest
from numpy.testing import assert_allclose
from scipy import signal

from tandist.atoms import (
    Atom,
    AtomParams,
    FilterKernel,
    Pattern,
    appendix_rate_terms,
    atom_product_integral,
    derivative_norm_bounds,
    derivative_norms,
    eval_gradient,
    eval_hessian,
    eval_pattern,
    exact_rate_terms,
    pattern_inner_product,
    pattern_norm,
    smooth_pattern,
)
from tandist.exceptions import DegenerateGeometryError
from tandist.raster import QuadratureSpec


def _unit_atom(sigma: float = 1.0) -> Pattern:
    return Pattern((Atom(1.0, AtomParams(0.0, (0.0, 0.0), (sigma, sigma))),))


def _small_pattern() -> Pattern:
    return Pattern.from_components(
        coeffs=[1.0, -0.6, 0.4],
        psis=[0.3, -1.1, 2.0],
        centers=[(0.5, -0.2), (-1.0, 0.8), (0.2, 1.3)],
        sigmas=[(0.8, 0.5), (1.2, 0.7), (0.6, 0.9)],
    )


def test_unit_atom_norm() -> None:
    assert pattern_norm(_unit_atom()) == pytest.approx(math.sqrt(math.pi / 2.0), rel=1e-12)


def test_empty_pattern_is_zero() -> None:
    empty = Pattern()
    assert empty.is_zero
    assert pattern_norm(empty) == 0.0
    assert pattern_inner_product(empty, _small_pattern()) == 0.0
    assert_allclose(empty.evaluate(numpy.zeros((3, 2))), numpy.zeros(3))


def test_product_integral_matches_quadrature() -> None:
    rng = numpy.random.default_rng(7)
    quad = QuadratureSpec(half_width=12.0, step=0.05)
    points = quad.points
    for _ in range(100):
        first, second = (
            AtomParams(rng.uniform(-math.pi, math.pi), tuple(rng.uniform(-2, 2, 2)), tuple(rng.uniform(0.5, 2.0, 2)))
            for _ in range(2)
        )
        values = Pattern((Atom(1.0, first),)).evaluate(points) * Pattern((Atom(1.0, second),)).evaluate(points)
        assert atom_product_integral(first, second) == pytest.approx(quad.integrate(values), rel=1e-6)


def test_inner_product_is_symmetric_and_bilinear() -> None:
    p = _small_pattern()
    q = _unit_atom(1.5)
    assert pattern_inner_product(p, q) == pytest.approx(pattern_inner_product(q, p), rel=1e-12)
    assert pattern_inner_product(p.scaled(2.0), q) == pytest.approx(2.0 * pattern_inner_product(p, q), rel=1e-12)
    assert pattern_norm(p + p) == pytest.approx(2.0 * pattern_norm(p), rel=1e-12)


def test_smoothing_matches_numerical_convolution() -> None:
    p = _small_pattern()
    quad = QuadratureSpec(half_width=8.0, step=0.05)
    points = quad.points
    kernel = FilterKernel(1.0)

    numerical = signal.fftconvolve(p.evaluate(points), kernel(points), mode="same") * quad.cell_area
    closed_form = smooth_pattern(p, kernel).evaluate(points)

    assert_allclose(closed_form, numerical, atol=1e-8)


@pytest.mark.parametrize("rho1, rho2", [(0.5, 1.0), (1.0, 0.5), (2.0, 3.0)])
def test_smoothing_twice_equals_smoothing_once(rho1: float, rho2: float) -> None:
    p = _small_pattern()
    points = numpy.random.default_rng(2).uniform(-3.0, 3.0, size=(200, 2))

    twice = smooth_pattern(smooth_pattern(p, rho1), rho2)
    once = smooth_pattern(p, math.hypot(rho1, rho2))

    assert_allclose(twice.evaluate(points), once.evaluate(points), rtol=1e-12, atol=1e-15)


def test_smoothing_with_zero_radius_is_identity() -> None:
    p = _small_pattern()
    assert smooth_pattern(p, 0.0) is p


def test_smoothing_preserves_integral() -> None:
    atom = _small_pattern().atoms[1]
    smoothed = smooth_pattern(Pattern((atom,)), 2.5).atoms[0]
    assert smoothed.coeff * smoothed.params.area == pytest.approx(atom.coeff * atom.params.area, rel=1e-12)
    assert smoothed.params.tau == atom.params.tau
    assert smoothed.params.psi == atom.params.psi


def test_negative_filter_radius_is_rejected() -> None:
    with pytest.raises(ValueError):
        FilterKernel(-1.0)


def _relative_error(numerical: numpy.ndarray, analytic: numpy.ndarray) -> numpy.ndarray:
    """Per-point error norm relative to the analytic value."""
    axes = tuple(range(1, analytic.ndim))
    error = numpy.sqrt(numpy.sum((numerical - analytic) ** 2, axis=axes))
    return error / numpy.sqrt(numpy.sum(analytic**2, axis=axes))


def test_gradient_and_hessian_match_finite_differences() -> None:
    p = _small_pattern()
    points = numpy.array([[0.1, 0.2], [-0.7, 0.4], [1.1, -0.3]])
    h = 1e-4
    dx, dy = numpy.array([h, 0.0]), numpy.array([0.0, h])

    gradient = p.gradient(points)
    numerical_gradient = numpy.stack(
        [
            (p.evaluate(points + dx) - p.evaluate(points - dx)) / (2 * h),
            (p.evaluate(points + dy) - p.evaluate(points - dy)) / (2 * h),
        ],
        axis=-1,
    )
    assert numpy.all(_relative_error(numerical_gradient, gradient) <= 1e-5)

    hessian = p.hessian(points)
    numerical_hessian = numpy.stack(
        [
            (p.gradient(points + dx) - p.gradient(points - dx)) / (2 * h),
            (p.gradient(points + dy) - p.gradient(points - dy)) / (2 * h),
        ],
        axis=-1,
    )
    assert numpy.all(_relative_error(numerical_hessian, hessian) <= 1e-5)


def test_degenerate_scale_is_rejected() -> None:
    with pytest.raises(DegenerateGeometryError):
        AtomParams(0.0, (0.0, 0.0), (1.0, 1e-9))


def test_orientation_is_wrapped() -> None:
    params = AtomParams(1.5 * math.pi, (0.0, 0.0), (1.0, 2.0))
    assert params.psi == pytest.approx(-0.5 * math.pi)


def test_pattern_file_round_trip() -> None:
    p = _small_pattern()
    with tempfile.TemporaryDirectory() as tempdir:
        path = Path(tempdir) / "pattern.json"
        p.save(path)
        assert Pattern.load(path) == p


def test_pattern_data_requires_all_fields() -> None:
    with pytest.raises(ValueError):
        Pattern.from_dict({"atoms": [{"c": 1.0, "psi": 0.0, "tau": [0.0, 0.0]}]})


def test_unit_atom_derivative_norms() -> None:
    quad = QuadratureSpec(half_width=8.0, step=0.025, max_points=1601)
    norms = derivative_norms(_unit_atom(), quad)
    assert norms.grad_norm == pytest.approx(math.sqrt(math.pi), rel=1e-6)
    assert norms.hess_norm == pytest.approx(2.0 * math.sqrt(math.pi), rel=1e-6)


def test_derivative_norm_bounds_dominate() -> None:
    quad = QuadratureSpec().fit(_small_pattern())
    for p in (_unit_atom(), _unit_atom(0.7), _small_pattern()):
        norms = derivative_norms(p, quad)
        bounds = derivative_norm_bounds(p)
        assert norms.grad_norm <= bounds.grad_norm * (1.0 + 1e-6)
        assert norms.hess_norm <= bounds.hess_norm * (1.0 + 1e-6)


def test_pair_terms_dominate_exact_values() -> None:
    quad = QuadratureSpec(half_width=10.0)
    atoms = [atom.params for atom in _small_pattern().atoms]
    for first in atoms:
        for second in atoms:
            bounds = appendix_rate_terms(first, second)
            exact = exact_rate_terms(first, second, quad)
            assert abs(exact.p) <= bounds.p_bar * (1.0 + 1e-6)
            assert abs(exact.m) <= bounds.m_bar * (1.0 + 1e-6)


def test_unit_atom_gradient_term_is_tight() -> None:
    params = _unit_atom().atoms[0].params
    exact = exact_rate_terms(params, params, QuadratureSpec(half_width=8.0))
    bounds = appendix_rate_terms(params, params)
    assert exact.l == pytest.approx(math.pi / 4.0, rel=1e-6)
    assert bounds.l_bar == pytest.approx(math.pi / 4.0, rel=1e-12)


def test_pointwise_evaluation() -> None:
    p = _small_pattern()
    point = [0.3, -0.4]
    assert eval_pattern(_unit_atom().scaled(2.0), [0.0, 0.0]) == pytest.approx(2.0)
    assert eval_pattern(p, point) == pytest.approx(float(p.evaluate(numpy.array([point]))[0]))
    assert_allclose(eval_gradient(p, point), p.gradient(numpy.array([point]))[0])
    assert_allclose(eval_hessian(p, point), p.hessian(numpy.array([point]))[0])
    assert eval_gradient(_unit_atom(), [0.0, 0.0]) == pytest.approx([0.0, 0.0])
