import math
from typing import Sequence

import numpy
import pytest
from scipy import optimize

from tandist.atoms import Atom, AtomParams, Pattern, derivative_norms, pattern_norm, smooth_pattern
from tandist.bounds import (
    BoundInputs,
    EffectiveNoise,
    convergence_check,
    convergence_radius,
    decay_factor,
    distance_error_bound,
    filtered_bound,
    filtered_bound_at,
    initial_filter_size,
    iteration_bound,
    measure_filtered_noise,
    optimal_filter_size,
    rate_slope,
    theorem1_bound,
)
from tandist.manifold import GeometryConstants, ManifoldGeometry, summarize_metric
from tandist.raster import QuadratureSpec, synth_noise_pattern
from tandist.register import tangent_step
from tandist.transforms import TransformKind, TransformModel


def _blob(sigma: float = 1.0) -> Pattern:
    return Pattern((Atom(1.0, AtomParams(0.0, (0.0, 0.0), (sigma, sigma))),))


def _pattern() -> Pattern:
    return Pattern.from_components(
        coeffs=[1.0, 0.7, 0.5],
        psis=[0.4, -0.9, 1.7],
        centers=[(0.6, 0.2), (-0.9, 0.5), (0.1, -1.1)],
        sigmas=[(1.4, 0.8), (1.0, 1.6), (0.9, 1.2)],
    )


def _blob_constants(sigma: float = 2.0) -> GeometryConstants:
    return GeometryConstants(
        K=math.sqrt(1.5 * math.pi) / sigma,
        T=math.sqrt(0.5 * math.pi),
        C1=math.sqrt(math.pi),
        C2=math.sqrt(6.0 / math.pi) / sigma,
    )


def test_alignment_bound_formula() -> None:
    metric = summarize_metric(numpy.diag([1.0, 4.0]))
    inputs = BoundInputs(K=2.0, metric=metric, nu=0.5, delta=numpy.array([0.1, -0.2]))
    expected = 2.0 * (0.5 * math.sqrt(5.0) * 0.3**2 + math.sqrt(2.0) * 0.5 * 0.3)
    assert theorem1_bound(inputs) == pytest.approx(expected, rel=1e-12)

    split = filtered_bound(inputs)
    assert split.e1_hat == pytest.approx(2.0 * 0.5 * math.sqrt(5.0) * 0.09, rel=1e-12)
    assert split.total == pytest.approx(expected, rel=1e-12)


def test_alignment_bound_vanishes_at_reference() -> None:
    metric = summarize_metric(numpy.eye(3))
    assert theorem1_bound(BoundInputs(K=5.0, metric=metric, nu=1.0, delta=numpy.zeros(3))) == 0.0


def test_bound_inputs_reject_negative_values() -> None:
    with pytest.raises(ValueError):
        BoundInputs(K=-1.0, metric=summarize_metric(numpy.eye(2)), nu=0.0, delta=numpy.zeros(2))


@pytest.mark.slow
def test_alignment_bound_dominates_one_step_error() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _pattern())
    norm = pattern_norm(geometry.pattern)
    rng = numpy.random.default_rng(11)
    for trial in range(200):
        q = model.apply_to_pattern(model.sample(rng), geometry.pattern)
        if trial % 2:
            q = q + synth_noise_pattern(target_nu=0.1 * norm, seed=trial)
        report = filtered_bound_at(geometry, q, 0.0, model.identity())
        step = tangent_step(geometry, q, model.identity())
        measured = float(numpy.linalg.norm(step.lam - report.lam_o))
        assert measured <= report.bound.total


def test_convergence_conditions() -> None:
    constants = _blob_constants()
    check = convergence_check(constants, 0.0, 0.3, 2)
    assert check.ok
    assert check.noise_margin == pytest.approx(0.5)
    assert check.init_margin == pytest.approx(convergence_radius(constants, 0.0, 2) - 0.3)

    assert not convergence_check(constants, 0.0, 2.0, 2).ok
    assert not convergence_check(constants, 1.0, 0.1, 2).ok


def test_decay_factor() -> None:
    constants = _blob_constants()
    decay = decay_factor(constants, 0.0, 0.3, 2)
    assert decay.alpha == pytest.approx(constants.C1 * constants.C2 * 0.3)
    assert decay.contracting
    assert not decay_factor(constants, 0.0, 5.0, 2).contracting


def test_optimal_filter_size() -> None:
    assert optimal_filter_size(2.0, 4.0, 1.0) == pytest.approx(math.sqrt(3.0))
    assert optimal_filter_size(2.0, 0.5, 1.0) == 0.0
    assert optimal_filter_size(2.0, 4.0, 0.0, rho_max=16.0) == 16.0
    assert optimal_filter_size(2.0, 4000.0, 1.0, rho_max=16.0) == 16.0


@pytest.mark.parametrize(
    "c1, err, nu_e",
    [(2.0, 4.0, 1.0), (1.5, 3.0, 0.05), (3.0, 0.8, 0.1), (1.0, 10.0, 0.2)],
)
def test_optimal_filter_size_minimizes_iteration_bound(c1: float, err: float, nu_e: float) -> None:
    constants = GeometryConstants(K=1.0, T=1.0, C1=c1, C2=0.7)
    best = optimize.minimize_scalar(
        lambda rho: iteration_bound(constants, nu_e, err, rho, 2), bounds=(0.0, 40.0), method="bounded"
    )
    rho = optimal_filter_size(c1, err, nu_e)
    assert iteration_bound(constants, nu_e, err, rho, 2) <= best.fun * (1.0 + 1e-6)
    assert rho == pytest.approx(best.x, rel=0.05, abs=1e-3)


def test_initial_filter_size_matches_optimal() -> None:
    constants = _blob_constants()
    assert initial_filter_size(constants, 0.1, 2.0, 16.0) == optimal_filter_size(constants.C1, 2.0, 0.1, 16.0)


@pytest.mark.slow
def test_distance_error_bound_dominates() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_3D)
    geometry = ManifoldGeometry(model, _pattern())
    constants = geometry.estimate_constants()
    rng = numpy.random.default_rng(4)
    trials = 0
    for target in range(20):
        q = model.apply_to_pattern(model.sample(rng), geometry.pattern) + synth_noise_pattern(
            target_nu=0.2, seed=target
        )
        lam_o = geometry.project_bruteforce(q).lam
        for _ in range(10):
            lam_e = lam_o + rng.uniform(-0.1, 0.1, size=model.dim)
            error = abs(geometry.distance(q, lam_e) - geometry.distance(q, lam_o))
            assert error <= distance_error_bound(constants.T, lam_o, lam_e) * (1.0 + 1e-6)
            trials += 1
    assert trials == 200


def test_effective_noise() -> None:
    assert EffectiveNoise(nu=0.2).nu_e == 0.2
    assert EffectiveNoise(nu=0.2, nu_s=0.1, has_scale=True).nu_e == pytest.approx(0.3)
    with pytest.raises(ValueError):
        EffectiveNoise(nu=-0.1)

    translation = ManifoldGeometry(TransformModel(TransformKind.TRANSLATION_2D), _pattern())
    assert EffectiveNoise.estimate(translation, 0.2, [0.1, 0.1], 2.0).nu_e == 0.2


def test_scale_changes_add_noise_after_smoothing() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_SCALE_4D)
    geometry = ManifoldGeometry(model, _pattern())
    noise = EffectiveNoise.estimate(geometry, 0.0, [0.0, 0.0, 0.0, 1.5], 3.0)
    assert noise.has_scale
    assert noise.nu_s > 0.0
    assert EffectiveNoise.estimate(geometry, 0.0, [0.0, 0.0, 0.0, 1.0], 3.0).nu_s == pytest.approx(0.0, abs=1e-6)


def test_rate_slope_of_power_law() -> None:
    xs = numpy.array([1.0, 2.0, 4.0, 8.0])
    fit = rate_slope(xs, 3.0 * xs**-1.5)
    assert fit.slope == pytest.approx(-1.5)
    assert fit.r_squared == pytest.approx(1.0)


def _smoothed_norms(p: Pattern, rhos: numpy.ndarray) -> list:
    quad = QuadratureSpec()
    return [derivative_norms(smooth_pattern(p, rho), quad.fit(smooth_pattern(p, rho))) for rho in rhos]


def test_smoothed_derivative_norm_rates() -> None:
    rhos = numpy.array([2.0, 4.0, 8.0, 16.0])
    spreads = 1.0 + rhos**2

    norms = _smoothed_norms(_blob(), rhos)
    assert rate_slope(spreads, [norm.grad_norm for norm in norms]).slope == pytest.approx(-1.0, abs=0.01)
    assert rate_slope(spreads, [norm.hess_norm for norm in norms]).slope == pytest.approx(-1.5, abs=0.01)

    norms = _smoothed_norms(_pattern(), rhos)
    assert rate_slope(spreads, [norm.grad_norm for norm in norms]).slope == pytest.approx(-1.0, abs=0.2)
    assert rate_slope(spreads, [norm.hess_norm for norm in norms]).slope == pytest.approx(-1.5, abs=0.2)


def _centered_noise(lam_star: Sequence[float], nu: float) -> Pattern:
    # point-symmetric about the shifted blob, so the projection stays at lam_star
    noise = Pattern((Atom(1.0, AtomParams(0.7, tuple(lam_star), (0.2, 0.5))),))
    return noise.scaled(nu / pattern_norm(noise))


def test_filtered_noise_rate() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _blob())
    lam_star = [0.3, -0.2]
    q = model.apply_to_pattern(lam_star, geometry.pattern) + _centered_noise(lam_star, 0.3)
    rhos = numpy.array([2.0, 4.0, 8.0, 16.0])

    fit = rate_slope(1.0 + rhos**2, [measure_filtered_noise(geometry, q, rho) for rho in rhos])
    assert fit.slope == pytest.approx(-0.5, abs=0.1)
    assert fit.r_squared >= 0.99


@pytest.mark.parametrize("rho", [0.0, 0.5, 1.0, 2.0, 4.0])
def test_filtered_noise_of_manifold_point_vanishes(rho: float) -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _pattern())
    q = model.apply_to_pattern([0.1, 0.2], geometry.pattern)
    assert measure_filtered_noise(geometry, q, rho) <= 1e-6


def test_filtered_noise_decreases_with_smoothing() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _pattern())
    noisy = model.apply_to_pattern([0.1, 0.2], geometry.pattern) + synth_noise_pattern(target_nu=0.3, seed=2)
    assert measure_filtered_noise(geometry, noisy, 0.0) > measure_filtered_noise(geometry, noisy, 4.0) > 0.0


def test_noiseless_translation_bound_shrinks_with_smoothing() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _blob())
    q = model.apply_to_pattern([0.3, -0.2], geometry.pattern)
    rhos = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0]

    totals = [filtered_bound_at(geometry, q, rho, model.identity()).bound.total for rho in rhos]

    # for a unit isotropic blob the nonlinearity term is sqrt(6)/2 |delta|_1^2 / sqrt(1 + rho^2)
    expected = [0.5 * math.sqrt(6.0) * 0.5**2 / math.sqrt(1.0 + rho**2) for rho in rhos]
    numpy.testing.assert_allclose(totals, expected, rtol=1e-4)
    assert all(later <= earlier for earlier, later in zip(totals, totals[1:]))


@pytest.mark.slow
def test_noisy_bound_has_interior_optimal_filter_size() -> None:
    model = TransformModel(TransformKind.TRANS_ROT_3D)
    p = _pattern()
    geometry = ManifoldGeometry(model, p)
    angles = numpy.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
    ring = Pattern.from_components(
        coeffs=[1.0] * 8,
        psis=[0.0] * 8,
        centers=[(3.0 * math.cos(angle), 3.0 * math.sin(angle)) for angle in angles],
        sigmas=[(0.2, 0.2)] * 8,
    )
    noise = ring.scaled(0.3 * pattern_norm(p) / pattern_norm(ring))
    q = model.apply_to_pattern([0.1, 0.1, -0.1], p) + noise
    rhos = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]

    totals = [filtered_bound_at(geometry, q, rho, model.identity()).bound.total for rho in rhos]

    best = int(numpy.argmin(totals))
    assert 0 < best < len(rhos) - 1


def test_noise_term_grows_linearly_with_noise_level() -> None:
    model = TransformModel(TransformKind.TRANSLATION_2D)
    geometry = ManifoldGeometry(model, _blob())
    lam_star = [0.3, -0.2]
    norm = pattern_norm(geometry.pattern)
    nus = numpy.array([0.2, 0.4, 0.6, 0.8, 1.0]) * norm

    shifted = model.apply_to_pattern(lam_star, geometry.pattern)

    e2 = [
        filtered_bound_at(geometry, shifted + _centered_noise(lam_star, nu), 1.0, model.identity()).bound.e2_hat
        for nu in nus
    ]

    fit = rate_slope(nus, e2)
    assert fit.r_squared >= 0.99
    assert fit.slope == pytest.approx(1.0, abs=1e-3)
