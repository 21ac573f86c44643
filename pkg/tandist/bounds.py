from __future__ import annotations

import dataclasses
import logging
import math
from typing import NamedTuple, Sequence

import numpy
from scipy import stats

from tandist.atoms import Pattern, smooth_pattern
from tandist.manifold import GeometryConstants, GridSpec, ManifoldGeometry, MetricTensor
from tandist.util import l1_norm

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class BoundInputs:
    """Curvature bound, metric at the reference point, noise level and parameter offset."""

    K: float
    metric: MetricTensor
    nu: float
    delta: numpy.ndarray

    def __post_init__(self) -> None:
        if self.K < 0.0 or self.nu < 0.0:
            raise ValueError(f"K and nu must be non-negative, got K={self.K}, nu={self.nu}")
        object.__setattr__(self, "delta", numpy.asarray(self.delta, dtype=float))

    @property
    def d(self) -> int:
        return int(self.delta.shape[0])


class FilteredBound(NamedTuple):
    e1_hat: float
    e2_hat: float

    @property
    def total(self) -> float:
        return self.e1_hat + self.e2_hat


def filtered_bound(b: BoundInputs) -> FilteredBound:
    """Alignment bound split into the nonlinearity part and the noise part."""
    offset = l1_norm(b.delta)
    factor = b.K / b.metric.min_eigenvalue
    return FilteredBound(
        e1_hat=0.5 * factor * math.sqrt(b.metric.trace) * offset**2,
        e2_hat=math.sqrt(b.d) * factor * b.nu * offset,
    )


def theorem1_bound(b: BoundInputs) -> float:
    """Upper bound of the one-step tangent-distance alignment error."""
    return filtered_bound(b).total


def measure_filtered_noise(g: ManifoldGeometry, q: Pattern, rho: float, grid: GridSpec | None = None) -> float:
    """Distance of the smoothed target from the manifold of the smoothed pattern."""
    return g.smoothed(rho).project_bruteforce(smooth_pattern(q, rho), grid).distance


class FilteredBoundReport(NamedTuple):
    rho: float
    bound: FilteredBound
    lam_o: numpy.ndarray
    filtered_noise: float
    constants: GeometryConstants


def filtered_bound_at(
    g: ManifoldGeometry,
    q: Pattern,
    rho: float,
    lam_r: Sequence[float] | numpy.ndarray,
    grid: GridSpec | None = None,
) -> FilteredBoundReport:
    """Recompute geometry, projection and curvature on the smoothed pair, then evaluate the split bound."""
    smoothed = g.smoothed(rho)
    projection = smoothed.project_bruteforce(smooth_pattern(q, rho), grid)
    constants = smoothed.estimate_constants(grid)
    lam_r = g.model.check(lam_r)
    inputs = BoundInputs(
        K=constants.K,
        metric=smoothed.metric_tensor(lam_r),
        nu=projection.distance,
        delta=projection.lam - lam_r,
    )
    return FilteredBoundReport(rho, filtered_bound(inputs), projection.lam, projection.distance, constants)


@dataclasses.dataclass(frozen=True)
class EffectiveNoise:
    """Noise level seen by the convergence analysis; scale changes add the offset `nu_s`."""

    nu: float
    nu_s: float = 0.0
    has_scale: bool = False

    def __post_init__(self) -> None:
        if self.nu < 0.0 or self.nu_s < 0.0:
            raise ValueError(f"Noise levels must be non-negative, got nu={self.nu}, nu_s={self.nu_s}")

    @property
    def nu_e(self) -> float:
        return self.nu + self.nu_s if self.has_scale else self.nu

    @classmethod
    def estimate(
        cls,
        g: ManifoldGeometry,
        nu: float,
        lam_o: Sequence[float] | numpy.ndarray,
        rho: float,
        grid: GridSpec | None = None,
    ) -> EffectiveNoise:
        """`nu_s` is the distance of the smoothed noiseless target p_{lam_o} from the smoothed manifold."""
        if not g.model.has_scale:
            return cls(nu=nu)
        noiseless = g.model.apply_to_pattern(lam_o, g.pattern)
        nu_s = measure_filtered_noise(g, noiseless, rho, grid)
        logger.debug("Scale-model noise offset at rho=%.4g: %.6g", rho, nu_s)
        return cls(nu=nu, nu_s=nu_s, has_scale=True)


class ConvergenceCheck(NamedTuple):
    ok: bool
    noise_margin: float
    init_margin: float


def convergence_radius(c: GeometryConstants, nu_e: float, d: int) -> float:
    if c.C2 == 0.0:
        return math.inf
    return (2.0 / c.C1) * (1.0 / (d * c.C2) - nu_e)


def convergence_check(c: GeometryConstants, nu_e: float, init_err: float, d: int) -> ConvergenceCheck:
    noise_margin = 1.0 / d - nu_e * c.C2
    init_margin = convergence_radius(c, nu_e, d) - init_err
    return ConvergenceCheck(
        ok=noise_margin > 0.0 and init_margin > 0.0,
        noise_margin=noise_margin,
        init_margin=init_margin,
    )


class DecayFactor(NamedTuple):
    alpha: float
    contracting: bool


def decay_factor(c: GeometryConstants, nu_e: float, E0: float, d: int) -> DecayFactor:
    alpha = 0.5 * d * c.C1 * c.C2 * E0 + d * nu_e * c.C2
    if alpha >= 1.0:
        logger.warning("Decay factor %.4g is not below 1; geometric convergence is not guaranteed", alpha)
    return DecayFactor(alpha=alpha, contracting=alpha < 1.0)


def iteration_bound(c: GeometryConstants, nu_e: float, err: float, rho: float, d: int) -> float:
    """Bound of the next iterate's error when the current error is `err` and the filter radius is `rho`."""
    spread = math.sqrt(1.0 + rho**2)
    shrink = 1.0 + 1.0 / spread
    return 0.25 * d * c.C1 * c.C2 * shrink * err**2 + 0.5 * d * c.C2 * nu_e * shrink * spread * err


def optimal_filter_size(c1: float, err: float, nu_e: float, rho_max: float = math.inf) -> float:
    """Minimizer of `iteration_bound` over rho, capped at `rho_max`."""
    if nu_e == 0.0:
        return rho_max
    argument = c1 * err / (2.0 * nu_e) - 1.0
    if argument < 0.0:
        return 0.0
    return min(math.sqrt(argument), rho_max)


def initial_filter_size(c: GeometryConstants, nu_e: float, E0: float, rho_max: float) -> float:
    return optimal_filter_size(c.C1, E0, nu_e, rho_max)


def distance_error_bound(
    T: float,
    lambda_o: Sequence[float] | numpy.ndarray,
    lambda_e: Sequence[float] | numpy.ndarray,
) -> float:
    return T * l1_norm(numpy.asarray(lambda_o, dtype=float) - numpy.asarray(lambda_e, dtype=float))


class RateFit(NamedTuple):
    slope: float
    r_squared: float


def rate_slope(xs: Sequence[float] | numpy.ndarray, ys: Sequence[float] | numpy.ndarray) -> RateFit:
    """Least-squares slope of log(ys) against log(xs)."""
    fit = stats.linregress(numpy.log(numpy.asarray(xs, dtype=float)), numpy.log(numpy.asarray(ys, dtype=float)))
    return RateFit(slope=float(fit.slope), r_squared=float(fit.rvalue**2))
