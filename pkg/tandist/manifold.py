from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import warnings
from typing import NamedTuple, Sequence

import numpy

from tandist.atoms import Field, KernelLike, Pattern, overlap_matrix, pattern_norm, smooth_pattern
from tandist.exceptions import BoundaryProjectionWarning, RankDeficientMetricError
from tandist.raster import QuadratureSpec
from tandist.transforms import TransformModel

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
REFINEMENT_FLOOR = 1e-9
REFINEMENT_FACTOR = 0.5
MAX_REFINEMENT_SWEEPS = 100_000


@dataclasses.dataclass(frozen=True)
class GridSpec:
    """Regular sampling of the parameter domain, `points_per_axis` nodes per axis including the ends."""

    points_per_axis: int = 9

    def __post_init__(self) -> None:
        if self.points_per_axis < 2:
            raise ValueError(f"points_per_axis must be at least 2, got {self.points_per_axis}")

    def axis_values(self, interval: tuple[float, float]) -> numpy.ndarray:
        low, high = interval
        if low == high:
            return numpy.array([low])
        return numpy.linspace(low, high, self.points_per_axis)

    def nodes(self, model: TransformModel, axes: Sequence[int] | None = None) -> list[numpy.ndarray]:
        """Grid nodes in lexicographic order; axes left out stay at the identity."""
        axes = range(model.dim) if axes is None else axes
        identity = model.identity()
        values = [
            self.axis_values(model.domain[i]) if i in axes else numpy.array([identity[i]]) for i in range(model.dim)
        ]
        return [numpy.array(node) for node in itertools.product(*values)]

    def refined(self) -> GridSpec:
        return GridSpec(2 * self.points_per_axis - 1)


@dataclasses.dataclass(frozen=True)
class GeometryConstants:
    """Curvature bound K, tangent-norm supremum T and the derived constants C1 and C2."""

    K: float
    T: float
    C1: float
    C2: float
    min_eigenvalue: float = math.nan
    argmax_curvature: tuple[float, ...] = ()


class MetricTensor(NamedTuple):
    matrix: numpy.ndarray
    inverse: numpy.ndarray
    min_eigenvalue: float
    trace: float


class Projection(NamedTuple):
    lam: numpy.ndarray
    distance: float
    on_boundary: bool
    objective_trace: list[float]


class TangentField:
    """X -> d/dlam_i p_lam(X), evaluated from analytic pattern gradients."""

    def __init__(self, geometry: ManifoldGeometry, lam: numpy.ndarray, axis: int) -> None:
        self._geometry = geometry
        self._lam = geometry.model.check(lam)
        self._axis = axis

    def __call__(self, points: numpy.ndarray) -> numpy.ndarray:
        model = self._geometry.model
        frame = model.coord_map(self._lam, points)
        gradient = self._geometry.pattern.gradient(frame)
        return numpy.sum(gradient * model.first_coordinate_derivative(self._lam, self._axis, frame), axis=-1)


class SecondDerivativeField:
    """X -> d^2/dlam_i dlam_j p_lam(X)."""

    def __init__(self, geometry: ManifoldGeometry, lam: numpy.ndarray, first: int, second: int) -> None:
        self._geometry = geometry
        self._lam = geometry.model.check(lam)
        self._first = first
        self._second = second

    def __call__(self, points: numpy.ndarray) -> numpy.ndarray:
        model = self._geometry.model
        frame = model.coord_map(self._lam, points)
        derivatives = self._geometry.pattern.derivatives(frame)
        return _second_derivative_values(
            model, self._lam, self._first, self._second, frame, derivatives.gradient, derivatives.hessian
        )


def _second_derivative_values(
    model: TransformModel,
    lam: numpy.ndarray,
    first: int,
    second: int,
    frame: numpy.ndarray,
    gradient: numpy.ndarray,
    hessian: numpy.ndarray,
) -> numpy.ndarray:
    d_first = model.first_coordinate_derivative(lam, first, frame)
    d_second = model.first_coordinate_derivative(lam, second, frame)
    d_both = model.second_coordinate_derivative(lam, first, second, frame)
    curvature = numpy.einsum("...i,...ij,...j->...", d_first, hessian, d_second)
    return numpy.asarray(curvature + numpy.sum(gradient * d_both, axis=-1))


class ManifoldGeometry:
    """Transformation manifold {p_lam : lam in domain} of a pattern.

    Integrals over the plane are evaluated in the pattern frame Y = a(lam, X), where
    dX = s^2 dY; the pattern, its gradient and its Hessian are sampled once on the frame grid
    and reused for every lam.
    """

    def __init__(self, model: TransformModel, pattern: Pattern, quad: QuadratureSpec | None = None) -> None:
        if pattern.is_zero:
            raise RankDeficientMetricError("The zero pattern has a degenerate transformation manifold")
        self._model = model
        self._pattern = pattern
        self._base_quad = quad or QuadratureSpec()
        self._quad = self._base_quad if quad is not None else self._base_quad.fit(pattern)

        self._frame = self._quad.points.reshape(-1, 2)
        derivatives = pattern.derivatives(self._frame)
        self._values = derivatives.values
        self._gradient = derivatives.gradient
        self._hessian = derivatives.hessian
        self._quad.check_boundary(self._values**2, "pattern energy")
        self._norm = pattern_norm(pattern)

    @property
    def model(self) -> TransformModel:
        return self._model

    @property
    def pattern(self) -> Pattern:
        return self._pattern

    @property
    def quad(self) -> QuadratureSpec:
        return self._quad

    @property
    def dim(self) -> int:
        return self._model.dim

    @property
    def norm(self) -> float:
        return self._norm

    def smoothed(self, kernel: KernelLike) -> ManifoldGeometry:
        smoothed = smooth_pattern(self._pattern, kernel)
        if smoothed is self._pattern:
            return self
        return ManifoldGeometry(self._model, smoothed, self._base_quad.fit(smoothed))

    def _measure(self, lam: numpy.ndarray) -> float:
        return self._model.components(lam).scale ** 2 * self._quad.cell_area

    def tangent(self, lam: Sequence[float] | numpy.ndarray, axis: int) -> TangentField:
        self._check_axis(axis)
        return TangentField(self, numpy.asarray(lam, dtype=float), axis)

    def second_derivative(self, lam: Sequence[float] | numpy.ndarray, first: int, second: int) -> SecondDerivativeField:
        self._check_axis(first)
        self._check_axis(second)
        return SecondDerivativeField(self, numpy.asarray(lam, dtype=float), first, second)

    def _check_axis(self, axis: int) -> None:
        if not 0 <= axis < self.dim:
            raise ValueError(f"Axis {axis} is out of range for a {self.dim}-dimensional model")

    def frame_tangents(self, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        """Tangent values on the frame grid, shape (d, n)."""
        lam = self._model.check(lam)
        return numpy.stack(
            [
                numpy.sum(self._gradient * self._model.first_coordinate_derivative(lam, axis, self._frame), axis=-1)
                for axis in range(self.dim)
            ]
        )

    def frame_second_derivative(self, lam: Sequence[float] | numpy.ndarray, first: int, second: int) -> numpy.ndarray:
        lam = self._model.check(lam)
        return _second_derivative_values(self._model, lam, first, second, self._frame, self._gradient, self._hessian)

    def tangent_norms(self, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        lam = self._model.check(lam)
        tangents = self.frame_tangents(lam)
        return numpy.sqrt(numpy.sum(tangents**2, axis=1) * self._measure(lam))

    def second_derivative_norm(self, lam: Sequence[float] | numpy.ndarray, first: int, second: int) -> float:
        lam = self._model.check(lam)
        values = self.frame_second_derivative(lam, first, second)
        return math.sqrt(float(numpy.sum(values**2)) * self._measure(lam))

    def metric_tensor(self, lam: Sequence[float] | numpy.ndarray) -> MetricTensor:
        lam = self._model.check(lam)
        tangents = self.frame_tangents(lam)
        matrix = tangents @ tangents.T * self._measure(lam)
        return summarize_metric(0.5 * (matrix + matrix.T))

    def residual_projections(self, q: Field, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        """<q - p_lam, d_j p_lam> for every axis j."""
        lam = self._model.check(lam)
        target = q(self._model.inverse_map(lam, self._frame))
        return numpy.asarray(self.frame_tangents(lam) @ (target - self._values) * self._measure(lam))

    def distance(self, q: Field, lam: Sequence[float] | numpy.ndarray) -> float:
        """||q - p_lam||, in closed form when `q` is a pattern."""
        lam = self._model.check(lam)
        if isinstance(q, Pattern):
            return math.sqrt(max(self._objective(_PatternTarget(q), lam), 0.0))
        target = q(self._model.inverse_map(lam, self._frame))
        return math.sqrt(float(numpy.sum((target - self._values) ** 2)) * self._measure(lam))

    def _objective(self, target: _PatternTarget, lam: numpy.ndarray) -> float:
        scale = self._model.components(lam).scale
        if target.empty:
            return scale**2 * self._norm**2
        arrays = self._model.transform_arrays(lam, self._pattern.arrays)
        cross = float(target.arrays.coeffs @ (0.5 * overlap_matrix(target.arrays, arrays)) @ arrays.coeffs)
        return target.norm2 + scale**2 * self._norm**2 - 2.0 * cross

    def estimate_constants(self, grid: GridSpec | None = None) -> GeometryConstants:
        """Suprema of curvature, tangent norms and metric quantities over a domain grid.

        The geometry does not depend on translations, so only rotation and scale axes are swept.
        Maxima keep the lexicographically first maximizer.
        """
        grid = grid or GridSpec()
        translations = set(self._model.translation_axes)
        swept = [axis for axis in range(self.dim) if axis not in translations]
        curvature, tangent_sup, trace_sup, inverse_eig_sup = 0.0, 0.0, 0.0, 0.0
        min_eigenvalue = math.inf
        argmax: tuple[float, ...] = ()
        for lam in grid.nodes(self._model, swept):
            metric = self.metric_tensor(lam)
            tangent_sup = max(tangent_sup, float(numpy.max(self.tangent_norms(lam))))
            trace_sup = max(trace_sup, math.sqrt(metric.trace))
            inverse_eig_sup = max(inverse_eig_sup, 1.0 / metric.min_eigenvalue)
            min_eigenvalue = min(min_eigenvalue, metric.min_eigenvalue)
            for first in range(self.dim):
                for second in range(first, self.dim):
                    norm = self.second_derivative_norm(lam, first, second)
                    if norm > curvature:
                        curvature = norm
                        argmax = tuple(float(value) for value in lam)
        constants = GeometryConstants(
            K=curvature,
            T=tangent_sup,
            C1=trace_sup,
            C2=curvature * inverse_eig_sup,
            min_eigenvalue=min_eigenvalue,
            argmax_curvature=argmax,
        )
        logger.debug("Estimated geometry constants: %s", constants)
        return constants

    def project_bruteforce(self, q: Pattern, grid: GridSpec | None = None) -> Projection:
        """Closest point of the manifold to `q`: grid search, then cyclic coordinate descent."""
        grid = grid or GridSpec()
        target = _PatternTarget(q)
        best_lam = self._model.identity()
        best = math.inf
        for lam in grid.nodes(self._model):
            value = self._objective(target, lam)
            if value < best:
                best, best_lam = value, lam
        trace = [best]

        lows = numpy.array([low for low, _ in self._model.domain])
        highs = numpy.array([high for _, high in self._model.domain])
        steps = (highs - lows) / (grid.points_per_axis - 1) * REFINEMENT_FACTOR
        sweeps = 0
        while numpy.max(steps) >= REFINEMENT_FLOOR and sweeps < MAX_REFINEMENT_SWEEPS:
            sweeps += 1
            improved = False
            for axis in range(self.dim):
                for direction in (1.0, -1.0):
                    candidate = best_lam.copy()
                    candidate[axis] = min(max(candidate[axis] + direction * steps[axis], lows[axis]), highs[axis])
                    if candidate[axis] == best_lam[axis]:
                        continue
                    value = self._objective(target, candidate)
                    if value < best:
                        best, best_lam = value, candidate
                        trace.append(best)
                        improved = True
                        break
            if not improved:
                steps = steps * REFINEMENT_FACTOR

        on_boundary = self._model.on_boundary(best_lam)
        if on_boundary:
            message = f"Projection minimizer {best_lam.tolist()} lies on the domain boundary"
            logger.warning(message)
            warnings.warn(message, BoundaryProjectionWarning)
        return Projection(
            lam=best_lam,
            distance=math.sqrt(max(best, 0.0)),
            on_boundary=on_boundary,
            objective_trace=trace,
        )


class _PatternTarget:
    def __init__(self, q: Pattern) -> None:
        self.arrays = q.arrays
        self.empty = len(q) == 0
        self.norm2 = pattern_norm(q) ** 2


def summarize_metric(matrix: numpy.ndarray) -> MetricTensor:
    if not numpy.all(numpy.isfinite(matrix)):
        raise RankDeficientMetricError("Metric tensor has non-finite entries")
    eigenvalues = numpy.linalg.eigvalsh(matrix)
    trace = float(numpy.trace(matrix))
    min_eigenvalue = float(eigenvalues[0])
    if not trace > 0.0 or min_eigenvalue < RANK_TOLERANCE * trace:
        raise RankDeficientMetricError(
            f"Metric tensor is rank deficient: min eigenvalue {min_eigenvalue:.3g}, trace {trace:.3g}"
        )
    return MetricTensor(matrix=matrix, inverse=numpy.linalg.inv(matrix), min_eigenvalue=min_eigenvalue, trace=trace)


def tangent(g: ManifoldGeometry, lam: Sequence[float] | numpy.ndarray, axis: int) -> TangentField:
    return g.tangent(lam, axis)


def second_derivative(
    g: ManifoldGeometry,
    lam: Sequence[float] | numpy.ndarray,
    first: int,
    second: int,
) -> SecondDerivativeField:
    return g.second_derivative(lam, first, second)


def metric_tensor(g: ManifoldGeometry, lam: Sequence[float] | numpy.ndarray) -> MetricTensor:
    return g.metric_tensor(lam)


def estimate_constants(g: ManifoldGeometry, grid: GridSpec | None = None) -> GeometryConstants:
    return g.estimate_constants(grid)


def project_bruteforce(g: ManifoldGeometry, q: Pattern, grid: GridSpec | None = None) -> Projection:
    return g.project_bruteforce(q, grid)
