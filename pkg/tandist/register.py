from __future__ import annotations

import abc
import dataclasses
import logging
import math
import warnings
from typing import Any, NamedTuple, Sequence

import numpy

from tandist.atoms import Field, Pattern, smooth_pattern
from tandist.bounds import BoundInputs, optimal_filter_size, theorem1_bound
from tandist.common.table import Table
from tandist.exceptions import NumericalError, OutOfDomainWarning
from tandist.manifold import GeometryConstants, GridSpec, ManifoldGeometry, MetricTensor
from tandist.transforms import TransformModel

logger = logging.getLogger(__name__)

DIVERGENCE_PATIENCE = 3


class TangentStep(NamedTuple):
    lam: numpy.ndarray
    out_of_domain: bool
    metric: MetricTensor
    projections: numpy.ndarray


def tangent_step(g: ManifoldGeometry, q: Field, lam_r: Sequence[float] | numpy.ndarray) -> TangentStep:
    """Minimizer of ||q - p_lam_r - d_i p_lam_r (lam^i - lam_r^i)|| over the tangent plane at `lam_r`.

    Estimates outside the domain are returned as they are and flagged.
    """
    lam_r = g.model.check(lam_r)
    metric = g.metric_tensor(lam_r)
    projections = g.residual_projections(q, lam_r)
    lam_e = lam_r + numpy.linalg.solve(metric.matrix, projections)
    out_of_domain = not (numpy.all(numpy.isfinite(lam_e)) and g.model.contains(lam_e))
    if out_of_domain:
        message = f"Tangent-distance estimate {lam_e.tolist()} lies outside the parameter domain"
        logger.warning(message)
        warnings.warn(message, OutOfDomainWarning)
    return TangentStep(lam=lam_e, out_of_domain=out_of_domain, metric=metric, projections=projections)


@dataclasses.dataclass
class RegistrationResult:
    """Trace of a registration run; `estimates[0]` is the reference parameter vector."""

    estimates: list[numpy.ndarray]
    rhos: list[float] = dataclasses.field(default_factory=list)
    residuals: list[float] = dataclasses.field(default_factory=list)
    converged: bool = False
    diverged: bool = False
    out_of_domain: list[bool] = dataclasses.field(default_factory=list)
    bound_trace: list[float] | None = None
    failure: str | None = None

    @property
    def final(self) -> numpy.ndarray:
        return self.estimates[-1]

    @property
    def iterations(self) -> int:
        return len(self.rhos)

    def to_table(self, model: TransformModel) -> Table:
        columns = ["iter", "rho", *(f"lambda_{axis}" for axis in model.axes), "residual", "bound"]
        table = Table(columns, shrink=False)
        for k, (lam, residual) in enumerate(zip(self.estimates, self.residuals)):
            row: dict[str, Any] = {"iter": k, "rho": None, "residual": residual, "bound": None}
            row.update({f"lambda_{axis}": float(value) for axis, value in zip(model.axes, lam)})
            if k > 0:
                row["rho"] = self.rhos[k - 1]
                if self.bound_trace is not None:
                    row["bound"] = self.bound_trace[k - 1]
            table.add(row)
        return table


class LevelReference(NamedTuple):
    lam_o: numpy.ndarray
    nu: float
    constants: GeometryConstants


class BoundOracle:
    """Brute-force projection and curvature per filter level, used to record the alignment bound of each step."""

    def __init__(self, grid: GridSpec | None = None) -> None:
        self._grid = grid or GridSpec()
        self._levels: dict[float, LevelReference] = {}

    def level(self, geometry: ManifoldGeometry, q: Pattern, rho: float) -> LevelReference:
        if rho not in self._levels:
            projection = geometry.project_bruteforce(q, self._grid)
            constants = geometry.estimate_constants(self._grid)
            self._levels[rho] = LevelReference(projection.lam, projection.distance, constants)
        return self._levels[rho]

    def bound(
        self,
        geometry: ManifoldGeometry,
        q: Pattern,
        rho: float,
        metric: MetricTensor,
        lam_r: numpy.ndarray,
    ) -> float:
        reference = self.level(geometry, q, rho)
        return theorem1_bound(BoundInputs(reference.constants.K, metric, reference.nu, reference.lam_o - lam_r))


class _Trace:
    """Appends steps to a result and applies the stopping rules shared by all estimators."""

    def __init__(self, lam_r: numpy.ndarray, residual: float, tol: float, with_bounds: bool) -> None:
        self.result = RegistrationResult(
            estimates=[lam_r],
            residuals=[residual],
            out_of_domain=[False],
            bound_trace=[] if with_bounds else None,
        )
        self._tol = tol
        self._step_norms: list[float] = []
        self._growth = 0

    @property
    def last(self) -> numpy.ndarray:
        return self.result.estimates[-1]

    def fail(self, reason: str) -> None:
        logger.warning("Registration stopped: %s", reason)
        self.result.diverged = True
        self.result.failure = reason

    def push(self, rho: float, step: TangentStep, residual: float, bound: float | None) -> bool:
        """Record one step; returns False when the run must stop."""
        previous = self.last
        result = self.result
        result.estimates.append(step.lam)
        result.rhos.append(rho)
        result.residuals.append(residual)
        result.out_of_domain.append(step.out_of_domain)
        if result.bound_trace is not None and bound is not None:
            result.bound_trace.append(bound)

        norm = float(numpy.linalg.norm(step.lam - previous))
        logger.debug("k=%d rho=%.4g step=%.6g residual=%.6g", len(result.rhos), rho, norm, residual)
        if not math.isfinite(norm) or not math.isfinite(residual):
            self.fail("non-finite estimate")
            return False
        # steps on smoothed pairs never end the run early
        if rho == 0.0 and norm < self._tol:
            result.converged = True
            return False
        self._growth = self._growth + 1 if self._step_norms and norm > self._step_norms[-1] else 0
        self._step_norms.append(norm)
        if self._growth >= DIVERGENCE_PATIENCE:
            self.fail(f"step norm grew for {DIVERGENCE_PATIENCE} consecutive iterations")
            return False
        return True


def _advance(
    trace: _Trace,
    geometry: ManifoldGeometry,
    q: Pattern | Field,
    rho: float,
    oracle: BoundOracle | None,
) -> bool:
    lam_r = trace.last
    try:
        step = tangent_step(geometry, q, lam_r)
        residual = geometry.distance(q, step.lam) if numpy.all(numpy.isfinite(step.lam)) else math.nan
    except NumericalError as error:
        trace.fail(str(error))
        return False
    bound = None
    if oracle is not None and isinstance(q, Pattern):
        bound = oracle.bound(geometry, q, rho, step.metric, lam_r)
    return trace.push(rho, step, residual, bound)


def iterate_single_scale(
    g: ManifoldGeometry,
    q: Pattern | Field,
    lam_r: Sequence[float] | numpy.ndarray,
    max_iters: int = 20,
    tol: float = 1e-8,
    oracle: BoundOracle | None = None,
) -> RegistrationResult:
    if max_iters < 1:
        raise ValueError(f"max_iters must be positive, got {max_iters}")
    lam_r = g.model.check(lam_r)
    trace = _Trace(lam_r, g.distance(q, lam_r), tol, oracle is not None)
    for _ in range(max_iters):
        if not _advance(trace, g, q, 0.0, oracle):
            break
    return trace.result


class FilterSchedule(abc.ABC):
    """Filter radius per level of a coarse-to-fine registration."""

    levels: int
    final_iterations: int

    @abc.abstractmethod
    def rho_for(self, k: int, previous_estimate: numpy.ndarray) -> float:
        """Filter radius of level `k` (1-based) given the estimate of the previous level."""

    @staticmethod
    def _check_counts(levels: int, final_iterations: int) -> None:
        if levels < 0 or final_iterations < 0:
            raise ValueError(f"levels and final_iterations must be non-negative, got {levels}, {final_iterations}")


@dataclasses.dataclass(frozen=True)
class GeometricSchedule(FilterSchedule):
    """rho_k = alpha^((k-1)/2) rho1, set to zero once below `floor`."""

    rho1: float
    alpha: float
    floor: float = 0.0
    levels: int = 0
    final_iterations: int = 1

    def __post_init__(self) -> None:
        if not self.rho1 > 0.0:
            raise ValueError(f"rho1 must be positive, got {self.rho1}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.floor < 0.0:
            raise ValueError(f"floor must be non-negative, got {self.floor}")
        self._check_counts(self.levels, self.final_iterations)
        if self.levels == 0:
            if self.floor == 0.0:
                raise ValueError("A geometric schedule needs either a level count or a positive floor")
            # levels whose radius stays at or above the floor
            count = math.floor(2.0 * math.log(self.floor / self.rho1) / math.log(self.alpha)) + 1
            object.__setattr__(self, "levels", max(count, 1))

    def rho_for(self, k: int, previous_estimate: numpy.ndarray | None = None) -> float:
        rho = self.alpha ** ((k - 1) / 2.0) * self.rho1
        return rho if rho >= self.floor else 0.0


@dataclasses.dataclass(frozen=True)
class OracleSchedule(FilterSchedule):
    """Optimal filter radius computed from the true optimal parameters."""

    lam_o: numpy.ndarray
    c1: float
    nu_e: float
    levels: int
    rho_max: float = 16.0
    final_iterations: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "lam_o", numpy.asarray(self.lam_o, dtype=float))
        if self.nu_e < 0.0 or self.c1 < 0.0:
            raise ValueError(f"c1 and nu_e must be non-negative, got {self.c1}, {self.nu_e}")
        if self.rho_max < 0.0:
            raise ValueError(f"rho_max must be non-negative, got {self.rho_max}")
        self._check_counts(self.levels, self.final_iterations)

    def rho_for(self, k: int, previous_estimate: numpy.ndarray) -> float:
        err = float(numpy.linalg.norm(self.lam_o - previous_estimate))
        return optimal_filter_size(self.c1, err, self.nu_e, self.rho_max)


@dataclasses.dataclass(frozen=True)
class FixedSchedule(FilterSchedule):
    rhos: tuple[float, ...]
    final_iterations: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "rhos", tuple(float(rho) for rho in self.rhos))
        if any(rho < 0.0 for rho in self.rhos):
            raise ValueError(f"Filter radii must be non-negative, got {self.rhos}")
        self._check_counts(len(self.rhos), self.final_iterations)

    @property
    def levels(self) -> int:  # type: ignore[override]
        return len(self.rhos)

    def rho_for(self, k: int, previous_estimate: numpy.ndarray | None = None) -> float:
        return self.rhos[k - 1]


SCHEDULE_KINDS = ("geometric", "optimal-oracle", "fixed")


def make_schedule(kind: str, **params: Any) -> FilterSchedule:
    if kind == "geometric":
        return GeometricSchedule(**params)
    if kind == "optimal-oracle":
        if params.get("lam_o") is None:
            raise ValueError("The optimal-oracle schedule needs the optimal parameters lam_o")
        return OracleSchedule(**params)
    if kind == "fixed":
        return FixedSchedule(**params)
    raise ValueError(f"Unknown schedule kind '{kind}', expected one of {SCHEDULE_KINDS}")


def register_hierarchical(
    g: ManifoldGeometry,
    q: Pattern,
    lam_r: Sequence[float] | numpy.ndarray,
    schedule: FilterSchedule,
    inner_iterations: int = 1,
    tol: float = 1e-8,
    oracle: BoundOracle | None = None,
) -> RegistrationResult:
    """Coarse-to-fine registration: one tangent step per level on the smoothed pair, then steps at rho = 0.

    The run stops early once a step taken at rho = 0 is shorter than `tol`; pass `tol=0.0` to always
    complete the schedule.
    """
    if inner_iterations < 1:
        raise ValueError(f"inner_iterations must be positive, got {inner_iterations}")
    lam_r = g.model.check(lam_r)
    levels: dict[float, tuple[ManifoldGeometry, Pattern]] = {}

    def level(rho: float) -> tuple[ManifoldGeometry, Pattern]:
        if rho not in levels:
            levels[rho] = (g.smoothed(rho), smooth_pattern(q, rho))
        return levels[rho]

    first_rho = schedule.rho_for(1, lam_r) if schedule.levels > 0 else 0.0
    geometry, target = level(first_rho)
    trace = _Trace(lam_r, geometry.distance(target, lam_r), tol, oracle is not None)

    plan = [(k, inner_iterations) for k in range(1, schedule.levels + 1)]
    plan += [(0, 1)] * schedule.final_iterations
    for k, repeats in plan:
        rho = schedule.rho_for(k, trace.last) if k > 0 else 0.0
        geometry, target = level(rho)
        for _ in range(repeats):
            if not _advance(trace, geometry, target, rho, oracle):
                return trace.result
    return trace.result
