"""Seeded experiment protocols driven by the command line.

Every trial draws from its own random stream derived from the master seed and the trial index,
so trials can run in any order and individual trials can be regenerated.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from typing import Callable, Iterable, NamedTuple, Sequence, TypeVar

import numpy
from joblib import Parallel, delayed

from tandist.atoms import Pattern, pattern_norm, smooth_pattern
from tandist.bounds import (
    BoundInputs,
    EffectiveNoise,
    convergence_check,
    decay_factor,
    filtered_bound,
    initial_filter_size,
)
from tandist.classify import (
    ClassBank,
    classify_query,
    misclassification_likeliness,
    project_all,
    synth_class_patterns,
)
from tandist.common.table import Table
from tandist.config import ExperimentConfig
from tandist.exceptions import ClassificationError, ConfigurationError, NumericalError
from tandist.manifold import GridSpec, ManifoldGeometry
from tandist.raster import synth_noise_pattern, synth_random_reference
from tandist.register import (
    BoundOracle,
    FilterSchedule,
    FixedSchedule,
    RegistrationResult,
    make_schedule,
    register_hierarchical,
    tangent_step,
)
from tandist.transforms import TransformModel, calibrate_gains
from tandist.util import random_stream

logger = logging.getLogger(__name__)

T = TypeVar("T")

FALLBACK_ALPHA = 0.25
BOUNDARY_WEIGHT_RANGE = (0.3, 0.7)


def parallel_map(func: Callable[[int], T], indices: Iterable[int], threads: int) -> list[T]:
    """Results in index order whatever the number of workers."""
    if threads <= 1:
        return [func(index) for index in indices]
    return list(Parallel(n_jobs=threads, prefer="threads")(delayed(func)(index) for index in indices))


def load_reference(config: ExperimentConfig, rng: numpy.random.Generator) -> Pattern:
    if config.pattern.file is not None:
        try:
            return Pattern.load(config.pattern.file)
        except FileNotFoundError as error:
            raise ConfigurationError(f"Invalid value for pattern.file: {config.pattern.file} not found") from error
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as error:
            raise ConfigurationError(f"Invalid value for pattern.file: {config.pattern.file} ({error})") from error
    if config.pattern.seed is not None:
        return synth_random_reference(random_stream(config.pattern.seed))
    return synth_random_reference(rng)


def build_model(config: ExperimentConfig, pattern: Pattern) -> TransformModel:
    model = config.build_model()
    if config.model.calibrate:
        model = calibrate_gains(model, pattern, config.build_quadrature().fit(pattern))
    return model


def make_target(
    config: ExperimentConfig,
    model: TransformModel,
    pattern: Pattern,
    nu: float,
    rng: numpy.random.Generator,
) -> tuple[numpy.ndarray, Pattern]:
    """Transformed copy of `pattern` plus atom noise of norm `nu * ||pattern||`."""
    lam_star = model.check(config.target) if config.target is not None else model.sample(rng, config.sampling_range())
    noise = synth_noise_pattern(target_nu=nu * pattern_norm(pattern), seed=rng)
    return lam_star, model.apply_to_pattern(lam_star, pattern) + noise


class TrialOutcome(NamedTuple):
    e1_hat: float
    e2_hat: float
    measured_error: float
    failure: str | None = None


def sweep_trial(config: ExperimentConfig, rho: float, nu: float, trial: int) -> TrialOutcome:
    """One-step registration from the identity on the smoothed pair, with its alignment bound."""
    rng = random_stream(config.seed, trial)
    grid = GridSpec(config.grid_points)
    try:
        pattern = load_reference(config, rng)
        model = build_model(config, pattern)
        _, q = make_target(config, model, pattern, nu, rng)
        smoothed = ManifoldGeometry(model, pattern, config.build_quadrature().fit(pattern)).smoothed(rho)
        q_hat = smooth_pattern(q, rho)
        projection = smoothed.project_bruteforce(q_hat, grid)
        constants = smoothed.estimate_constants(grid)
        lam_r = model.identity()
        step = tangent_step(smoothed, q_hat, lam_r)
        bound = filtered_bound(BoundInputs(constants.K, step.metric, projection.distance, projection.lam - lam_r))
    except NumericalError as error:
        logger.warning("Trial %d at rho=%.4g nu=%.4g failed: %s", trial, rho, nu, error)
        return TrialOutcome(math.nan, math.nan, math.nan, str(error))
    measured = float(numpy.linalg.norm(step.lam - projection.lam))
    return TrialOutcome(bound.e1_hat, bound.e2_hat, measured)


SWEEP_COLUMNS = [
    "rho",
    "nu",
    "E1_hat",
    "E2_hat",
    "E_hat",
    "measured_error",
    "measured_error_std",
    "trials",
    "failures",
]


def _mean(values: Sequence[float]) -> float:
    return float(numpy.mean(values)) if values else math.nan


def run_sweep(config: ExperimentConfig, axis: str) -> Table:
    """Mean bound terms and measured errors along the filter-radius or noise axis."""
    if axis == "rho":
        points = [(rho, config.noise_levels[0]) for rho in config.rhos]
    elif axis == "nu":
        points = [(config.rhos[0], nu) for nu in config.noise_levels]
    else:
        raise ValueError(f"Unknown sweep axis '{axis}', expected 'rho' or 'nu'")

    table = Table(SWEEP_COLUMNS, shrink=False)
    for rho, nu in points:
        outcomes = parallel_map(lambda trial: sweep_trial(config, rho, nu, trial), range(config.trials), config.threads)
        succeeded = [outcome for outcome in outcomes if outcome.failure is None]
        errors = [outcome.measured_error for outcome in succeeded]
        e1 = _mean([outcome.e1_hat for outcome in succeeded])
        e2 = _mean([outcome.e2_hat for outcome in succeeded])
        table.add(
            {
                "rho": rho,
                "nu": nu,
                "E1_hat": e1,
                "E2_hat": e2,
                "E_hat": e1 + e2,
                "measured_error": _mean(errors),
                "measured_error_std": float(numpy.std(errors)) if errors else math.nan,
                "trials": len(outcomes),
                "failures": len(outcomes) - len(succeeded),
            }
        )
        logger.debug("Sweep point rho=%.4g nu=%.4g done (%d failures)", rho, nu, len(outcomes) - len(succeeded))
    return table


@dataclasses.dataclass
class RegistrationRun:
    result: RegistrationResult
    model: TransformModel
    lam_star: numpy.ndarray
    lam_o: numpy.ndarray | None


@dataclasses.dataclass
class _OracleReference:
    lam_o: numpy.ndarray
    nu: float


def _oracle_reference(
    config: ExperimentConfig,
    g: ManifoldGeometry,
    q: Pattern,
    grid: GridSpec,
) -> _OracleReference | None:
    schedule = config.schedule
    if schedule.oracle_lambda is not None:
        lam_o = g.model.check(schedule.oracle_lambda)
        return _OracleReference(lam_o, g.distance(q, lam_o))
    if schedule.bruteforce:
        projection = g.project_bruteforce(q, grid)
        return _OracleReference(projection.lam, projection.distance)
    return None


def build_schedule(
    config: ExperimentConfig,
    g: ManifoldGeometry,
    q: Pattern,
    lam_r: numpy.ndarray,
    grid: GridSpec,
) -> tuple[FilterSchedule, numpy.ndarray | None]:
    """Schedule from the config; missing geometric settings are derived from the optimal parameters."""
    settings = config.schedule
    if settings.kind == "fixed":
        return FixedSchedule(tuple(settings.rhos), settings.final_iterations), None

    needs_oracle = settings.kind == "optimal-oracle" or settings.rho1 is None or settings.alpha is None
    reference = _oracle_reference(config, g, q, grid)
    if not needs_oracle:
        schedule = make_schedule(
            "geometric",
            rho1=settings.rho1,
            alpha=settings.alpha,
            floor=settings.floor,
            levels=settings.levels,
            final_iterations=settings.final_iterations,
        )
        return schedule, None if reference is None else reference.lam_o
    if reference is None:
        raise ConfigurationError(
            f"Invalid value for schedule.oracle_lambda: the {settings.kind} schedule without explicit rho1 and alpha "
            "needs oracle_lambda or bruteforce = true"
        )

    constants = g.estimate_constants(grid)
    rho_scale = settings.rho1 if settings.rho1 is not None else settings.rho_max
    noise = EffectiveNoise.estimate(g, reference.nu, reference.lam_o, rho_scale, grid)
    if settings.kind == "optimal-oracle":
        schedule = make_schedule(
            "optimal-oracle",
            lam_o=reference.lam_o,
            c1=constants.C1,
            nu_e=noise.nu_e,
            levels=settings.levels,
            rho_max=settings.rho_max,
            final_iterations=settings.final_iterations,
        )
        return schedule, reference.lam_o

    e0 = float(numpy.linalg.norm(reference.lam_o - lam_r))
    rho1 = settings.rho1
    if rho1 is None:
        rho1 = initial_filter_size(constants, noise.nu_e, e0, settings.rho_max)
    alpha = settings.alpha
    if alpha is None:
        alpha = decay_factor(constants, noise.nu_e, e0, g.dim).alpha
        if not 0.0 < alpha < 1.0:
            logger.warning("Derived decay factor %.4g is unusable; falling back to %.2f", alpha, FALLBACK_ALPHA)
            alpha = FALLBACK_ALPHA
    if not rho1 > 0.0:
        logger.info("Initial filter radius is zero; registering without smoothing")
        return FixedSchedule((0.0,) * settings.levels, settings.final_iterations), reference.lam_o
    schedule = make_schedule(
        "geometric",
        rho1=rho1,
        alpha=alpha,
        floor=settings.floor,
        levels=settings.levels,
        final_iterations=settings.final_iterations,
    )
    return schedule, reference.lam_o


def run_registration(config: ExperimentConfig) -> RegistrationRun:
    rng = random_stream(config.seed, 0)
    grid = GridSpec(config.grid_points)
    pattern = load_reference(config, rng)
    model = build_model(config, pattern)
    lam_star, q = make_target(config, model, pattern, config.noise_levels[0], rng)
    g = ManifoldGeometry(model, pattern, config.build_quadrature().fit(pattern))
    lam_r = model.identity()
    schedule, lam_o = build_schedule(config, g, q, lam_r, grid)
    oracle = BoundOracle(grid) if config.schedule.bruteforce else None
    result = register_hierarchical(
        g,
        q,
        lam_r,
        schedule,
        inner_iterations=config.schedule.inner_iterations,
        oracle=oracle,
    )
    return RegistrationRun(result=result, model=model, lam_star=lam_star, lam_o=lam_o)


GEOMETRY_COLUMNS = [
    "rho",
    "K",
    "T",
    "C1",
    "C2",
    "eta_min",
    "nu_e",
    "E0",
    "alpha",
    "contracting",
    "convergence_ok",
    "noise_margin",
    "init_margin",
    "rho1",
]


def geometry_report(config: ExperimentConfig) -> Table:
    """Geometric constants, decay factor and convergence conditions for each configured filter radius."""
    rng = random_stream(config.seed, 0)
    grid = GridSpec(config.grid_points)
    pattern = load_reference(config, rng)
    model = build_model(config, pattern)
    g = ManifoldGeometry(model, pattern, config.build_quadrature().fit(pattern))
    lam_star = model.check(config.target) if config.target is not None else None
    if lam_star is None:
        ranges = config.sampling_range()
        corner = numpy.array(
            [max(abs(ranges[axis][0] - c), abs(ranges[axis][1] - c)) for axis, c in zip(model.axes, model.identity())]
        )
        e0 = float(numpy.linalg.norm(corner))
    else:
        e0 = float(numpy.linalg.norm(lam_star - model.identity()))
    nu = config.noise_levels[0] * g.norm

    table = Table(GEOMETRY_COLUMNS, shrink=False)
    for rho in config.rhos:
        smoothed = g.smoothed(rho)
        constants = smoothed.estimate_constants(grid)
        lam_o = lam_star if lam_star is not None else model.identity()
        noise = EffectiveNoise.estimate(g, nu, lam_o, rho, grid)
        check = convergence_check(constants, noise.nu_e, e0, model.dim)
        decay = decay_factor(constants, noise.nu_e, e0, model.dim)
        table.add(
            {
                "rho": rho,
                "K": constants.K,
                "T": constants.T,
                "C1": constants.C1,
                "C2": constants.C2,
                "eta_min": constants.min_eigenvalue,
                "nu_e": noise.nu_e,
                "E0": e0,
                "alpha": decay.alpha,
                "contracting": decay.contracting,
                "convergence_ok": check.ok,
                "noise_margin": check.noise_margin,
                "init_margin": check.init_margin,
                "rho1": initial_filter_size(constants, noise.nu_e, e0, config.schedule.rho_max),
            }
        )
    return table


def schedule_table(config: ExperimentConfig) -> Table:
    """Filter radius of every level of a schedule that does not depend on the registration trace."""
    settings = config.schedule
    if settings.kind == "optimal-oracle":
        raise ConfigurationError(
            "Invalid value for schedule.kind: optimal-oracle radii depend on the registration trace; "
            "run `register` to see them"
        )
    if settings.kind == "fixed":
        schedule: FilterSchedule = FixedSchedule(tuple(settings.rhos), settings.final_iterations)
    else:
        if settings.rho1 is None or settings.alpha is None:
            raise ConfigurationError(
                "Invalid value for schedule.rho1/schedule.alpha: both are needed to list a schedule"
            )
        schedule = make_schedule(
            "geometric",
            rho1=settings.rho1,
            alpha=settings.alpha,
            floor=settings.floor,
            levels=settings.levels,
            final_iterations=settings.final_iterations,
        )
    table = Table(["level", "rho"], shrink=False)
    for k in range(1, schedule.levels + 1):
        table.add({"level": k, "rho": schedule.rho_for(k, numpy.zeros(0))})
    for k in range(schedule.final_iterations):
        table.add({"level": schedule.levels + k + 1, "rho": 0.0})
    return table


def synth_boundary_query(
    patterns: Sequence[Pattern],
    model: TransformModel,
    rng: numpy.random.Generator,
    nu: float,
    ranges: dict[str, tuple[float, float]] | None = None,
) -> Pattern:
    """Transformed blend of two class patterns plus noise; lies between the two manifolds."""
    weight = rng.uniform(*BOUNDARY_WEIGHT_RANGE)
    first, second = patterns[0], patterns[1]
    blend = first.scaled(1.0 - weight) + second.scaled(weight)
    lam = model.sample(rng, ranges)
    noise = synth_noise_pattern(target_nu=nu * pattern_norm(blend), seed=rng)
    return model.apply_to_pattern(lam, blend) + noise


class QueryRecord(NamedTuple):
    repetition: int
    query: int
    rho: float
    true_label: str
    predicted_label: str | None
    distances: dict[str, float]
    likeliness: float | None


def classification_repetition(config: ExperimentConfig, repetition: int) -> list[QueryRecord]:
    settings = config.classify
    rng = random_stream(config.seed, repetition)
    grid = GridSpec(config.grid_points)
    patterns = synth_class_patterns(rng, 2, settings.shared_atoms, settings.specific_atoms)
    model = build_model(config, next(iter(patterns.values())))
    bank = ClassBank.build(model, patterns, config.build_quadrature().fit(*patterns.values()), grid)

    records = []
    for index in range(settings.queries):
        q = synth_boundary_query(list(patterns.values()), model, rng, config.noise_levels[0], config.sampling_range())
        projections = project_all(bank, q)
        truth = bank.labels[int(numpy.argmin([projection.distance for projection in projections]))]
        lam_r = [projection.lam for projection in projections] if settings.oracle_reference else None
        for rho in config.rhos:
            try:
                result = classify_query(bank, q, rho, lam_r)
                predicted: str | None = result.label
                distances = result.distances
            except ClassificationError as error:
                logger.warning("Repetition %d query %d at rho=%.4g: %s", repetition, index, rho, error)
                predicted, distances = None, {}
            try:
                likeliness: float | None = misclassification_likeliness(bank, q, rho, lam_r, label=truth)
            except NumericalError as error:
                logger.warning("Repetition %d query %d likeliness at rho=%.4g: %s", repetition, index, rho, error)
                likeliness = None
            records.append(QueryRecord(repetition, index, rho, truth, predicted, distances, likeliness))
    return records


def run_classification(config: ExperimentConfig) -> tuple[Table, Table]:
    """Misclassification rate and mean likeliness per filter radius, plus the per-query report."""
    batches = parallel_map(
        lambda repetition: classification_repetition(config, repetition),
        range(config.classify.repetitions),
        config.threads,
    )
    records = [record for batch in batches for record in batch]
    labels = sorted({label for record in records for label in record.distances} | {r.true_label for r in records})

    rates = Table(["rho", "misclassification_rate", "mean_likeliness", "queries", "failures"], shrink=False)
    for rho in config.rhos:
        at_rho = [record for record in records if record.rho == rho]
        decided = [record for record in at_rho if record.predicted_label is not None]
        wrong = sum(record.predicted_label != record.true_label for record in decided)
        rates.add(
            {
                "rho": rho,
                "misclassification_rate": wrong / len(decided) if decided else math.nan,
                "mean_likeliness": _mean([record.likeliness for record in at_rho if record.likeliness is not None]),
                "queries": len(at_rho),
                "failures": len(at_rho) - len(decided),
            }
        )

    columns = ["repetition", "query", "rho", "true_label", "predicted_label"]
    columns += [f"distance_{label}" for label in labels] + ["likeliness"]
    report = Table(columns, shrink=False)
    for record in records:
        row = {
            "repetition": record.repetition,
            "query": record.query,
            "rho": record.rho,
            "true_label": record.true_label,
            "predicted_label": record.predicted_label,
            "likeliness": record.likeliness,
        }
        row.update({f"distance_{label}": record.distances.get(label) for label in labels})
        report.add(row)
    return rates, report
