from __future__ import annotations

import dataclasses
import logging
import math
from typing import Mapping, NamedTuple, Sequence, Union

import numpy

from tandist.atoms import Pattern, smooth_pattern
from tandist.bounds import BoundInputs, filtered_bound
from tandist.exceptions import ClassificationError, IllPosedBankError, NumericalError
from tandist.manifold import GeometryConstants, GridSpec, ManifoldGeometry, Projection
from tandist.raster import (
    REFERENCE_COEFF_RANGE,
    REFERENCE_PSI_RANGE,
    REFERENCE_SIGMA_RANGE,
    REFERENCE_TAU_RANGE,
    QuadratureSpec,
    SeedLike,
    as_generator,
)
from tandist.register import tangent_step
from tandist.transforms import TransformModel

logger = logging.getLogger(__name__)

ReferenceParams = Union[Mapping[str, Sequence[float]], Sequence[Sequence[float]], None]


@dataclasses.dataclass(frozen=True)
class ClassEntry:
    label: str
    pattern: Pattern
    geometry: ManifoldGeometry
    constants: GeometryConstants


class ClassBank:
    """Class-representative patterns sharing one transformation model.

    Smoothed geometries and their constants are cached per filter radius.
    """

    def __init__(self, entries: Sequence[ClassEntry], grid: GridSpec | None = None) -> None:
        entries = list(entries)
        if len(entries) < 2:
            raise IllPosedBankError(f"A class bank needs at least two classes, got {len(entries)}")
        labels = [entry.label for entry in entries]
        if len(set(labels)) != len(labels):
            raise IllPosedBankError(f"Class labels must be unique, got {labels}")
        models = {entry.geometry.model for entry in entries}
        if len(models) != 1:
            raise IllPosedBankError("All classes must share the same transformation model")
        self._entries = entries
        self._grid = grid or GridSpec()
        self._levels: dict[float, list[ManifoldGeometry]] = {0.0: [entry.geometry for entry in entries]}
        self._level_constants: dict[float, list[GeometryConstants]] = {0.0: [entry.constants for entry in entries]}

    @classmethod
    def build(
        cls,
        model: TransformModel,
        patterns: Mapping[str, Pattern] | Sequence[tuple[str, Pattern]],
        quad: QuadratureSpec | None = None,
        grid: GridSpec | None = None,
    ) -> ClassBank:
        items = list(patterns.items()) if isinstance(patterns, Mapping) else list(patterns)
        labels = [label for label, _ in items]
        if len(set(labels)) != len(labels):
            raise IllPosedBankError(f"Class labels must be unique, got {labels}")
        grid = grid or GridSpec()
        entries = []
        for label, pattern in items:
            geometry = ManifoldGeometry(model, pattern, quad)
            entries.append(ClassEntry(label, pattern, geometry, geometry.estimate_constants(grid)))
        return cls(entries, grid)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[ClassEntry]:
        return list(self._entries)

    @property
    def labels(self) -> list[str]:
        return [entry.label for entry in self._entries]

    @property
    def model(self) -> TransformModel:
        return self._entries[0].geometry.model

    @property
    def grid(self) -> GridSpec:
        return self._grid

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"Unknown class label '{label}'") from None

    def entry(self, label: str) -> ClassEntry:
        return self._entries[self.index(label)]

    def level(self, rho: float) -> list[ManifoldGeometry]:
        if rho not in self._levels:
            self._levels[rho] = [entry.geometry.smoothed(rho) for entry in self._entries]
        return self._levels[rho]

    def level_constants(self, rho: float) -> list[GeometryConstants]:
        if rho not in self._level_constants:
            self._level_constants[rho] = [geometry.estimate_constants(self._grid) for geometry in self.level(rho)]
        return self._level_constants[rho]

    def reference_params(self, lam_r: ReferenceParams) -> list[numpy.ndarray]:
        if lam_r is None:
            return [self.model.identity() for _ in self._entries]
        if isinstance(lam_r, Mapping):
            return [self.model.check(lam_r.get(label, self.model.identity())) for label in self.labels]
        if len(lam_r) != len(self._entries):
            raise ValueError(f"Expected {len(self._entries)} reference vectors, got {len(lam_r)}")
        return [self.model.check(lam) for lam in lam_r]


class Classification(NamedTuple):
    label: str
    distances: dict[str, float]
    estimates: dict[str, numpy.ndarray]
    excluded: dict[str, str]


def classify_query(bank: ClassBank, q: Pattern, rho: float = 0.0, lam_r: ReferenceParams = None) -> Classification:
    """Estimate the parameters of every class on the smoothed pair, then compare unfiltered distances."""
    smoothed = smooth_pattern(q, rho)
    references = bank.reference_params(lam_r)
    distances: dict[str, float] = {}
    estimates: dict[str, numpy.ndarray] = {}
    excluded: dict[str, str] = {}
    for entry, geometry, reference in zip(bank.entries, bank.level(rho), references):
        try:
            step = tangent_step(geometry, smoothed, reference)
            if not numpy.all(numpy.isfinite(step.lam)):
                raise NumericalError(f"non-finite estimate {step.lam.tolist()}")
            distance = entry.geometry.distance(q, step.lam)
        except NumericalError as error:
            logger.warning("Class %s excluded: %s", entry.label, error)
            excluded[entry.label] = str(error)
            continue
        distances[entry.label] = distance
        estimates[entry.label] = step.lam

    if not distances:
        raise ClassificationError(f"Every class was excluded: {excluded}")
    # first minimum in bank order wins ties
    label = min(distances, key=lambda name: (distances[name], bank.index(name)))
    return Classification(label, distances, estimates, excluded)


def project_all(bank: ClassBank, q: Pattern, rho: float = 0.0) -> list[Projection]:
    smoothed = smooth_pattern(q, rho)
    return [geometry.project_bruteforce(smoothed, bank.grid) for geometry in bank.level(rho)]


def _nearest(bank: ClassBank, projections: Sequence[Projection]) -> str:
    distances = [projection.distance for projection in projections]
    return bank.labels[int(numpy.argmin(distances))]


def true_label(bank: ClassBank, q: Pattern) -> str:
    """Label of the manifold closest to `q`, from brute-force projections."""
    return _nearest(bank, project_all(bank, q))


def misclassification_likeliness(
    bank: ClassBank,
    q: Pattern,
    rho: float,
    lam_r: ReferenceParams = None,
    label: str | None = None,
) -> float:
    """Alignment bound of the true class at filter radius `rho`, weighted by its tangent-norm bound."""
    label = true_label(bank, q) if label is None else label
    index = bank.index(label)
    reference = bank.reference_params(lam_r)[index]
    geometry = bank.level(rho)[index]
    projection = geometry.project_bruteforce(smooth_pattern(q, rho), bank.grid)
    inputs = BoundInputs(
        K=bank.level_constants(rho)[index].K,
        metric=geometry.metric_tensor(reference),
        nu=projection.distance,
        delta=projection.lam - reference,
    )
    return bank.entries[index].constants.T * filtered_bound(inputs).total


@dataclasses.dataclass(frozen=True)
class AssumptionViolation:
    sample: int
    label: str
    distances: dict[str, float]


@dataclasses.dataclass(frozen=True)
class ClassStats:
    epsilon: float
    V: dict[str, float]
    Delta: float
    violations: tuple[AssumptionViolation, ...] = ()

    @property
    def ill_posed(self) -> bool:
        return not self.epsilon > 0.0


def parameter_deviation_bound(model: TransformModel, ranges: Mapping[str, tuple[float, float]]) -> float:
    """Largest l1 distance from the identity to a parameter vector inside `ranges`."""
    deviation = 0.0
    for axis, center in zip(model.axes, model.identity()):
        low, high = ranges[axis]
        deviation += max(abs(low - center), abs(high - center))
    return float(deviation)


def estimate_class_stats(
    bank: ClassBank,
    samples: Sequence[Pattern | tuple[str, Pattern]],
    delta: float,
) -> ClassStats:
    """Margin, per-class spread and assumption violations over a sample set.

    A sample given with its intended label violates the separation assumption when it is not
    strictly closer to that class than to every other class.
    """
    if delta < 0.0:
        raise ValueError(f"Delta must be non-negative, got {delta}")
    V = {label: 0.0 for label in bank.labels}
    epsilon = math.inf
    violations = []
    for index, sample in enumerate(samples):
        intended, q = sample if isinstance(sample, tuple) else (None, sample)
        distances = {label: projection.distance for label, projection in zip(bank.labels, project_all(bank, q))}
        nearest = min(bank.labels, key=lambda name: (distances[name], bank.index(name)))
        V[nearest] = max(V[nearest], distances[nearest])
        margin = min(distances[label] - distances[nearest] for label in bank.labels if label != nearest)
        epsilon = min(epsilon, margin)
        if intended is not None:
            own = distances[intended]
            if any(distances[label] <= own for label in bank.labels if label != intended):
                violations.append(AssumptionViolation(index, intended, distances))
    if violations:
        logger.warning("%d samples violate the class separation assumption", len(violations))
    stats = ClassStats(epsilon=epsilon, V=V, Delta=delta, violations=tuple(violations))
    if stats.ill_posed:
        logger.warning("Class bank is ill posed: distance margin %.6g", epsilon)
    return stats


class MisclassificationBound(NamedTuple):
    value: float
    vacuous: bool


def misclassification_bound(
    bank: ClassBank,
    stats: ClassStats,
    label: str,
    lam_r: ReferenceParams = None,
) -> MisclassificationBound:
    """Upper bound of the probability of misclassifying a query of class `label`."""
    if stats.ill_posed:
        raise IllPosedBankError(f"Distance margin must be positive, got {stats.epsilon}")
    index = bank.index(label)
    entry = bank.entries[index]
    metric = entry.geometry.metric_tensor(bank.reference_params(lam_r)[index])
    d = bank.model.dim
    alignment = (
        math.sqrt(d)
        * entry.constants.K
        / metric.min_eigenvalue
        * (0.5 * math.sqrt(metric.trace) * stats.Delta**2 + math.sqrt(d) * stats.V[label] * stats.Delta)
    )
    value = (len(bank) - 1) / stats.epsilon * entry.constants.T * alignment
    vacuous = value >= 1.0
    if vacuous:
        logger.info("Misclassification bound %.4g for class %s is vacuous", value, label)
    return MisclassificationBound(value=value, vacuous=vacuous)


def synth_class_patterns(
    seed: SeedLike,
    classes: int = 2,
    shared: int = 16,
    specific: int = 4,
) -> dict[str, Pattern]:
    """Class patterns made of common atoms plus atoms specific to each class."""
    rng = as_generator(seed)

    def draw(count: int) -> Pattern:
        return Pattern.from_components(
            coeffs=rng.uniform(*REFERENCE_COEFF_RANGE, size=count),
            psis=rng.uniform(*REFERENCE_PSI_RANGE, size=count),
            centers=rng.uniform(*REFERENCE_TAU_RANGE, size=(count, 2)),
            sigmas=rng.uniform(*REFERENCE_SIGMA_RANGE, size=(count, 2)),
        )

    common = draw(shared)
    return {f"class{m}": common + draw(specific) for m in range(classes)}
