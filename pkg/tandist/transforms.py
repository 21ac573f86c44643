from __future__ import annotations

import dataclasses
import enum
import logging
import math
from typing import Any, Mapping, NamedTuple, Sequence

import numpy

from tandist.atoms import Atom, AtomArrays, AtomParams, Pattern, rotation_matrix
from tandist.exceptions import CalibrationError
from tandist.raster import QuadratureSpec

logger = logging.getLogger(__name__)

DEFAULT_ROTATION_GAIN = 0.1 * math.pi
DEFAULT_SCALE_GAIN = math.log(1.13) / 0.6
# tangent norms below this fraction of the translation norm count as vanishing
CALIBRATION_TOLERANCE = 1e-8

# swapping (x, y) -> (y, -x); d/dtheta of the pattern-frame point is J @ Y
ROTATION_GENERATOR = numpy.array([[0.0, 1.0], [-1.0, 0.0]])

DEFAULT_DOMAIN = {"theta": (-1.0, 1.0), "tx": (-1.0, 1.0), "ty": (-1.0, 1.0), "scale": (0.0, 2.0)}
SAMPLING_RANGE = {"theta": (-0.4, 0.4), "tx": (-0.4, 0.4), "ty": (-0.4, 0.4), "scale": (0.4, 1.6)}


class TransformKind(str, enum.Enum):
    TRANSLATION_2D = "Translation2D"
    TRANS_ROT_3D = "TransRot3D"
    TRANS_ROT_SCALE_4D = "TransRotScale4D"

    @property
    def axes(self) -> tuple[str, ...]:
        if self is TransformKind.TRANSLATION_2D:
            return ("tx", "ty")
        if self is TransformKind.TRANS_ROT_3D:
            return ("theta", "tx", "ty")
        return ("theta", "tx", "ty", "scale")


class Components(NamedTuple):
    """Physical transformation: rotation angle (radians), translation and scale factor."""

    angle: float
    shift: numpy.ndarray
    scale: float


@dataclasses.dataclass(frozen=True)
class TransformModel:
    """Similarity-transformation family acting on the plane and on Gaussian atoms.

    Parameters are normalized: the physical angle is `rotation_gain * theta` and the physical
    scale factor is `exp(scale_gain * (scale - 1))`, so the identity sits at theta = 0, t = 0
    and scale = 1.
    """

    kind: TransformKind = TransformKind.TRANSLATION_2D
    rotation_gain: float = DEFAULT_ROTATION_GAIN
    scale_gain: float = DEFAULT_SCALE_GAIN
    domain: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        kind = TransformKind(self.kind)
        object.__setattr__(self, "kind", kind)
        for name in ("rotation_gain", "scale_gain"):
            gain = float(getattr(self, name))
            if not math.isfinite(gain) or gain <= 0.0:
                raise ValueError(f"{name} must be a positive finite number, got {gain}")
            object.__setattr__(self, name, gain)
        domain = self.domain or tuple(DEFAULT_DOMAIN[axis] for axis in kind.axes)
        domain = tuple((float(low), float(high)) for low, high in domain)
        if len(domain) != len(kind.axes):
            raise ValueError(f"{kind.value} needs {len(kind.axes)} domain intervals, got {len(domain)}")
        for axis, (low, high) in zip(kind.axes, domain):
            if not (math.isfinite(low) and math.isfinite(high)) or low > high:
                raise ValueError(f"Invalid domain interval for axis {axis}: [{low}, {high}]")
        object.__setattr__(self, "domain", domain)

    @property
    def dim(self) -> int:
        return len(self.kind.axes)

    @property
    def axes(self) -> tuple[str, ...]:
        return self.kind.axes

    @property
    def has_rotation(self) -> bool:
        return "theta" in self.axes

    @property
    def has_scale(self) -> bool:
        return "scale" in self.axes

    @property
    def translation_axes(self) -> tuple[int, int]:
        return self.axes.index("tx"), self.axes.index("ty")

    def identity(self) -> numpy.ndarray:
        return numpy.array([1.0 if axis == "scale" else 0.0 for axis in self.axes])

    def check(self, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        vector = numpy.asarray(lam, dtype=float)
        if vector.shape != (self.dim,):
            raise ValueError(f"{self.kind.value} expects a parameter vector of length {self.dim}, got {vector.shape}")
        if not numpy.all(numpy.isfinite(vector)):
            raise ValueError(f"Parameter vector must be finite: {vector}")
        return vector

    def contains(self, lam: Sequence[float] | numpy.ndarray, tolerance: float = 0.0) -> bool:
        vector = self.check(lam)
        return all(low - tolerance <= value <= high + tolerance for value, (low, high) in zip(vector, self.domain))

    def on_boundary(self, lam: Sequence[float] | numpy.ndarray, tolerance: float = 1e-9) -> bool:
        vector = self.check(lam)
        return any(
            high > low and (abs(value - low) <= tolerance or abs(value - high) <= tolerance)
            for value, (low, high) in zip(vector, self.domain)
        )

    def clip(self, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        lows, highs = zip(*self.domain)
        return numpy.clip(self.check(lam), lows, highs)

    def components(self, lam: Sequence[float] | numpy.ndarray) -> Components:
        vector = self.check(lam)
        values = dict(zip(self.axes, vector))
        angle = self.rotation_gain * values.get("theta", 0.0)
        scale = math.exp(self.scale_gain * (values["scale"] - 1.0)) if self.has_scale else 1.0
        return Components(angle=angle, shift=numpy.array([values["tx"], values["ty"]]), scale=scale)

    def coord_map(self, lam: Sequence[float] | numpy.ndarray, points: numpy.ndarray) -> numpy.ndarray:
        """a(lam, X) = s^-1 R(theta)^-1 (X - t)."""
        angle, shift, scale = self.components(lam)
        points = numpy.asarray(points, dtype=float)
        return numpy.asarray((points - shift) @ rotation_matrix(angle) / scale)

    def inverse_map(self, lam: Sequence[float] | numpy.ndarray, points: numpy.ndarray) -> numpy.ndarray:
        angle, shift, scale = self.components(lam)
        points = numpy.asarray(points, dtype=float)
        return numpy.asarray(scale * points @ rotation_matrix(angle).T + shift)

    def inverse(self, lam: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
        """Parameters whose coordinate map undoes `coord_map(lam, .)`."""
        vector = self.check(lam)
        angle, shift, scale = self.components(vector)
        shift_inverse = -(rotation_matrix(-angle) @ shift) / scale
        values = dict(zip(self.axes, vector))
        values["tx"], values["ty"] = shift_inverse
        if self.has_rotation:
            values["theta"] = -values["theta"]
        if self.has_scale:
            values["scale"] = 2.0 - values["scale"]
        return numpy.array([values[axis] for axis in self.axes])

    def apply_to_pattern(self, lam: Sequence[float] | numpy.ndarray, p: Pattern) -> Pattern:
        angle, shift, scale = self.components(lam)
        rotation = rotation_matrix(angle)
        atoms = []
        for atom in p.atoms:
            center = scale * rotation @ numpy.asarray(atom.params.tau) + shift
            params = AtomParams(
                atom.params.psi + angle,
                (float(center[0]), float(center[1])),
                (scale * atom.params.sigma[0], scale * atom.params.sigma[1]),
            )
            atoms.append(Atom(atom.coeff, params))
        return Pattern(tuple(atoms))

    def transform_arrays(self, lam: Sequence[float] | numpy.ndarray, arrays: AtomArrays) -> AtomArrays:
        """`apply_to_pattern` on the cached array form, without building atoms."""
        angle, shift, scale = self.components(lam)
        rotation = rotation_matrix(angle)
        return AtomArrays(
            coeffs=arrays.coeffs,
            centers=scale * arrays.centers @ rotation.T + shift,
            covariances=scale**2 * rotation @ arrays.covariances @ rotation.T,
            precisions=rotation @ arrays.precisions @ rotation.T / scale**2,
            areas=scale**2 * arrays.areas,
        )

    def first_coordinate_derivative(
        self,
        lam: Sequence[float] | numpy.ndarray,
        axis: int,
        frame_points: numpy.ndarray,
    ) -> numpy.ndarray:
        """d a(lam, X) / d lam_axis expressed at the pattern-frame points Y = a(lam, X)."""
        name = self.axes[axis]
        if name in ("tx", "ty"):
            angle, _, scale = self.components(lam)
            unit = numpy.array([1.0, 0.0]) if name == "tx" else numpy.array([0.0, 1.0])
            vector = -(rotation_matrix(angle).T @ unit) / scale
            return numpy.broadcast_to(vector, frame_points.shape)
        if name == "theta":
            return numpy.asarray(self.rotation_gain * frame_points @ ROTATION_GENERATOR.T)
        return numpy.asarray(-self.scale_gain * frame_points)

    def second_coordinate_derivative(
        self,
        lam: Sequence[float] | numpy.ndarray,
        first: int,
        second: int,
        frame_points: numpy.ndarray,
    ) -> numpy.ndarray:
        names = {self.axes[first], self.axes[second]}
        translations = names & {"tx", "ty"}
        if names <= {"tx", "ty"}:
            return numpy.zeros(frame_points.shape)
        if names == {"theta"}:
            return numpy.asarray(-(self.rotation_gain**2) * frame_points)
        if names == {"scale"}:
            return numpy.asarray(self.scale_gain**2 * frame_points)
        if names == {"theta", "scale"}:
            return numpy.asarray(-self.scale_gain * self.rotation_gain * frame_points @ ROTATION_GENERATOR.T)
        translation = self.axes.index(translations.pop())
        shifted = self.first_coordinate_derivative(lam, translation, frame_points)
        if "theta" in names:
            return numpy.asarray(self.rotation_gain * shifted @ ROTATION_GENERATOR.T)
        return numpy.asarray(-self.scale_gain * shifted)

    def sample(
        self,
        rng: numpy.random.Generator,
        ranges: Mapping[str, tuple[float, float]] | None = None,
    ) -> numpy.ndarray:
        ranges = {**SAMPLING_RANGE, **(ranges or {})}
        return numpy.array([rng.uniform(*ranges[axis]) for axis in self.axes])

    def with_gains(self, rotation_gain: float | None = None, scale_gain: float | None = None) -> TransformModel:
        return dataclasses.replace(
            self,
            rotation_gain=self.rotation_gain if rotation_gain is None else rotation_gain,
            scale_gain=self.scale_gain if scale_gain is None else scale_gain,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "rotation_gain": self.rotation_gain,
            "scale_gain": self.scale_gain,
            "domain": [list(interval) for interval in self.domain],
        }


def coord_map(m: TransformModel, lam: Sequence[float] | numpy.ndarray, point: numpy.ndarray) -> numpy.ndarray:
    return m.coord_map(lam, point)


def apply_to_pattern(m: TransformModel, lam: Sequence[float] | numpy.ndarray, p: Pattern) -> Pattern:
    return m.apply_to_pattern(lam, p)


def calibrate_gains(m: TransformModel, p: Pattern, quad: QuadratureSpec | None = None) -> TransformModel:
    """Rescale the gains so that rotation and scale tangents at the identity match the x-translation tangent.

    The gains are solved in closed form instead of by bisection on the norm mismatch: at the identity
    the norm of a gained tangent is linear in its gain, so the matching gain is the ratio of the
    x-translation tangent norm to the unit-gain tangent norm. The result does not depend on the gains
    of `m`, so calibrating twice returns the same gains.
    """
    if p.is_zero:
        raise CalibrationError("Cannot calibrate gains on a zero pattern")
    quad = quad or QuadratureSpec().fit(p)
    points = quad.points
    gradient = p.gradient(points)
    x, y = points[..., 0], points[..., 1]
    translation_norm = math.sqrt(quad.integrate(gradient[..., 0] ** 2))
    if translation_norm == 0.0:
        raise CalibrationError("Translation tangent vanishes; the pattern is constant along x")

    rotation_gain, scale_gain = m.rotation_gain, m.scale_gain
    if m.has_rotation:
        rotation_norm = math.sqrt(quad.integrate((gradient[..., 0] * y - gradient[..., 1] * x) ** 2))
        if rotation_norm <= CALIBRATION_TOLERANCE * translation_norm:
            raise CalibrationError("Rotation tangent vanishes; the pattern is rotation invariant")
        rotation_gain = translation_norm / rotation_norm
    if m.has_scale:
        scale_norm = math.sqrt(quad.integrate((gradient[..., 0] * x + gradient[..., 1] * y) ** 2))
        if scale_norm <= CALIBRATION_TOLERANCE * translation_norm:
            raise CalibrationError("Scale tangent vanishes")
        scale_gain = translation_norm / scale_norm

    logger.debug(
        "Calibrated gains: rotation %.6g -> %.6g, scale %.6g -> %.6g",
        m.rotation_gain,
        rotation_gain,
        m.scale_gain,
        scale_gain,
    )
    return m.with_gains(rotation_gain, scale_gain)
