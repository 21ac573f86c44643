from __future__ import annotations

import dataclasses
import logging
import math
import re
import warnings
from functools import cached_property
from os import PathLike
from pathlib import Path
from typing import TYPE_CHECKING, Sequence, Union

import numpy
from scipy import ndimage

from tandist.atoms import Field, Pattern, pattern_norm
from tandist.exceptions import ConditioningWarning, PGMParseError, RankDeficientMetricError, WindowTooSmallError
from tandist.util import random_stream

if TYPE_CHECKING:
    from tandist.transforms import TransformModel

logger = logging.getLogger(__name__)

SeedLike = Union[int, numpy.random.Generator]

REFERENCE_ATOMS = 20
REFERENCE_PSI_RANGE = (-math.pi, math.pi)
REFERENCE_TAU_RANGE = (-4.0, 4.0)
REFERENCE_SIGMA_RANGE = (0.3, 2.3)
REFERENCE_COEFF_RANGE = (-1.0, 1.0)

NOISE_ATOMS = 100
NOISE_SIGMA_RANGE = (0.1, 0.5)
NOISE_TAU_RANGE = (-6.0, 6.0)

PGM_WORLD_HALF_WIDTH = 6.0
MIN_FD_DISPLACEMENT = 1e-3


def as_generator(seed: SeedLike) -> numpy.random.Generator:
    if isinstance(seed, numpy.random.Generator):
        return seed
    return random_stream(seed)


@dataclasses.dataclass(frozen=True)
class QuadratureSpec:
    """Square Riemann-sum grid on [-L, L]^2 realizing every plane integral.

    The outer `border_fraction` of the window forms the border ring used to detect integrands
    that are truncated by the window.
    """

    half_width: float = 12.0
    step: float = 0.05
    boundary_tolerance: float = 1e-6
    border_fraction: float = 0.05
    max_points: int = 801

    def __post_init__(self) -> None:
        if not self.half_width > 0.0:
            raise ValueError(f"Quadrature half width must be positive, got {self.half_width}")
        if not self.step > 0.0:
            raise ValueError(f"Quadrature step must be positive, got {self.step}")
        if self.step > self.half_width / 10.0:
            raise ValueError(f"Quadrature step {self.step} exceeds a tenth of the half width {self.half_width}")
        if not 0.0 < self.border_fraction < 1.0:
            raise ValueError(f"Border fraction must lie in (0, 1), got {self.border_fraction}")
        if self.max_points < 21:
            raise ValueError(f"max_points must be at least 21, got {self.max_points}")

    @cached_property
    def axis(self) -> numpy.ndarray:
        count = int(round(self.half_width / self.step))
        return numpy.arange(-count, count + 1) * self.step

    @cached_property
    def points(self) -> numpy.ndarray:
        """Grid points of shape (n, n, 2); row index follows y, column index follows x."""
        xs, ys = numpy.meshgrid(self.axis, self.axis)
        return numpy.stack([xs, ys], axis=-1)

    @cached_property
    def border_mask(self) -> numpy.ndarray:
        reach = numpy.max(numpy.abs(self.points), axis=-1)
        return numpy.asarray(reach > (1.0 - self.border_fraction) * self.axis[-1])

    @property
    def cell_area(self) -> float:
        return self.step**2

    def integrate(self, values: numpy.ndarray) -> float:
        return float(numpy.sum(values) * self.cell_area)

    def check_boundary(self, density: numpy.ndarray, what: str = "integrand") -> None:
        magnitude = numpy.abs(density).reshape(-1)
        total = float(numpy.sum(magnitude))
        if total == 0.0:
            return
        ratio = float(numpy.sum(magnitude[self.border_mask.reshape(-1)])) / total
        if ratio > self.boundary_tolerance:
            raise WindowTooSmallError(
                f"{ratio:.3g} of the {what} mass lies on the border ring of [-{self.half_width}, {self.half_width}]^2"
            )

    def fit(self, *patterns: Pattern, margin: float = 4.5) -> QuadratureSpec:
        """Widen the window to cover the patterns and coarsen the step to respect `max_points`."""
        extent = max((p.extent(margin) for p in patterns), default=0.0)
        half_width = max(self.half_width, extent)
        step = max(self.step, 2.0 * half_width / (self.max_points - 1))
        if half_width == self.half_width and step == self.step:
            return self
        logger.debug("Quadrature window fitted: L=%.4g h=%.4g", half_width, step)
        return dataclasses.replace(self, half_width=half_width, step=step)

    def refined(self) -> QuadratureSpec:
        return dataclasses.replace(self, step=self.step / 2.0, max_points=2 * self.max_points - 1)


@dataclasses.dataclass(frozen=True, eq=False)
class RasterImage:
    """Pixel grid with an axis-aligned world map: pixel (row, col) sits at origin + pixel_size * (col, row)."""

    values: numpy.ndarray
    origin: tuple[float, float]
    pixel_size: float

    def __post_init__(self) -> None:
        values = numpy.array(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise ValueError(f"Raster must be a 2-D grid of at least 2x2 pixels, got shape {values.shape}")
        if not (math.isfinite(self.pixel_size) and self.pixel_size > 0.0):
            raise ValueError(f"Pixel size must be positive, got {self.pixel_size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def window(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """World extent of the pixel edges as ((x_min, x_max), (y_min, y_max))."""
        half = 0.5 * self.pixel_size
        x0, y0 = self.origin
        return (
            (x0 - half, x0 + (self.width - 1) * self.pixel_size + half),
            (y0 - half, y0 + (self.height - 1) * self.pixel_size + half),
        )

    @cached_property
    def coordinates(self) -> numpy.ndarray:
        xs = self.origin[0] + self.pixel_size * numpy.arange(self.width)
        ys = self.origin[1] + self.pixel_size * numpy.arange(self.height)
        grid_x, grid_y = numpy.meshgrid(xs, ys)
        return numpy.stack([grid_x, grid_y], axis=-1)

    def world_to_pixel(self, points: numpy.ndarray) -> numpy.ndarray:
        """Fractional (row, col) indices of world points."""
        points = numpy.asarray(points, dtype=float)
        cols = (points[..., 0] - self.origin[0]) / self.pixel_size
        rows = (points[..., 1] - self.origin[1]) / self.pixel_size
        return numpy.stack([rows, cols], axis=-1)

    def pixel_to_world(self, indices: numpy.ndarray) -> numpy.ndarray:
        indices = numpy.asarray(indices, dtype=float)
        xs = self.origin[0] + self.pixel_size * indices[..., 1]
        ys = self.origin[1] + self.pixel_size * indices[..., 0]
        return numpy.stack([xs, ys], axis=-1)

    def sample(self, points: numpy.ndarray) -> numpy.ndarray:
        """Bilinear interpolation at world points; zero outside the grid."""
        indices = self.world_to_pixel(points)
        shape = indices.shape[:-1]
        flat = indices.reshape(-1, 2).T
        sampled = ndimage.map_coordinates(self.values, flat, order=1, mode="constant", cval=0.0)
        return numpy.asarray(sampled).reshape(shape)

    def with_values(self, values: numpy.ndarray) -> RasterImage:
        return RasterImage(values, self.origin, self.pixel_size)

    def _check_compatible(self, other: RasterImage) -> None:
        same_grid = self.values.shape == other.values.shape and self.origin == other.origin
        if not same_grid or self.pixel_size != other.pixel_size:
            raise ValueError("Rasters live on different grids")

    def inner(self, other: RasterImage) -> float:
        self._check_compatible(other)
        return float(numpy.sum(self.values * other.values) * self.pixel_size**2)

    def norm(self) -> float:
        return math.sqrt(self.inner(self))

    def __sub__(self, other: RasterImage) -> RasterImage:
        self._check_compatible(other)
        return self.with_values(self.values - other.values)


def rasterize(field: Field, quad: QuadratureSpec) -> RasterImage:
    values = field(quad.points)
    return RasterImage(values, origin=(float(quad.axis[0]), float(quad.axis[0])), pixel_size=quad.step)


def warp_raster(raster: RasterImage, model: TransformModel, lam: Sequence[float] | numpy.ndarray) -> RasterImage:
    """Raster of p_lam(X) = p(a(lam, X)) on the same grid, by bilinear resampling."""
    warped = raster.sample(model.coord_map(lam, raster.coordinates))
    return raster.with_values(warped)


def finite_difference_tangents(
    raster: RasterImage,
    model: TransformModel,
    lam: Sequence[float] | numpy.ndarray,
    step: float = 1e-2,
) -> list[RasterImage]:
    """Central differences of the warped raster along each parameter axis."""
    if not step > 0.0:
        raise ValueError(f"Finite-difference step must be positive, got {step}")
    lam = model.check(lam)
    coordinates = raster.coordinates
    tangents = []
    for axis in range(model.dim):
        offset = numpy.zeros(model.dim)
        offset[axis] = step
        forward = model.coord_map(lam + offset, coordinates)
        backward = model.coord_map(lam - offset, coordinates)
        displacement = float(numpy.max(numpy.linalg.norm(forward - backward, axis=-1))) / (2.0 * raster.pixel_size)
        if displacement < MIN_FD_DISPLACEMENT:
            message = (
                f"Finite-difference step {step} moves samples by at most {displacement:.3g} pixels along "
                f"axis {model.axes[axis]}; the difference quotient is ill-conditioned"
            )
            logger.warning(message)
            warnings.warn(message, ConditioningWarning)
        values = (raster.sample(forward) - raster.sample(backward)) / (2.0 * step)
        tangents.append(raster.with_values(values))
    return tangents


def rasterized_registration(
    reference: RasterImage,
    target: RasterImage,
    model: TransformModel,
    lam_r: Sequence[float] | numpy.ndarray,
    step: float = 1e-2,
) -> numpy.ndarray:
    """One tangent-distance step between two rasters on the same grid.

    Tangents are finite differences of the warped reference and the metric is a Riemann sum.
    """
    lam_r = model.check(lam_r)
    warped = warp_raster(reference, model, lam_r)
    tangents = finite_difference_tangents(reference, model, lam_r, step)
    metric = numpy.array([[first.inner(second) for second in tangents] for first in tangents])
    residual = target - warped
    projections = numpy.array([tangent.inner(residual) for tangent in tangents])
    eigenvalues = numpy.linalg.eigvalsh(metric)
    trace = float(numpy.trace(metric))
    if not numpy.all(numpy.isfinite(metric)) or not trace > 0.0 or eigenvalues[0] < 1e-10 * trace:
        raise RankDeficientMetricError(f"Raster metric is rank deficient: eigenvalues {eigenvalues.tolist()}")
    return numpy.asarray(lam_r + numpy.linalg.solve(metric, projections))


def synth_random_reference(seed: SeedLike, atoms: int = REFERENCE_ATOMS) -> Pattern:
    rng = as_generator(seed)
    return Pattern.from_components(
        coeffs=rng.uniform(*REFERENCE_COEFF_RANGE, size=atoms),
        psis=rng.uniform(*REFERENCE_PSI_RANGE, size=atoms),
        centers=rng.uniform(*REFERENCE_TAU_RANGE, size=(atoms, 2)),
        sigmas=rng.uniform(*REFERENCE_SIGMA_RANGE, size=(atoms, 2)),
    )


def synth_noise_pattern(
    count: int = NOISE_ATOMS,
    scale_range: tuple[float, float] = NOISE_SIGMA_RANGE,
    target_nu: float = 0.0,
    seed: SeedLike = 0,
    tau_range: tuple[float, float] = NOISE_TAU_RANGE,
) -> Pattern:
    """Small-scale atoms with normal coefficients, rescaled to the norm `target_nu`."""
    if target_nu < 0.0:
        raise ValueError(f"Target noise level must be non-negative, got {target_nu}")
    if target_nu == 0.0 or count == 0:
        return Pattern()
    rng = as_generator(seed)
    pattern = Pattern.from_components(
        coeffs=rng.standard_normal(count),
        psis=rng.uniform(-math.pi, math.pi, size=count),
        centers=rng.uniform(*tau_range, size=(count, 2)),
        sigmas=rng.uniform(*scale_range, size=(count, 2)),
    )
    return pattern.scaled(target_nu / pattern_norm(pattern))


_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_token(data: bytes, offset: int, what: str) -> tuple[bytes, int]:
    match = _PGM_TOKEN.match(data, offset)
    if match is None:
        raise PGMParseError(f"Missing {what} in PGM header", offset)
    return match.group(1), match.end()


def _read_integer(data: bytes, offset: int, what: str) -> tuple[int, int]:
    token, end = _read_token(data, offset, what)
    if not token.isdigit():
        raise PGMParseError(f"Invalid {what} {token!r} in PGM header", end - len(token))
    return int(token), end


def load_pgm(path: str | PathLike, half_width: float = PGM_WORLD_HALF_WIDTH) -> RasterImage:
    """Read a binary (P5) PGM into [0, 1] intensities centered on the world origin.

    The longer image side spans [-half_width, half_width]; the top image row maps to the largest y.
    """
    data = Path(path).read_bytes()
    magic, offset = _read_token(data, 0, "magic number")
    if magic == b"P2":
        raise PGMParseError("ASCII PGM (P2) is not supported; convert the image to binary P5", 0)
    if magic != b"P5":
        raise PGMParseError(f"Unknown magic number {magic!r}; expected P5", 0)
    width, offset = _read_integer(data, offset, "width")
    height, offset = _read_integer(data, offset, "height")
    maxval, offset = _read_integer(data, offset, "maxval")
    if width < 2 or height < 2:
        raise PGMParseError(f"Image size {width}x{height} is too small", offset)
    if not 0 < maxval < 65536:
        raise PGMParseError(f"maxval {maxval} is out of range", offset)
    if offset >= len(data) or not data[offset : offset + 1].isspace():
        raise PGMParseError("Expected a single whitespace byte after maxval", offset)
    offset += 1

    dtype = numpy.dtype(">u2") if maxval > 255 else numpy.dtype("u1")
    expected = width * height * dtype.itemsize
    if len(data) - offset < expected:
        raise PGMParseError(f"Pixel data truncated: expected {expected} bytes, found {len(data) - offset}", len(data))
    pixels = numpy.frombuffer(data, dtype=dtype, count=width * height, offset=offset).reshape(height, width)
    if numpy.any(pixels > maxval):
        raise PGMParseError(f"Pixel value exceeds maxval {maxval}", offset)

    pixel_size = 2.0 * half_width / max(width, height)
    origin = (-0.5 * (width - 1) * pixel_size, -0.5 * (height - 1) * pixel_size)
    logger.debug("Loaded %s: %dx%d, maxval %d, pixel size %.4g", path, width, height, maxval, pixel_size)
    return RasterImage(pixels[::-1].astype(float) / maxval, origin=origin, pixel_size=pixel_size)


def save_pgm(raster: RasterImage, path: str | PathLike, maxval: int = 65535) -> None:
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval must lie in [1, 65535], got {maxval}")
    dtype = numpy.dtype(">u2") if maxval > 255 else numpy.dtype("u1")
    quantized = numpy.rint(numpy.clip(raster.values, 0.0, 1.0) * maxval).astype(dtype)
    header = f"P5\n{raster.width} {raster.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + quantized[::-1].tobytes())
