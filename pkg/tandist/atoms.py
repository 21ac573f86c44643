from __future__ import annotations

import dataclasses
import json
import logging
import math
from functools import cached_property
from os import PathLike
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterator, NamedTuple, Protocol, Sequence, Union

import numpy

from tandist.exceptions import DegenerateGeometryError
from tandist.util import wrap_angle

if TYPE_CHECKING:
    from tandist.raster import QuadratureSpec

logger = logging.getLogger(__name__)

MIN_SIGMA = 1e-6
MAX_CONDITION = 1e12


class Field(Protocol):
    """Anything evaluable on an array of points with trailing dimension 2."""

    def __call__(self, points: numpy.ndarray) -> numpy.ndarray:
        ...


def rotation_matrix(angle: float) -> numpy.ndarray:
    cos, sin = math.cos(angle), math.sin(angle)
    return numpy.array([[cos, -sin], [sin, cos]])


@dataclasses.dataclass(frozen=True)
class AtomParams:
    """Geometry of a Gaussian atom: rotation `psi`, center `tau` and axis scales `sigma`."""

    psi: float
    tau: tuple[float, float]
    sigma: tuple[float, float]

    def __post_init__(self) -> None:
        psi = float(self.psi)
        tau = (float(self.tau[0]), float(self.tau[1]))
        sigma = (float(self.sigma[0]), float(self.sigma[1]))
        if not all(math.isfinite(value) for value in (psi, *tau, *sigma)):
            raise ValueError(f"Atom parameters must be finite: psi={psi}, tau={tau}, sigma={sigma}")
        if min(sigma) < MIN_SIGMA:
            raise DegenerateGeometryError(f"Atom scales {sigma} fall below the minimum {MIN_SIGMA}")
        # wrapping an in-range angle would perturb its last bits
        if not -math.pi <= psi < math.pi:
            psi = wrap_angle(psi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "sigma", sigma)

    @property
    def rotation(self) -> numpy.ndarray:
        return rotation_matrix(self.psi)

    @property
    def precision(self) -> numpy.ndarray:
        """Theta = Psi sigma^-2 Psi^T, the quadratic form inside the exponent."""
        rotation = self.rotation
        return rotation @ numpy.diag([self.sigma[0] ** -2, self.sigma[1] ** -2]) @ rotation.T

    @property
    def covariance(self) -> numpy.ndarray:
        rotation = self.rotation
        return rotation @ numpy.diag([self.sigma[0] ** 2, self.sigma[1] ** 2]) @ rotation.T

    @property
    def eigenvalues(self) -> tuple[float, float]:
        """Smallest and largest eigenvalue of the precision matrix."""
        inverse_squares = (self.sigma[0] ** -2, self.sigma[1] ** -2)
        return min(inverse_squares), max(inverse_squares)

    @property
    def area(self) -> float:
        return self.sigma[0] * self.sigma[1]


@dataclasses.dataclass(frozen=True)
class Atom:
    coeff: float
    params: AtomParams

    def __post_init__(self) -> None:
        coeff = float(self.coeff)
        if not math.isfinite(coeff):
            raise ValueError(f"Atom coefficient must be finite: {coeff}")
        object.__setattr__(self, "coeff", coeff)


class AtomArrays(NamedTuple):
    coeffs: numpy.ndarray
    centers: numpy.ndarray
    covariances: numpy.ndarray
    precisions: numpy.ndarray
    areas: numpy.ndarray


class PatternDerivatives(NamedTuple):
    values: numpy.ndarray
    gradient: numpy.ndarray
    hessian: numpy.ndarray


@dataclasses.dataclass(frozen=True)
class Pattern:
    """Finite weighted sum of Gaussian atoms.

    Atom order is kept exactly as constructed so that serialization round-trips bit for bit.
    A pattern without atoms is the zero function.
    """

    atoms: tuple[Atom, ...] = ()

    def __post_init__(self) -> None:
        atoms = tuple(self.atoms)
        for atom in atoms:
            if not isinstance(atom, Atom):
                raise TypeError(f"Pattern atoms must be Atom instances, got {type(atom)}")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_components(
        cls,
        coeffs: Sequence[float] | numpy.ndarray,
        psis: Sequence[float] | numpy.ndarray,
        centers: Sequence[Sequence[float]] | numpy.ndarray,
        sigmas: Sequence[Sequence[float]] | numpy.ndarray,
    ) -> Pattern:
        return cls(
            tuple(
                Atom(coeff, AtomParams(psi, (center[0], center[1]), (sigma[0], sigma[1])))
                for coeff, psi, center, sigma in zip(coeffs, psis, centers, sigmas)
            )
        )

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self) -> Iterator[Atom]:
        return iter(self.atoms)

    def __add__(self, other: Pattern) -> Pattern:
        return Pattern(self.atoms + other.atoms)

    def __neg__(self) -> Pattern:
        return self.scaled(-1.0)

    def scaled(self, factor: float) -> Pattern:
        return Pattern(tuple(Atom(atom.coeff * factor, atom.params) for atom in self.atoms))

    @property
    def is_zero(self) -> bool:
        return all(atom.coeff == 0.0 for atom in self.atoms)

    @cached_property
    def arrays(self) -> AtomArrays:
        size = len(self.atoms)
        return AtomArrays(
            coeffs=numpy.array([atom.coeff for atom in self.atoms], dtype=float).reshape(size),
            centers=numpy.array([atom.params.tau for atom in self.atoms], dtype=float).reshape(size, 2),
            covariances=numpy.array([atom.params.covariance for atom in self.atoms], dtype=float).reshape(size, 2, 2),
            precisions=numpy.array([atom.params.precision for atom in self.atoms], dtype=float).reshape(size, 2, 2),
            areas=numpy.array([atom.params.area for atom in self.atoms], dtype=float).reshape(size),
        )

    def extent(self, margin: float = 4.5) -> float:
        """Half-width of a square window holding the pattern's effective support."""
        if not self.atoms:
            return 0.0
        reach = max(max(abs(atom.params.tau[0]), abs(atom.params.tau[1])) for atom in self.atoms)
        spread = max(max(atom.params.sigma) for atom in self.atoms)
        return reach + margin * spread

    def __call__(self, points: numpy.ndarray) -> numpy.ndarray:
        return self.evaluate(points)

    def evaluate(self, points: numpy.ndarray) -> numpy.ndarray:
        return self._accumulate(points, order=0).values

    def gradient(self, points: numpy.ndarray) -> numpy.ndarray:
        return self._accumulate(points, order=1).gradient

    def hessian(self, points: numpy.ndarray) -> numpy.ndarray:
        return self._accumulate(points, order=2).hessian

    def derivatives(self, points: numpy.ndarray) -> PatternDerivatives:
        return self._accumulate(points, order=2)

    def _accumulate(self, points: numpy.ndarray, order: int) -> PatternDerivatives:
        points = numpy.asarray(points, dtype=float)
        if points.shape[-1] != 2:
            raise ValueError(f"Points must have a trailing dimension of 2, got shape {points.shape}")
        shape = points.shape[:-1]
        flat = points.reshape(-1, 2)
        values = numpy.zeros(len(flat))
        gradient = numpy.zeros((len(flat), 2))
        hessian = numpy.zeros((len(flat), 2, 2))
        arrays = self.arrays
        for coeff, center, precision in zip(arrays.coeffs, arrays.centers, arrays.precisions):
            diff = flat - center
            projected = diff @ precision
            weighted = coeff * numpy.exp(-numpy.einsum("ni,ni->n", diff, projected))
            values += weighted
            if order >= 1:
                gradient -= 2.0 * weighted[:, None] * projected
            if order >= 2:
                outer = projected[:, :, None] * projected[:, None, :]
                hessian += weighted[:, None, None] * (4.0 * outer - 2.0 * precision)
        return PatternDerivatives(
            values.reshape(shape),
            gradient.reshape(shape + (2,)),
            hessian.reshape(shape + (2, 2)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "atoms": [
                {
                    "c": atom.coeff,
                    "psi": atom.params.psi,
                    "tau": list(atom.params.tau),
                    "sigma": list(atom.params.sigma),
                }
                for atom in self.atoms
            ]
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Pattern:
        if "atoms" not in data:
            raise ValueError("Pattern data requires an 'atoms' field")
        atoms = []
        for index, item in enumerate(data["atoms"]):
            missing = [key for key in ("c", "psi", "tau", "sigma") if key not in item]
            if missing:
                raise ValueError(f"Pattern atom {index} is missing fields: {', '.join(missing)}")
            params = AtomParams(item["psi"], tuple(item["tau"]), tuple(item["sigma"]))  # type: ignore[arg-type]
            atoms.append(Atom(item["c"], params))
        return cls(tuple(atoms))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> Pattern:
        return cls.from_dict(json.loads(text))

    def save(self, path: str | PathLike) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | PathLike) -> Pattern:
        return cls.loads(Path(path).read_text())


@dataclasses.dataclass(frozen=True)
class FilterKernel:
    """Unit-L1 isotropic Gaussian low-pass filter of radius `rho`."""

    rho: float = 0.0

    def __post_init__(self) -> None:
        rho = float(self.rho)
        if not math.isfinite(rho) or rho < 0.0:
            raise ValueError(f"Filter radius must be a finite non-negative number: {self.rho}")
        object.__setattr__(self, "rho", rho)

    @property
    def is_identity(self) -> bool:
        return self.rho == 0.0

    def __call__(self, points: numpy.ndarray) -> numpy.ndarray:
        if self.is_identity:
            raise ValueError("The identity kernel is a Dirac delta and cannot be sampled")
        points = numpy.asarray(points, dtype=float)
        squared = numpy.sum(points**2, axis=-1)
        return numpy.exp(-squared / self.rho**2) / (math.pi * self.rho**2)


KernelLike = Union[FilterKernel, float]


def eval_pattern(p: Pattern, point: Sequence[float] | numpy.ndarray) -> float:
    return float(p.evaluate(numpy.asarray(point, dtype=float)))


def eval_gradient(p: Pattern, point: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
    return p.gradient(numpy.asarray(point, dtype=float))


def eval_hessian(p: Pattern, point: Sequence[float] | numpy.ndarray) -> numpy.ndarray:
    return p.hessian(numpy.asarray(point, dtype=float))


def smooth_pattern(p: Pattern, kernel: KernelLike) -> Pattern:
    """Convolve `p` with the Gaussian kernel in closed form.

    Centers and orientations are unchanged, each scale grows to sqrt(sigma^2 + rho^2) and the
    coefficient shrinks so that the atom's integral is preserved.
    """
    if not isinstance(kernel, FilterKernel):
        kernel = FilterKernel(kernel)
    if kernel.is_identity:
        return p
    rho2 = kernel.rho**2
    atoms = []
    for atom in p.atoms:
        sx, sy = atom.params.sigma
        coeff = atom.coeff * sx * sy / math.sqrt((rho2 + sx**2) * (rho2 + sy**2))
        sigma = (math.sqrt(sx**2 + rho2), math.sqrt(sy**2 + rho2))
        atoms.append(Atom(coeff, AtomParams(atom.params.psi, atom.params.tau, sigma)))
    return Pattern(tuple(atoms))


def overlap_matrix(a: AtomArrays, b: AtomArrays) -> numpy.ndarray:
    """Q_jk for every atom pair; the product integral of atoms j and k is Q_jk / 2."""
    sigma = 0.5 * (a.covariances[:, None] + b.covariances[None, :])
    s11, s12, s22 = sigma[..., 0, 0], sigma[..., 0, 1], sigma[..., 1, 1]
    determinant = s11 * s22 - s12**2
    half_trace = 0.5 * (s11 + s22)
    half_gap = numpy.sqrt((0.5 * (s11 - s22)) ** 2 + s12**2)
    smallest = half_trace - half_gap
    largest = half_trace + half_gap
    if numpy.any(smallest <= 0.0) or numpy.any(largest > MAX_CONDITION * smallest):
        raise DegenerateGeometryError("Combined atom covariance is numerically singular")
    diff = a.centers[:, None] - b.centers[None, :]
    dx, dy = diff[..., 0], diff[..., 1]
    # explicit 2x2 adjugate
    quadratic = (s22 * dx**2 - 2.0 * s12 * dx * dy + s11 * dy**2) / determinant
    scale = math.pi * a.areas[:, None] * b.areas[None, :] / numpy.sqrt(determinant)
    return numpy.asarray(scale * numpy.exp(-0.5 * quadratic))


def atom_product_integral(a: AtomParams, b: AtomParams) -> float:
    arrays_a = Pattern((Atom(1.0, a),)).arrays
    arrays_b = Pattern((Atom(1.0, b),)).arrays
    return 0.5 * float(overlap_matrix(arrays_a, arrays_b)[0, 0])


def gram_matrix(p: Pattern, q: Pattern) -> numpy.ndarray:
    return 0.5 * overlap_matrix(p.arrays, q.arrays)


def pattern_inner_product(p: Pattern, q: Pattern) -> float:
    if not p.atoms or not q.atoms:
        return 0.0
    return float(p.arrays.coeffs @ gram_matrix(p, q) @ q.arrays.coeffs)


def pattern_norm(p: Pattern) -> float:
    return math.sqrt(max(pattern_inner_product(p, p), 0.0))


class DerivativeNorms(NamedTuple):
    grad_norm: float
    hess_norm: float


def derivative_norms(p: Pattern, quad: QuadratureSpec) -> DerivativeNorms:
    """L2 norms of the gradient magnitude and of the Hessian (Frobenius) by quadrature."""
    derivatives = p.derivatives(quad.points)
    gradient_energy = numpy.sum(derivatives.gradient**2, axis=-1)
    hessian = derivatives.hessian
    hessian_energy = hessian[..., 0, 0] ** 2 + 2.0 * hessian[..., 0, 1] ** 2 + hessian[..., 1, 1] ** 2
    quad.check_boundary(gradient_energy, "gradient energy")
    quad.check_boundary(hessian_energy, "Hessian energy")
    return DerivativeNorms(
        grad_norm=math.sqrt(quad.integrate(gradient_energy)),
        hess_norm=math.sqrt(quad.integrate(hessian_energy)),
    )


class RateTerms(NamedTuple):
    q: float
    l_bar: float
    m_bar: float
    n_bar: float
    p_bar: float


class ExactRateTerms(NamedTuple):
    l: float  # noqa: E741
    m: float
    n: float
    p: float


def _fourth_moment(params: AtomParams) -> float:
    sx, sy = params.sigma
    return math.pi * params.area * (3.0 / 32.0 * sx**4 + 1.0 / 16.0 * sx**2 * sy**2 + 3.0 / 32.0 * sy**4)


def appendix_rate_terms(a: AtomParams, b: AtomParams) -> RateTerms:
    """Closed-form upper bounds of the pairwise gradient and Hessian energy terms."""
    _, vartheta_a = a.eigenvalues
    _, vartheta_b = b.eigenvalues
    sxa, sya = a.sigma
    sxb, syb = b.sigma
    q = 2.0 * atom_product_integral(a, b)
    l_bar = math.pi / 8.0 * vartheta_a * vartheta_b * math.sqrt(a.area * b.area * (sxa**2 + sya**2) * (sxb**2 + syb**2))
    moment_a, moment_b = _fourth_moment(a), _fourth_moment(b)
    m_bar = vartheta_a**2 * vartheta_b**2 * math.sqrt(moment_a * moment_b)
    n_bar = math.sqrt(math.pi * b.area / 2.0) * vartheta_a**2 * vartheta_b * math.sqrt(moment_a)
    p_bar = vartheta_a * vartheta_b * q
    return RateTerms(q=q, l_bar=l_bar, m_bar=m_bar, n_bar=n_bar, p_bar=p_bar)


def exact_rate_terms(a: AtomParams, b: AtomParams, quad: QuadratureSpec) -> ExactRateTerms:
    """Quadrature values of the terms bounded by `appendix_rate_terms`."""
    points = quad.points.reshape(-1, 2)
    precision_a, precision_b = a.precision, b.precision
    diff_a = points - numpy.asarray(a.tau)
    diff_b = points - numpy.asarray(b.tau)
    projected_a = diff_a @ precision_a
    projected_b = diff_b @ precision_b
    weight = numpy.exp(-numpy.einsum("ni,ni->n", diff_a, projected_a) - numpy.einsum("ni,ni->n", diff_b, projected_b))
    cross = numpy.einsum("ni,ni->n", projected_a, projected_b)
    return ExactRateTerms(
        l=quad.integrate(weight * cross),
        m=quad.integrate(weight * cross**2),
        n=quad.integrate(weight * numpy.einsum("ni,ij,nj->n", projected_a, precision_b, projected_a)),
        p=quad.integrate(weight * float(numpy.trace(precision_a @ precision_b))),
    )


def derivative_norm_bounds(p: Pattern) -> DerivativeNorms:
    """Upper bounds of `derivative_norms` assembled from the closed-form pair terms."""
    gradient_bound = 0.0
    hessian_bound = 0.0
    for first in p.atoms:
        for second in p.atoms:
            weight = abs(first.coeff * second.coeff)
            forward = appendix_rate_terms(first.params, second.params)
            backward_n_bar = appendix_rate_terms(second.params, first.params).n_bar
            gradient_bound += 4.0 * weight * forward.l_bar
            hessian_bound += weight * (
                16.0 * forward.m_bar + 8.0 * forward.n_bar + 8.0 * backward_n_bar + 4.0 * forward.p_bar
            )
    return DerivativeNorms(grad_norm=math.sqrt(gradient_bound), hess_norm=math.sqrt(hessian_bound))
