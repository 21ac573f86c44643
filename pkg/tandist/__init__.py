from importlib.metadata import version

from tandist.atoms import Atom, AtomParams, FilterKernel, Pattern, pattern_inner_product, pattern_norm, smooth_pattern
from tandist.bounds import BoundInputs, EffectiveNoise, filtered_bound, theorem1_bound
from tandist.classify import ClassBank, classify_query, misclassification_likeliness, true_label
from tandist.config import ExperimentConfig
from tandist.manifold import GeometryConstants, GridSpec, ManifoldGeometry
from tandist.raster import QuadratureSpec, RasterImage, load_pgm, save_pgm
from tandist.register import (
    RegistrationResult,
    iterate_single_scale,
    make_schedule,
    register_hierarchical,
    tangent_step,
)
from tandist.transforms import TransformKind, TransformModel, calibrate_gains

__version__ = version("tandist")
__all__ = [
    "Atom",
    "AtomParams",
    "BoundInputs",
    "ClassBank",
    "EffectiveNoise",
    "ExperimentConfig",
    "FilterKernel",
    "GeometryConstants",
    "GridSpec",
    "ManifoldGeometry",
    "Pattern",
    "QuadratureSpec",
    "RasterImage",
    "RegistrationResult",
    "TransformKind",
    "TransformModel",
    "calibrate_gains",
    "classify_query",
    "filtered_bound",
    "iterate_single_scale",
    "load_pgm",
    "make_schedule",
    "misclassification_likeliness",
    "pattern_inner_product",
    "pattern_norm",
    "register_hierarchical",
    "save_pgm",
    "smooth_pattern",
    "tangent_step",
    "theorem1_bound",
    "true_label",
]
