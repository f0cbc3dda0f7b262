"""Tools for registering, comparing, and synthesising vector sketches."""

from .bezier import BezierStroke, fit_bezier, sample_polyline
from .core import Point, Sketch, Stroke, resample_stroke
from .disturber import (
    DisturberModel,
    DisturberSet,
    StatisticalDisturber,
    TrainConfig,
    build_training_pairs,
    load_disturber_set,
    save_disturber_set,
    train_disturber,
)
from .layout import ConnectionGraph, connection_graph, layout_init, layout_optimize
from .pixreg import RegistrationConfig, RegistrationResult, register_pixel_level, score
from .raster import DistanceField, RasterImage, distance_transform, rasterize
from .simfit import (
    MultiLevelRegistration,
    SimilarityTransform,
    fit_levels,
    fit_similarity,
)
from .sketch_io import export_png, export_svg, load_sketch, save_sketch
from .synthesis import synthesize

__version__ = "0.1.0"

__all__ = [
    "Point",
    "Stroke",
    "Sketch",
    "RasterImage",
    "DistanceField",
    "BezierStroke",
    "ConnectionGraph",
    "SimilarityTransform",
    "MultiLevelRegistration",
    "RegistrationConfig",
    "RegistrationResult",
    "DisturberModel",
    "DisturberSet",
    "StatisticalDisturber",
    "TrainConfig",
    "resample_stroke",
    "rasterize",
    "distance_transform",
    "score",
    "register_pixel_level",
    "fit_similarity",
    "fit_levels",
    "fit_bezier",
    "sample_polyline",
    "connection_graph",
    "layout_init",
    "layout_optimize",
    "build_training_pairs",
    "train_disturber",
    "save_disturber_set",
    "load_disturber_set",
    "synthesize",
    "load_sketch",
    "save_sketch",
    "export_svg",
    "export_png",
    "__version__",
]
