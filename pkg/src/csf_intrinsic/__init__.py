"""Intrinsic image decomposition by consistency-aware selective fusion of shading orders."""

from .colorspace import (LinearRgbImage, ShadingResult, UvbBasis, UvbImage, build_uvb_basis,
                         estimate_brightening_direction, recover_shading, to_uvb)
from .fusion import CsfConfig, FusionState, run_csf
from .pipeline import PipelineConfig, decompose, evaluate
from .synth import SceneSpec, SyntheticScene, generate_scene

__all__ = [
    "LinearRgbImage", "ShadingResult", "UvbBasis", "UvbImage", "build_uvb_basis",
    "estimate_brightening_direction", "recover_shading", "to_uvb",
    "CsfConfig", "FusionState", "run_csf",
    "PipelineConfig", "decompose", "evaluate",
    "SceneSpec", "SyntheticScene", "generate_scene",
]
