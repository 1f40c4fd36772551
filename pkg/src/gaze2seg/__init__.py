"""Gaze-driven seeded segmentation of CT slices.

Recorded reading sessions are stabilised into dwell-weighted attention
regions; context-aware saliency and image gradients turn each region into
foreground/background seeds for a random-walker segmentation.
"""
from .errors import (ConfigurationError, ConvergenceError, FormatError, Gaze2SegError,
                     NoBoundaryFound, ParseError, ValidationError)
from .gaze import GazeParams, build_attention_map, rank_regions, stabilize_trace
from .ingest import (GazeTrace, LabelMask, SceneToStimulusTransform, Volume, assign_slices,
                     parse_gaze_log, parse_viewer_log, read_volume)
from .metrics import dice, hausdorff_mm
from .pipeline import PipelineConfig, run_pipeline
from .rw import RwParams, segment_region, solve_dirichlet
from .saliency import SaliencyParams, compute_saliency
from .seeding import SeedParams, SeedSet, make_seeds

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "ConvergenceError", "FormatError", "Gaze2SegError", "NoBoundaryFound",
    "ParseError", "ValidationError", "GazeParams", "build_attention_map", "rank_regions",
    "stabilize_trace", "GazeTrace", "LabelMask", "SceneToStimulusTransform", "Volume",
    "assign_slices", "parse_gaze_log", "parse_viewer_log", "read_volume", "dice", "hausdorff_mm",
    "PipelineConfig", "run_pipeline", "RwParams", "segment_region", "solve_dirichlet",
    "SaliencyParams", "compute_saliency", "SeedParams", "SeedSet", "make_seeds",
]
