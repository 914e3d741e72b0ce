"""High-speed pupil detection for off-axis IR eye images.

The package centres on a recursive per-frame estimator of pupil
characteristics whose predictions shrink the search area, steer edge
segmentation and gate the final ellipse fit.  See the pipeline module for
the frame loop and the harness module for synthetic benchmarks.
"""

from .estimator import EstimatorParams, Measurement, PupilState, initial_state
from .pipeline import Config, Detector, FrameResult, load_config, process_frame

__all__ = [
    "Config",
    "Detector",
    "EstimatorParams",
    "FrameResult",
    "Measurement",
    "PupilState",
    "initial_state",
    "load_config",
    "process_frame",
]

__version__ = "0.1.0"
