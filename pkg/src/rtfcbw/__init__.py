"""RTF estimation for two successively activating speakers in noise.

Estimators (CW, CWu, BOP, CBW), a closed-form LCMV beamformer, a synthetic
scene generator and an SINR-improvement evaluation harness.
"""

from .beamformer import BeamformerWeights, apply_beamformer, db_to_linear, lcmv_weights
from .errors import NotConverged, RtfError
from .estimators import (
    BopOptions,
    BopSolution,
    CbwSolution,
    bop_estimate,
    bop_gradient,
    bop_objective,
    cbw_estimate,
    cw_estimate,
    cwu_estimate,
    normalize_rtf,
)
from .evaluation import ExperimentConfig, ResultRow, run_experiment, sinr_improvement
from .scenario import ArrayGeometry, GroundTruth, ScenarioConfig, oracle_covariances, render_scenario
from .stft import SegmentSchedule, StftConfig, analyze, sample_covariance, synthesize

__version__ = "0.1.0"
