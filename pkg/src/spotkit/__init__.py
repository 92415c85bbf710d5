"""Frame-accurate temporal event spotting."""
from .core import (BACKGROUND, DenseLabelSeq, EventClassTable, EventLabel, ScoreSeq, SoftLabelSeq, SpotError,
                   SpotPrediction, VideoMeta, densify, dilate)
from .estimator import E2ESpotter
from .evaluation import EvalReport, average_map_seconds, average_precision, map_at_deltas
from .inference import nms, predict_video, scores_to_predictions
from .model import BackboneConfig, HeadConfig, SpotModel, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

__version__ = "0.1.0"
