from .backbone import Backbone, BackboneConfig, DEFAULT_STAGES, SHIFT_MODES
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from .heads import HEAD_KINDS, HeadConfig
from .network import SpotModel, predict_scores, to_input
from .shift import GateShift, shift_channel_count, temporal_shift

__all__ = [
    "Backbone", "BackboneConfig", "DEFAULT_STAGES", "SHIFT_MODES", "Checkpoint", "CheckpointError",
    "load_checkpoint", "read_checkpoint", "save_checkpoint", "HEAD_KINDS", "HeadConfig", "SpotModel",
    "predict_scores", "to_input", "GateShift", "shift_channel_count", "temporal_shift",
]
