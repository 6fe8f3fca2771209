from .attention import BEA, CPA, RPM, AttentionBundle, importance
from .backbone import Backbone
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ModelConfig
from .loss import LossBreakdown, hvtrack_loss
from .memory import MemoryState
from .network import ForwardOutput, HVTrack, hvtrack_forward
from .rpn import RPN, Prediction

__all__ = [
    "AttentionBundle", "BEA", "Backbone", "CPA", "ConfigError", "ForwardOutput", "HVTrack", "LossBreakdown",
    "MemoryState", "ModelConfig", "Prediction", "RPM", "RPN", "hvtrack_forward", "hvtrack_loss", "importance",
    "load_checkpoint", "save_checkpoint",
]
