"""
Theseus Core Module
===================

Tensor engine, encoder model, module replacement, training stages, data
loading, checkpoints and experiment drivers.
"""

from .constants import VERSION
from .errors import TheseusError
from .model import EncoderConfig, EncoderModel, init_encoder
from .replacement import CompressionMap, HybridModel, ReplacementScheduler, build_hybrid
from .training import TrainConfig, compress, finetune_successor, train_predecessor
from .checkpoint_manager import CheckpointManager, load_checkpoint, save_checkpoint

__all__ = [
    'VERSION',
    'TheseusError',
    'EncoderConfig',
    'EncoderModel',
    'init_encoder',
    'CompressionMap',
    'HybridModel',
    'ReplacementScheduler',
    'build_hybrid',
    'TrainConfig',
    'compress',
    'finetune_successor',
    'train_predecessor',
    'CheckpointManager',
    'load_checkpoint',
    'save_checkpoint',
]
