"""Training harness: replay buffer, run configuration, loop, checkpoints, metrics, CLI."""

from .buffer import BufferError, Episode, ReplayBuffer
from .checkpoint import (Checkpoint, CheckpointChecksumError, CheckpointError, CheckpointFormatError,
                         CheckpointShapeError, CheckpointTruncatedError, CheckpointVersionError,
                         load_checkpoint, save_checkpoint)
from .config import ConfigError, RunConfig, load_config
from .loop import Trainer, TrainingDiverged, evaluate, random_policy_returns, train
from .metrics import FIELDS, MetricsRecord, read_metrics
