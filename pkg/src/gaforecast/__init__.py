"""Multi-modal trajectory forecasting for aircraft near non-towered airports."""

from .data import SETTINGS, ExperimentSetting, Sample, get_setting, read_canonical_dataset, write_canonical_dataset
from .errors import (ConfigurationError, DimensionError, EmptyInputError, EmptySceneError, FormatError,
                     GraphError, InsufficientHistoryError, NumericError)
from .evaluation import ConstantVelocity, EvalReport, NearestNeighborBank, evaluate, min_ade, min_fde
from .geometry import PoseFrame, Trajectory, normalize_history, denormalize_trajectory, wrap_angle
from .kinematics import FlightParams, rollout
from .model import ModeQueryForecaster, ModelConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, train, wta_select

__version__ = "0.1.0"
