"""Sequential anomaly detection over VNF service-function-chain telemetry."""

from .checkpoint import Checkpoint
from .data import Dataset, load_csv, normalize, prepare, split, write_csv
from .errors import (CapacityError, ConfigError, ContractError, DimensionError, IntegrityError, ParseError,
                     SfcadError)
from .evaluation import eval_stream, mlp_baseline, run_experiment
from .metrics import EvalReport, f1_metrics
from .model import ModelConfig, MonitoringWindow, forward_window, init_params, param_count
from .synth import SLA, SLA_PRESETS, ScenarioConfig, generate, preset
from .training import TrainConfig, fit

__version__ = "0.1.0"
