from .config import ConfigError, RunConfig, parse_config
from .experiments import Report, run_table_experiment
from .metrics import Metrics, auc, fscore, precision
from .train import evaluate, prepare, train
