"""Neural-network surrogates for right-censored targets, imputation baselines,
synthetic benchmarks and a racing optimizer with adaptive capping."""

from tobitbo.ensemble import Ensemble, train_ensemble
from tobitbo.nn import Mlp, TrainConfig, init_mlp, train
from tobitbo.observations import Observation, TrainingData

__all__ = ["Ensemble", "Mlp", "Observation", "TrainConfig", "TrainingData", "init_mlp", "train",
           "train_ensemble"]
__version__ = "0.1.0"
