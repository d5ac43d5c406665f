"""Continual learning of an autoencoder and latent predictor on drifting streams.

Modules: ``nn`` (dense networks, Adam, training), ``continual`` (Fisher
diagonal, Online-EWC), ``engine`` (novelty buffers, thresholds, updates,
experiment phases), ``datagen`` (artificial periodic data), ``dataio``
(datasets, CSV, preprocessing), ``metrics`` and ``experiment`` (configs,
runs, grids, reports).
"""

from .continual import ConsolidationState, FisherDiagonal, consolidate, ewc_penalty
from .dataio import Dataset, load_csv, write_csv
from .datagen import GeneratorConfig, generate_series
from .engine import ClearModel, EngineConfig, Strategy, run_phases
from .metrics import forgetting_ratio
from .nn import MLP, LayerSpec, TrainConfig, forward, train

__version__ = "0.1.0"
