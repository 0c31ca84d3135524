"""Diffusion-trajectory representations.

Train an encoder-conditioned denoiser on a variance-exploding noising
process, read the encoder out along a time grid to get discretized
trajectory codes, then study and exploit what information lives where
along the noise scale.
"""

__version__ = "0.1.0"

from .analysis import (MineConfig, band_contrast, jsd_bits, jsd_matrix,
                       mine_mi, mine_mi_matrix, nmi_from_mi, separation_stats)
from .checkpoint import load_model, save_model
from .datasets import Dataset, load_dataset, make_dataset, save_dataset
from .heads import HeadConfig, HeadResult, train_head
from .pipeline import PipelineConfig, compact_pipeline_config, run_pipeline
from .sde import VESDE, grid_times
from .tensor import NonFiniteError, ShapeError, Tensor, no_grad
from .trajectory import (Trajectory, TrajectoryCodes, extract_codes,
                         load_codes, save_codes, separation_gap)
from .training import (ReprConfig, ReprResult, TrainingDiverged,
                       smoothed_final, train_representation)
