"""Physics-constrained neural state-space modeling of building thermal dynamics."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, finite_difference_check, no_grad
from .blocks import Block, BlockConfig, build_block, observe
from .constraints import (LossBreakdown, LossWeights, PenaltyBounds,
                          multi_term_loss, slack_lower, slack_upper)
from .data import (NormalizationStats, TimeSeriesDataset, WindowBatch,
                   denormalize, denormalize_mse, make_windows, normalize,
                   read_csv, split_even, write_csv)
from .eigen import EigenReport, Spectrum, analyze_model, eigenvalues
from .emulator import (BuildingParams, ExcitationConfig, build_rc_network,
                       generate_dataset, heat_flow, step_emulator)
from .linmap import ComposedWeight, LinearMap, PerronFrobeniusMap
from .ssm import (RolloutResult, StructuredSSM, UnstructuredSSM,
                  build_structured, build_unstructured, open_loop_simulate)
from .trainer import (Checkpoint, EvalResult, SweepGrid, SweepResult,
                      TrainConfig, adam_step, evaluate, load_checkpoint,
                      prepare_splits, save_checkpoint, sweep, train_model)
