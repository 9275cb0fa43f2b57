"""Geometry-weighted L1 regularization and magnitude pruning for Elman RNNs."""

from .geometry import (Embedding, ManifoldSpec, distance_gradient,
                       geodesic_distance, load_embedding, pairwise_distances,
                       retract, sample_uniform, save_embedding)
from .inhibitors import InhibitorSpec, derivative, evaluate, is_monotone
from .regularizer import (CoefficientMatrix, build_coefficients, penalty,
                          penalty_embedding_grad, penalty_weight_grad,
                          shuffle, uniform_coefficients)
from .rnn import (RnnParams, backward, cross_entropy, forward,
                  init_rnn_params, mse, softmax)
from .optim import OptimizerState, init_optimizer, optimizer_step
from .pruning import lottery_reinit, magnitude_prune, scheduled_sparsity
from .tasks import (NavArena, decode_position, gen_adding_batch,
                    gen_trajectories, make_arena, nav_loss, place_scores)
from .experiment import (ExperimentConfig, MetricsRecord, TrainingDiverged,
                         evaluate_run, export_heatmap, load_config,
                         run_lottery, run_sweep, run_training)

__version__ = "0.1.0"
