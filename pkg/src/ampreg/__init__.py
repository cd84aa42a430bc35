"""Adversarial model perturbation training and flat-minima analysis toolkit."""

from .analysis import (CalibrationReport, LandscapeScan1D, LandscapeScan2D, SweepRow, ece,
                       epsilon_sweep, filter_normalized_direction, hessian_top_eig,
                       landscape_1d, landscape_2d, model_calibration, robustness_eval,
                       sharpness, worst_rise)
from .datasets import Dataset, SplitDataset, gen_blobs, gen_spiral, load_csv, save_csv, split
from .linalg import Rng, l2_norm, rng_standard_normal, spd_eigendecomp, stream_id
from .nncore import (MlpSpec, PiecewiseToyLoss, forward, grad, init_params, input_grad,
                     predict, softmax, toy_loss_and_grad, xent_loss)
from .perturb import (AttackSpec, BallSpec, InnerAscentSpec, amp_inner_ascent,
                      ascend_within_ball, fgsm_attack, pgd_attack, project_to_ball,
                      rmp_sample)
from .theory import (DoubleWell, GaussianSurface, RegionParams, ball_max_numeric,
                     in_operational_region, make_double_well, perturbed_min_closed,
                     random_surface, swap_condition, verify_region_grid)
from .trainer import (EpochStats, RunRecord, TrainConfig, TrainingDiverged, evaluate,
                      gnp_grad, hessian_vector_product, init_theta, train, train_toy)

__all__ = [name for name in dir() if not name.startswith("_")]
