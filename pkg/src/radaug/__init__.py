"""Robustness-oriented adversarial data augmentation for pose regression.

The package trains and evaluates small camera pose regressors under
cross-weather domain shift, augmenting training data with gradient-based
perturbations that concentrate on geometrically informative image regions.
"""

__version__ = "0.1.0"

from .core import (Dataset, ImageSample, Perturbation, Pose, RelativePose,
                   SampleTuple, WeatherTag, WEATHER_ORDER,
                   rotation_error_degrees)
from .loss import LossParams, tuple_loss, pairwise_term
from .model import (InputGradient, NonFiniteLossError, PoseRegressor,
                    load_checkpoint, save_checkpoint)
from .perturb import (PerturberConfig, ThresholdValue, apply_threshold,
                      compute_threshold, gaussian_perturb, make_adversarial,
                      perturb_batch, raw_perturbation)
from .synth import (LandmarkMask, SceneSpec, TrajectorySpec, WeatherSpec,
                    DEFAULT_WEATHER, generate_dataset, generate_scene,
                    render_frame, trajectory_poses)
from .evaluate import EvalResult, WeatherMetrics, evaluate, export_trajectory
from .analysis import (ConcentrationReport, SubsquareHistogram, compare_methods,
                       concentration, subsquare_histogram)
from .train import (TrainConfig, TrainReport, model_for_dataset, run_ablation,
                    run_mixing_study, run_training)
from .dataio import dataset_hash, load_dataset, save_dataset

__all__ = [
    "Dataset", "ImageSample", "Perturbation", "Pose", "RelativePose",
    "SampleTuple", "WeatherTag", "WEATHER_ORDER", "rotation_error_degrees",
    "LossParams", "tuple_loss", "pairwise_term",
    "InputGradient", "NonFiniteLossError", "PoseRegressor",
    "load_checkpoint", "save_checkpoint",
    "PerturberConfig", "ThresholdValue", "apply_threshold",
    "compute_threshold", "gaussian_perturb", "make_adversarial",
    "perturb_batch", "raw_perturbation",
    "LandmarkMask", "SceneSpec", "TrajectorySpec", "WeatherSpec",
    "DEFAULT_WEATHER", "generate_dataset", "generate_scene", "render_frame",
    "trajectory_poses",
    "EvalResult", "WeatherMetrics", "evaluate", "export_trajectory",
    "ConcentrationReport", "SubsquareHistogram", "compare_methods",
    "concentration", "subsquare_histogram",
    "TrainConfig", "TrainReport", "model_for_dataset", "run_ablation",
    "run_mixing_study", "run_training",
    "dataset_hash", "load_dataset", "save_dataset",
    "__version__",
]
