"""gazekit: probabilistic fixation-density evaluation and training.

Library surface for evaluating, calibrating and ensembling predicted
fixation densities, building KDE baselines, and training a pointwise
readout head by maximum likelihood. See the CLI (``gazekit --help``)
for the file-based workflows.
"""
from .grids import (
    Dataset,
    DensityGrid,
    FeatureVolume,
    Fixation,
    FixationSet,
    SaliencyMap,
    normalize,
)
from .metrics import Metric, MetricReport, information_gain, log_likelihood
from .baselines import KdeSpec, centerbias, empirical_map, gold_standard, relative_score
from .ensemble import MixtureSpec, build_dsre, disagreement_ranking, mix, weight_sweep
from .calibration import CalibrationHistogram, calibration_histogram, quantile_partition
from .readout import ReadoutModel, TrainConfig, forward, gradients, make_folds, nll, train
from .synth import SynthSpec, sample_fixations, synth_features

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DensityGrid",
    "FeatureVolume",
    "Fixation",
    "FixationSet",
    "SaliencyMap",
    "normalize",
    "Metric",
    "MetricReport",
    "information_gain",
    "log_likelihood",
    "KdeSpec",
    "centerbias",
    "empirical_map",
    "gold_standard",
    "relative_score",
    "MixtureSpec",
    "build_dsre",
    "disagreement_ranking",
    "mix",
    "weight_sweep",
    "CalibrationHistogram",
    "calibration_histogram",
    "quantile_partition",
    "ReadoutModel",
    "TrainConfig",
    "forward",
    "gradients",
    "make_folds",
    "nll",
    "train",
    "SynthSpec",
    "sample_fixations",
    "synth_features",
    "__version__",
]
