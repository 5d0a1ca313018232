"""Worst-case mixture-of-domains learning.

Train a single model against the worst reweighting of several data domains
(clients, protected groups, corpora) instead of their size-weighted average.
The package provides the multi-domain data model, a convex softmax learner,
the minimax objective with chi-squared regularization, projected stochastic
gradient descent-ascent solvers, generalization-bound calculators, fairness
reports, and brute-force oracles used to verify all of the above.
"""

import os as _os

# Pin BLAS/OpenMP pools before numpy's first import so trajectories are
# reproducible under a declared thread count. Only effective when this
# package is imported before numpy (always true for the CLI entry point).
if "AFLEARN_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["AFLEARN_THREADS"])

from aflearn.data import (
    DomainDataset,
    FederatedDataset,
    GaussianDomainSpec,
    LabeledExample,
    load_csv,
    split_train_test,
    synth_gaussian_domains,
    synth_pointmass_pair,
)
from aflearn.model import ModelParams, domain_grad, domain_loss, example_loss, predict_proba
from aflearn.objective import (
    FiniteHull,
    FullSimplex,
    MixtureWeights,
    RegularizedObjectiveConfig,
    agnostic_loss,
    chi_squared,
    mixture_loss,
    regularized_value,
    skewness,
)
from aflearn.optimizer import (
    TrainConfig,
    TrainResult,
    optimistic_afl,
    single_domain_baseline,
    stochastic_afl,
    uniform_baseline,
)
from aflearn.projection import project_ball, project_lambda, project_simplex

__all__ = [
    "DomainDataset",
    "FederatedDataset",
    "FiniteHull",
    "FullSimplex",
    "GaussianDomainSpec",
    "LabeledExample",
    "MixtureWeights",
    "ModelParams",
    "RegularizedObjectiveConfig",
    "TrainConfig",
    "TrainResult",
    "agnostic_loss",
    "chi_squared",
    "domain_grad",
    "domain_loss",
    "example_loss",
    "load_csv",
    "mixture_loss",
    "optimistic_afl",
    "predict_proba",
    "project_ball",
    "project_lambda",
    "project_simplex",
    "regularized_value",
    "single_domain_baseline",
    "skewness",
    "split_train_test",
    "stochastic_afl",
    "synth_gaussian_domains",
    "synth_pointmass_pair",
    "uniform_baseline",
]

__version__ = "0.1.0"
