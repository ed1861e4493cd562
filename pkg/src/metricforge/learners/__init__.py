"""Metric learners: five ways to fit a Mahalanobis metric to labels."""

from .boostmetric import BoostState, boost_train, fit_boostmetric
from .grid import grid_search, loo_nn_error
from .itml import default_bounds, fit_itml
from .lmnn import fit_lmnn, lmnn_objective
from .mlkr import fit_mlkr, mlkr_gradient, mlkr_loss, one_hot
from .nca import fit_nca, nca_gradient, nca_objective, nca_state

# canonical learner order used by report tables
LEARNERS = {
    "boost": fit_boostmetric,
    "itml": fit_itml,
    "lmnn": fit_lmnn,
    "mlkr": fit_mlkr,
    "nca": fit_nca,
}

__all__ = [
    "BoostState",
    "LEARNERS",
    "boost_train",
    "default_bounds",
    "fit_boostmetric",
    "fit_itml",
    "fit_lmnn",
    "fit_mlkr",
    "fit_nca",
    "grid_search",
    "lmnn_objective",
    "loo_nn_error",
    "mlkr_gradient",
    "mlkr_loss",
    "nca_gradient",
    "nca_objective",
    "nca_state",
    "one_hot",
]
