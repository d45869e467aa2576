"""Intrinsic Gaussian process regression with heat kernels estimated from Brownian motion.

Typical use::

    from ingp import builtin_domain, SimConfig, WindowPolicy, EnsembleStore
    from ingp import build_covariance_grid, fit, predict

    dom = builtin_domain("ushape")
    store = EnsembleStore("cache")
    grid = build_covariance_grid(store.iter(dom, X, SimConfig(20000, 400, 0.01, seed=1)),
                                 X, WindowPolicy("fixed", 0.2), dom, test_points=Xs)
    res = fit(grid, y)
    pr = predict(grid, res.hyperparams, y, grid.cross_at(res.hyperparams.t))
"""

from .bm_sim import PathEnsemble, SimConfig, simulate_ensemble
from .cache import EnsembleStore
from .errors import (ConfigError, DataError, DomainError, IngpError, MissingEnsemblesError,
                     NumericalError, ResourceError)
from .geometry import (ChartDomain, EuclideanDomain, SwissRoll, builtin_domain, interior_grid,
                       load_domain_file, resolve_domain)
from .gp import (CovarianceGrid, Dataset, Hyperparams, Predictive, build_covariance_grid, fit,
                 heat_to_rbf, log_marginal_likelihood, predict, psd_repair)
from .heat_kernel import WindowPolicy, closed_form_kernel, estimate_density, kernel_table
from .sparse_gp import (SparseModel, build_sparse_grid, place_inducing_grid, sparse_fit,
                        sparse_log_marginal, sparse_predict)

__version__ = "0.1.0"
