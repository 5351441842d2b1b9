"""Emulation and Bayesian calibration of expensive simulators from gridded
spatial fields: scaled principal-component basis, per-component Gaussian-
process emulation, kernel-convolution discrepancy, and reduced-dimensional
Metropolis-Hastings calibration."""

from .calibrate import (Calibrator, CalibrationPosterior, McmcConfig, PriorSpec,
                        ReducedObservation, log_prior, posterior_density,
                        reduce_observation, reduced_loglik, run_mcmc)
from .discrepancy import (DiscrepancyBasis, KnotSet, build_kernel, geodesic_km,
                          make_knot_grid, truncate_basis)
from .emulator import EnsembleDesign, PcEmulator
from .errors import (ConfigError, EmptyDomainError, EmucalError, FitError,
                     NumericalError)
from .experiments import (LevelSettings, ProjectionTable, PseudoObsConfig,
                          aggregate_level, aggregation_study, cross_validate,
                          make_pseudo_obs, prior_sensitivity_report,
                          project_response, subsample_study)
from .gp import ComponentGp, GpHyperparams, fit_component, sq_exp_cov
from .grid import (FieldEnsemble, FieldVector, GridField, GridSpec, devectorize,
                   global_mean, load_ensemble, random_subsample, read_field_csv,
                   vectorize, vertical_mean, write_field_csv, zonal_mean)
from .pca import PrincipalComponentBasis, center_columns

__version__ = "0.1.0"
