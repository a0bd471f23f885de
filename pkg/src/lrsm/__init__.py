"""Lévy random scale mixture models for spatial extremes."""

from .correlation import MaternParams, TaperSpec, eigenbasis
from .errors import DataError, DegenerateCovariance, InvalidArgument, LRSMError, NumericalError
from .fields import ReplicateMatrix, sample_levy, simulate_lrsm
from .inference import McmcConfig, Priors, run_mcmc, summarize
from .likelihood import FullGP, LowRank, Taper, Vecchia, loglik_full
from .sites import SiteSet, sample_uniform_sites

__version__ = "0.1.0"
