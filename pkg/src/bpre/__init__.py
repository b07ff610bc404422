"""Subcritical branching processes in random environment: models, quenched
tools, walk diagnostics, rare-event estimators, and a reproducible harness."""

__version__ = "0.1.0"

from .env_model import (DEFAULT_PARAMS, ModelParams, MomentTable, as_table,
                        params_from_dict, params_hash, validate)
from .errors import BpreError, DomainError, ParseError, ValidationError
from .estimators import (c0_direct, c0_series, jump_fluctuation, kappa_law,
                         pi_j, survival_naive, survival_quenched_mean,
                         survival_tilted, yaglom_omega)
from .harness import RunConfig, config_hash, parse_config, run
from .mixture import Estimate, ISConfig
from .quenched import EnvPath, load_path_csv, sample_env_path, save_path_csv
from .walk import lemma1_ratio, two_jump_prob

__all__ = [
    "__version__",
    "DEFAULT_PARAMS", "ModelParams", "MomentTable", "as_table",
    "params_from_dict", "params_hash", "validate",
    "BpreError", "DomainError", "ParseError", "ValidationError",
    "c0_direct", "c0_series", "jump_fluctuation", "kappa_law", "pi_j",
    "survival_naive", "survival_quenched_mean", "survival_tilted",
    "yaglom_omega",
    "RunConfig", "config_hash", "parse_config", "run",
    "Estimate", "ISConfig",
    "EnvPath", "load_path_csv", "sample_env_path", "save_path_csv",
    "lemma1_ratio", "two_jump_prob",
]
