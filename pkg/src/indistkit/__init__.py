"""Indistinguishability audits and selective incorporation of expert predictions."""

__version__ = "0.1.0"

from .data import (ColumnSchema, Dataset, Partition, PredictionMatrix, load_dataset, load_partition,
                   load_predictions, save_dataset, save_partition, save_predictions, split, split_indices)
from .errors import DegeneracyError, IndistError, NoConvergence, ValidationError
from .indist import AuditReport, audit_partition, binary_cov_decomposition, conditional_cov, variance_certificate
from .partition import ClusterSpec, LipschitzSpec, certify_partition, cluster_finite_class, epsilon_net_partition
from .boost import BoostConfig, BoostedPredictor, boost, level_set_audit, level_set_partition
from .expertise import (calibrate_feedback, empirical_rademacher, expert_test, fit_subset_regressors,
                        generalization_bound, nonlinear_subset_fit, predict_with_expertise, incorporation_gap)
from .robustness import (CompliancePolicy, adversarial_policy, audit_product_class, canonical_predictor,
                         evaluate_under_policy, gen_policy_class)
from .metrics import bootstrap_ci, confusion_rates, mcc, permutation_baseline
from .synth import SynthSpec, generate
from .pipeline import run_pipeline
