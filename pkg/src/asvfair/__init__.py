"""Gated fair speaker-embedding toolkit.

A desk-scale, fully testable implementation of a complementary-gated
two-branch training objective (branch losses, gradient reversal, group
risk-variance equalization) together with a standalone trial-level
biometric fairness evaluation engine (EER, minDCF, GARBE at a shared
operating threshold).
"""

from .autodiff import (AutodiffError, DegenerateEmbeddingError, Tensor,
                       cross_entropy_logits, depthwise_conv1d, grl,
                       l2_normalize, sigmoid)
from .gate import GateParams, cap_loss, compute_mask, init_gate, route, sat_loss
from .gradcheck import GradReport, gradcheck_all
from .losses import (LossBreakdown, LossWeights, RiskStats, adv_loss,
                     decor_loss, rex_penalty, sex_loss, spk_loss, total_loss)
from .metrics import (ErrorRates, EvaluationProtocolError, FairnessReport,
                      ReportConfig, SubgroupRates, TrialRecord, eer,
                      error_rates, fairness_report, garbe, garbe_from_rates,
                      gini, min_dcf, subgroup_rates, sweep_rows,
                      threshold_at_fmr)
from .model import (ModelConfig, ModelParams, aam_logits,
                    attentive_stats_pool, cosine_score, embed, encode,
                    forward_pipeline, init_model)
from .synthdata import (Corpus, CorpusSpec, Utterance, export_corpus,
                        generate_corpus, shortcut_severity)
from .trainer import (DivergenceError, TrainConfig, evaluate, load_config,
                      load_params, make_batches, train)

__version__ = "0.1.0"

__all__ = [
    "AutodiffError", "DegenerateEmbeddingError", "Tensor",
    "cross_entropy_logits", "depthwise_conv1d", "grl", "l2_normalize",
    "sigmoid",
    "GateParams", "cap_loss", "compute_mask", "init_gate", "route", "sat_loss",
    "GradReport", "gradcheck_all",
    "LossBreakdown", "LossWeights", "RiskStats", "adv_loss", "decor_loss",
    "rex_penalty", "sex_loss", "spk_loss", "total_loss",
    "ErrorRates", "EvaluationProtocolError", "FairnessReport", "ReportConfig",
    "SubgroupRates", "TrialRecord", "eer", "error_rates", "fairness_report",
    "garbe", "garbe_from_rates", "gini", "min_dcf", "subgroup_rates",
    "sweep_rows", "threshold_at_fmr",
    "ModelConfig", "ModelParams", "aam_logits", "attentive_stats_pool",
    "cosine_score", "embed", "encode", "forward_pipeline", "init_model",
    "Corpus", "CorpusSpec", "Utterance", "export_corpus", "generate_corpus",
    "shortcut_severity",
    "DivergenceError", "TrainConfig", "evaluate", "load_config", "load_params",
    "make_batches", "train",
]
