"""vMF modelling of normalized features and the closed-form expected
contrastive loss for long-tailed classification."""

from .estimation import EpochEstimator, OnlineMoments, kappa_from_resultant
from .loss import ProcoConfig, combined_loss, logit_adjustment_loss, proco_asymptotic, proco_loss, proco_posterior
from .special_fn import log_bessel_i, log_bessel_ratio, log_vmf_normalizer, mean_resultant
from .vmf import ClassMixture, VmfParams, log_mgf_ratio, sample, sample_mixture

__all__ = [
    "ClassMixture",
    "EpochEstimator",
    "OnlineMoments",
    "ProcoConfig",
    "VmfParams",
    "combined_loss",
    "kappa_from_resultant",
    "log_bessel_i",
    "log_bessel_ratio",
    "log_mgf_ratio",
    "log_vmf_normalizer",
    "logit_adjustment_loss",
    "mean_resultant",
    "proco_asymptotic",
    "proco_loss",
    "proco_posterior",
    "sample",
    "sample_mixture",
]
