"""Loss functions: logit adjustment, empirical supervised contrastive losses,
the closed-form expected contrastive (ProCo) loss and the two-branch objective.

All batched functions take features ``z`` of shape (n, p) and integer labels
of shape (n,). Single samples (shape (p,) with an int label) are accepted and
return scalars. Mixture parameters are constants: no gradient flows into
``mu``, ``kappa`` or the priors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import logsumexp, softmax

from .special_fn import log_vmf_normalizer, mean_resultant
from .vmf import ClassMixture

Variant = Literal["in", "out"]


@dataclass(frozen=True)
class ProcoConfig:
    tau: float = 0.1
    alpha: float = 1.0
    p: int = 128

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.p < 2 or self.p % 2:
            raise ValueError("p must be an even integer >= 2")


@dataclass
class LossValueAndGrad:
    value: float | np.ndarray
    grad_z: np.ndarray


@dataclass
class CombinedLoss:
    value: float | np.ndarray
    grad_logits: np.ndarray
    grad_z: np.ndarray


def _batch(z, y) -> tuple[np.ndarray, np.ndarray, bool]:
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if y.shape[0] != z.shape[0]:
        raise ValueError("one label per feature row required")
    return z, y, single


def _check_labels(y: np.ndarray, k: int) -> None:
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ValueError(f"label out of range for {k} classes")


def _unbatch(value: np.ndarray, grad: np.ndarray, single: bool):
    if single:
        return float(value[0]), grad[0]
    return value, grad


# ---------------------------------------------------------------------------
# logit adjustment


def logit_adjustment_value_and_grad(logits, priors, y) -> tuple[float | np.ndarray, np.ndarray]:
    """``-log(pi_y e^{phi_y} / sum_j pi_j e^{phi_j})`` and its gradient in ``phi``."""
    logits, y, single = _batch(logits, y)
    priors = np.asarray(priors, dtype=float)
    if np.any(priors <= 0):
        raise ValueError("priors must be positive")
    _check_labels(y, logits.shape[1])
    adjusted = logits + np.log(priors)
    rows = np.arange(y.shape[0])
    value = logsumexp(adjusted, axis=1) - adjusted[rows, y]
    grad = softmax(adjusted, axis=1)
    grad[rows, y] -= 1.0
    return _unbatch(value, grad, single)


def logit_adjustment_loss(logits, priors, y):
    return logit_adjustment_value_and_grad(logits, priors, y)[0]


# ---------------------------------------------------------------------------
# empirical supervised contrastive losses


def supcon_empirical(anchor, batch_z, batch_labels, anchor_label: int, tau: float, variant: Variant = "out") -> float:
    """SupCon loss of one anchor against ``batch_z`` (the batch minus the anchor).

    ``variant="out"`` averages log-probabilities over positives;
    ``variant="in"`` takes the log of the averaged probability.
    """
    anchor = np.asarray(anchor, dtype=float)
    batch_z = np.asarray(batch_z, dtype=float)
    labels = np.asarray(batch_labels)
    sims = batch_z @ anchor / tau
    pos = sims[labels == anchor_label]
    if pos.size == 0:
        raise ValueError("batch has no positive for the anchor's label")
    denom = logsumexp(sims)
    if variant == "out":
        return float(denom - pos.mean())
    if variant == "in":
        return float(denom - (logsumexp(pos) - np.log(pos.size)))
    raise ValueError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------------------
# closed-form expected contrastive loss


def proco_logits(z, mix: ClassMixture, tau: float, with_grad: bool = True):
    """Per-class logits ``log pi_j + log C_p(kappa~_j) - log C_p(kappa_j)``.

    Here ``kappa~_j = ||kappa_j mu_j + z / tau||``. Returns ``(ell, dell)``
    with ``ell`` of shape (n, K) and ``dell`` of shape (n, K, p) holding
    d ell_j / d z (``None`` when ``with_grad`` is false).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != mix.dim:
        raise ValueError(f"dimension mismatch: {z.shape[1]} vs {mix.dim}")
    p = mix.dim
    s = (mix.kappas[:, None] * mix.mus)[None, :, :] + z[:, None, :] / tau
    kt = np.linalg.norm(s, axis=2)
    ell = np.log(mix.priors) + log_vmf_normalizer(p, kt) - log_vmf_normalizer(p, mix.kappas)
    if not with_grad:
        return ell, None
    # d log C_p(k) / dk = A_p(k); zero when kappa~ = 0
    coef = np.divide(mean_resultant(p, kt), tau * kt, out=np.zeros_like(kt), where=kt > 0)
    return ell, coef[:, :, None] * s


def proco_loss(z, y, mix: ClassMixture, tau: float, variant: Variant = "in", with_grad: bool = True) -> LossValueAndGrad:
    """Expected SupCon loss under the class mixture, with gradient in ``z``.

    ``variant="in"`` is the margin-modified form used for training:
    ``-ell_y + logsumexp(ell)``. ``variant="out"`` replaces the first term
    with ``-A_p(kappa_y) mu_y . z / tau``. With ``with_grad=False`` the
    returned ``grad_z`` is ``None``.
    """
    z, y, single = _batch(z, y)
    _check_labels(y, mix.n_classes)
    if variant not in ("in", "out"):
        raise ValueError(f"unknown variant {variant!r}")
    ell, dell = proco_logits(z, mix, tau, with_grad=with_grad)
    rows = np.arange(y.shape[0])
    lse = logsumexp(ell, axis=1)
    if variant == "in":
        value = lse - ell[rows, y]
    else:
        pull = mean_resultant(mix.dim, mix.kappas)[:, None] * mix.mus / tau
        value = lse - np.einsum("np,np->n", z, pull[y])
    if not with_grad:
        return LossValueAndGrad(float(value[0]) if single else value, None)
    grad = np.einsum("nk,nkp->np", softmax(ell, axis=1), dell)
    grad = grad - (dell[rows, y] if variant == "in" else pull[y])
    return LossValueAndGrad(*_unbatch(value, grad, single))


def proco_asymptotic(z, y, mix: ClassMixture, tau: float):
    """Large-concentration form: softmax cross-entropy on logits
    ``log pi_j + mu_j . z / tau + 1 / (2 tau^2 kappa_j)``."""
    z, y, single = _batch(z, y)
    _check_labels(y, mix.n_classes)
    if np.any(mix.kappas <= 0):
        raise ValueError("asymptotic form needs positive concentrations")
    logits = np.log(mix.priors) + z @ mix.mus.T / tau + 1.0 / (2.0 * tau * tau * mix.kappas)
    value = logsumexp(logits, axis=1) - logits[np.arange(y.shape[0]), y]
    return float(value[0]) if single else value


def proco_posterior(z, mix: ClassMixture, tau: float) -> np.ndarray:
    """Class posterior ``softmax(ell)`` from the per-class logits, shape (n, K)."""
    ell, _ = proco_logits(z, mix, tau, with_grad=False)
    return softmax(ell, axis=1)


# ---------------------------------------------------------------------------
# two-branch objective


def combined_loss(classifier_logits, z, y, mix: ClassMixture, priors, config: ProcoConfig) -> CombinedLoss:
    """``L_LA(logits) + alpha * L_ProCo(z)`` with gradients for both inputs."""
    la_value, la_grad = logit_adjustment_value_and_grad(classifier_logits, priors, y)
    if config.alpha == 0:
        return CombinedLoss(la_value, la_grad, np.zeros_like(np.asarray(z, dtype=float)))
    pc = proco_loss(z, y, mix, config.tau, variant="in")
    return CombinedLoss(la_value + config.alpha * pc.value, la_grad, config.alpha * pc.grad_z)
