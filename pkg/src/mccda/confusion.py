"""Loss functions: Minimum Class Confusion and the baselines it is compared with.

All losses accept plain arrays (returning floats) or tape ``Var`` logits
(returning 1x1 ``Var`` losses that can be differentiated).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ContractError, DimensionError, ParameterError
from .nn import ModelParams, grad_reverse, mlp_forward

NORM_EPS = 1e-12


@dataclass(frozen=True)
class Toggles:
    """Switches for the MCC components.

    ``pr``: temperature rescaling (off means T = 1).
    ``ur``: entropy-based uncertainty reweighting (off means all weights 1).
    ``cn``: row normalization of the confusion matrix.
    ``detach_weights``: treat the uncertainty weights as constants in backward.
    """

    pr: bool = True
    ur: bool = True
    cn: bool = True
    detach_weights: bool = False


ALL_ON = Toggles()

ABLATIONS = {
    "cc_only": Toggles(pr=False, ur=False, cn=False),
    "cc_pr": Toggles(pr=True, ur=False, cn=False),
    "cc_pr_ur": Toggles(pr=True, ur=True, cn=False),
    "all": Toggles(pr=True, ur=True, cn=True),
}


@dataclass
class ConfusionOutputs:
    probs: np.ndarray
    entropy: np.ndarray
    weights: np.ndarray
    confusion: np.ndarray
    normalized: np.ndarray
    loss: float


def _v(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _scalar(x):
    return x if isinstance(x, Var) else float(np.asarray(x).reshape(-1)[0])


def entropy_rows(probs):
    """Per-row Shannon entropy (natural log), B x C -> B x 1."""
    p = _v(probs)
    if p.ndim != 2:
        raise DimensionError(f"probs must be 2D, got shape {p.shape}")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(p < 0):
        raise ContractError("entropy_rows: rows must be probability vectors")
    return ad.scale(ad.reduce_rows(ad.mul(probs, ad.log_clamped(probs))), -1.0)


def uncertainty_weights(entropy):
    """``B (1 + e^-H_i) / sum_i' (1 + e^-H_i')`` for a B x 1 entropy column."""
    h = _v(entropy)
    if h.ndim != 2 or h.shape[1] != 1:
        raise DimensionError(f"entropy must be B x 1, got shape {h.shape}")
    if np.any(h < -1e-12):
        raise ContractError("uncertainty_weights: entropy must be nonnegative")
    b = h.shape[0]
    smoothed = ad.add(ad.exp(ad.scale(entropy, -1.0)), 1.0)
    return ad.scale(ad.div(smoothed, ad.reduce_sum(smoothed)), float(b))


def class_confusion(probs, weights):
    """Weighted class correlation ``P^T diag(w) P``."""
    p, w = _v(probs), _v(weights)
    if w.shape != (p.shape[0], 1):
        raise DimensionError(f"weights shape {w.shape} does not match probs {p.shape}")
    return ad.matmul(ad.transpose(ad.mul(probs, weights)), probs)


def normalize_confusion(c):
    """Divide each row by its total mass plus ``1e-12``."""
    return ad.div(c, ad.add(ad.reduce_rows(c), NORM_EPS))


def mcc_loss(logits, temperature: float = 2.5, toggles: Toggles = ALL_ON,
             weights: Optional[np.ndarray] = None):
    """Minimum Class Confusion loss of a batch of logits.

    Returns ``(loss, outputs)``. ``loss`` is a 1x1 ``Var`` when ``logits`` is
    on a tape and a float otherwise. Passing ``weights`` (B x 1) pins the
    example weights to fixed values; this is what ``detach_weights`` does
    with the weights computed from the current batch.
    """
    z = _v(logits)
    if z.ndim != 2:
        raise DimensionError(f"logits must be 2D, got shape {z.shape}")
    b, k = z.shape
    if b < 2:
        raise ContractError(f"mcc_loss needs a batch of at least 2 examples, got {b}")
    if k < 2:
        raise ContractError(f"mcc_loss needs at least 2 classes, got {k}")
    t = temperature if toggles.pr else 1.0
    ad._check_temperature(temperature)

    probs = ad.softmax_rows(logits, t)
    if weights is not None:
        ent = entropy_rows(_v(probs))
        w = ad.as_matrix(weights, "weights")
    elif toggles.ur:
        ent = entropy_rows(_v(probs) if toggles.detach_weights else probs)
        w = uncertainty_weights(ent)
    else:
        ent = entropy_rows(_v(probs))
        w = np.ones((b, 1))
    conf = class_confusion(probs, w)
    norm = normalize_confusion(conf) if toggles.cn else conf
    off_diag = 1.0 - np.eye(k)
    loss = ad.scale(ad.reduce_sum(ad.mul(ad.abs_(norm), off_diag)), 1.0 / k)

    outputs = ConfusionOutputs(
        probs=_v(probs).copy(),
        entropy=_v(ent).copy(),
        weights=_v(w).copy(),
        confusion=_v(conf).copy(),
        normalized=_v(norm).copy(),
        loss=float(_v(loss)[0, 0]),
    )
    return _scalar(loss), outputs


def mcc_loss_oracle(logits, temperature: float = 2.5) -> float:
    """Reference MCC value computed with scalar loops only."""
    rows = [[float(v) for v in row] for row in logits]
    b, k = len(rows), len(rows[0])
    if b < 2:
        raise ContractError(f"mcc_loss needs a batch of at least 2 examples, got {b}")
    if k < 2:
        raise ContractError(f"mcc_loss needs at least 2 classes, got {k}")
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")

    probs = []
    for row in rows:
        top = max(row)
        exps = [math.exp((v - top) / temperature) for v in row]
        total = sum(exps)
        probs.append([e / total for e in exps])

    certainty = []
    for p in probs:
        h = 0.0
        for q in p:
            h -= q * math.log(max(q, 1e-12))
        certainty.append(1.0 + math.exp(-h))
    csum = sum(certainty)
    w = [b * c / csum for c in certainty]

    conf = [[0.0] * k for _ in range(k)]
    for i in range(b):
        for j in range(k):
            for jj in range(k):
                conf[j][jj] += w[i] * probs[i][j] * probs[i][jj]

    loss = 0.0
    for j in range(k):
        mass = sum(conf[j]) + 1e-12
        for jj in range(k):
            if jj != j:
                loss += abs(conf[j][jj] / mass)
    return loss / k


def _one_hot(labels: Sequence[int], k: int) -> np.ndarray:
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= k):
        raise IndexError(f"labels must lie in [0, {k}), got range [{idx.min()}, {idx.max()}]")
    out = np.zeros((idx.size, k))
    out[np.arange(idx.size), idx] = 1.0
    return out


def cross_entropy(logits, labels: Sequence[int]):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    z = _v(logits)
    onehot = _one_hot(labels, z.shape[1])
    if onehot.shape[0] != z.shape[0]:
        raise DimensionError(f"{onehot.shape[0]} labels for {z.shape[0]} rows")
    logp = ad.log_softmax_rows(logits, 1.0)
    return _scalar(ad.scale(ad.reduce_sum(ad.mul(logp, onehot)), -1.0 / z.shape[0]))


def minent_loss(logits, temperature: float = 1.0):
    """Mean prediction entropy of ``softmax(logits / T)``."""
    probs = ad.softmax_rows(logits, temperature)
    return _scalar(ad.scale(ad.reduce_sum(entropy_rows(probs)), 1.0 / _v(logits).shape[0]))


def domain_adversarial_loss(features, domain_labels: Sequence[int],
                            discriminator: ModelParams, coeff: float):
    """Discriminator cross-entropy on gradient-reversed features.

    Minimizing the returned value trains the discriminator to tell domains
    apart while the reversal pushes the feature extractor the other way.
    """
    _, dlogits = mlp_forward(discriminator, grad_reverse(features, coeff))
    return cross_entropy(dlogits, domain_labels)
