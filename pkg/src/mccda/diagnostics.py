"""Post-hoc diagnostics: proxy A-distance and the ideal joint hypothesis error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .confusion import cross_entropy
from .errors import ContractError
from .nn import ModelParams, OptState, init_params, mlp_forward, mlp_spec, sgd_step
from .synthdata import DomainDataset

MIN_ROWS = 20


@dataclass(frozen=True)
class ProbeConfig:
    """A small MLP trained full-batch on a fixed budget."""

    hidden: int = 8
    steps: int = 500
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0


def _standardize(train: np.ndarray, *others: np.ndarray):
    mean = train.mean(axis=0, keepdims=True)
    std = train.std(axis=0, keepdims=True)
    std = np.where(std > 1e-12, std, 1.0)
    return [(x - mean) / std for x in (train, *others)]


def fit_probe(x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig) -> ModelParams:
    params = init_params(mlp_spec(x.shape[1], [cfg.hidden] if cfg.hidden else [], num_classes), cfg.seed)
    arrays = params.arrays()
    opt = OptState.for_params(arrays, cfg.lr, cfg.momentum)
    for _ in range(cfg.steps):
        tape = ad.Tape()
        bound = params.bind(tape)
        _, logits = mlp_forward(bound, x)
        loss = cross_entropy(logits, y)
        grads = tape.backward(loss)
        arrays = sgd_step(arrays, [ad.grad_of(grads, v) for v in bound.vars()], opt)
        params = params.with_arrays(arrays)
    return params


def _error(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    _, logits = mlp_forward(params, x)
    return float(np.mean(np.argmax(logits, axis=1) != y))


def a_distance(features_source: np.ndarray, features_target: np.ndarray, seed: int = 0,
               probe: Optional[ProbeConfig] = None) -> float:
    """Proxy A-distance ``2 (1 - 2 err)`` of a domain classifier, clamped to [0, 2].

    Each domain is split 50/50 into train and test halves; features are
    standardized with the training-half statistics.
    """
    fs = ad.as_matrix(features_source, "features_source")
    ft = ad.as_matrix(features_target, "features_target")
    if fs.shape[1] != ft.shape[1]:
        raise ContractError(f"feature dimensions differ: {fs.shape[1]} vs {ft.shape[1]}")
    if len(fs) < MIN_ROWS or len(ft) < MIN_ROWS:
        raise ContractError(f"a_distance needs at least {MIN_ROWS} rows per domain")
    rng = np.random.default_rng(seed)
    ps, pt = rng.permutation(len(fs)), rng.permutation(len(ft))
    hs, ht = len(fs) // 2, len(ft) // 2
    x_train = np.vstack([fs[ps[:hs]], ft[pt[:ht]]])
    y_train = np.repeat([0, 1], [hs, ht])
    x_test = np.vstack([fs[ps[hs:]], ft[pt[ht:]]])
    y_test = np.repeat([0, 1], [len(fs) - hs, len(ft) - ht])
    x_train, x_test = _standardize(x_train, x_test)
    cfg = probe or ProbeConfig(seed=seed)
    clf = fit_probe(x_train, y_train, 2, cfg)
    err = _error(clf, x_test, y_test)
    return float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0))


def ideal_joint_error(source: DomainDataset, target: DomainDataset,
                      probe: Optional[ProbeConfig] = None, num_classes: Optional[int] = None) -> float:
    """Train one classifier on source and target labels together.

    Returns ``max(source error, target error)`` of that classifier on the
    data it was fit to. Target labels are used here only as an oracle.
    """
    if not source.labeled or not target.labeled:
        raise ContractError("ideal_joint_error needs labeled source and target")
    k = num_classes or (max(source.label_set + target.label_set) + 1)
    x = np.vstack([source.points, target.points])
    y = np.concatenate([source.labels, target.labels])
    (x,) = _standardize(x)
    cfg = probe or ProbeConfig(hidden=16)
    clf = fit_probe(x, y, k, cfg)
    ns = len(source)
    return max(_error(clf, x[:ns], y[:ns]), _error(clf, x[ns:], y[ns:]))


def representation_ideal_error(params: ModelParams, source: DomainDataset,
                               target: DomainDataset, seed: int = 0) -> float:
    """Ideal joint error of a linear classifier on the learned features."""
    fs, _ = mlp_forward(params, source.points)
    ft, _ = mlp_forward(params, target.points)
    src = DomainDataset(fs, source.labels, source.domain_id, source.label_set)
    tgt = DomainDataset(ft, target.labels, target.domain_id, target.label_set)
    probe = ProbeConfig(hidden=0, seed=seed)
    return ideal_joint_error(src, tgt, probe, num_classes=params.d_out)
