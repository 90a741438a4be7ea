"""Scenario normalization, the training loop and evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .confusion import Toggles, cross_entropy, domain_adversarial_loss, mcc_loss, minent_loss
from .errors import ContractError, ParameterError, TrainingError
from .nn import ModelParams, OptState, grl_coeff, init_params, mlp_forward, mlp_spec, sgd_step
from .synthdata import DomainDataset, batch_iter, merge_domains

SCENARIO_KINDS = ("UDA", "PDA", "MSDA", "MTDA", "MSPDA", "MTPDA")
METHODS = ("source_only", "minent", "mcc", "dann", "dann+mcc", "dann+minent")
CURVE_EVERY = 10
FEATURE_WIDTH = 16


@dataclass
class ScenarioSpec:
    kind: str
    sources: List[DomainDataset]
    targets: List[DomainDataset]
    num_classes: int

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ContractError(f"unknown scenario kind {self.kind!r}")
        if not self.sources or not self.targets:
            raise ContractError("scenario needs at least one source and one target")
        if self.kind in ("UDA", "PDA") and (len(self.sources), len(self.targets)) != (1, 1):
            raise ContractError(f"{self.kind} takes exactly one source and one target")
        if self.kind in ("MTDA", "MTPDA") and len(self.sources) != 1:
            raise ContractError(f"{self.kind} takes exactly one source")
        if self.kind in ("MSDA", "MSPDA") and len(self.targets) != 1:
            raise ContractError(f"{self.kind} takes exactly one target")
        for ds in self.sources:
            if not ds.labeled:
                raise ContractError(f"source {ds.domain_id!r} is unlabeled")
        for ds in [*self.sources, *self.targets]:
            if ds.label_set and max(ds.label_set) >= self.num_classes:
                raise ContractError(
                    f"{ds.domain_id!r} has labels beyond num_classes={self.num_classes}"
                )
        if self.kind.endswith("PDA"):
            src = set().union(*(ds.label_set for ds in self.sources))
            tgt = set().union(*(ds.label_set for ds in self.targets))
            if not tgt < src:
                raise ContractError(
                    f"{self.kind}: target labels {sorted(tgt)} must be a proper subset of "
                    f"source labels {sorted(src)}"
                )

    @property
    def source(self) -> DomainDataset:
        return self.sources[0]

    @property
    def target(self) -> DomainDataset:
        return self.targets[0]


def normalize_scenario(spec: ScenarioSpec) -> ScenarioSpec:
    """Merge multiple sources and/or targets so exactly one of each remains.

    Nothing about the loss changes between scenario kinds; this merge is the
    only place where they differ.
    """
    sources = spec.sources
    targets = spec.targets
    if len(sources) > 1:
        sources = [merge_domains(sources, "+".join(d.domain_id for d in sources))]
    if len(targets) > 1:
        targets = [merge_domains(targets, "+".join(d.domain_id for d in targets))]
    return ScenarioSpec(spec.kind, list(sources), list(targets), spec.num_classes)


@dataclass
class TrainConfig:
    method: str = "mcc"
    temperature: float = 2.5
    mu: float = 1.0
    lam: float = 1.0
    batch_size: int = 32
    lr: float = 0.2
    momentum: float = 0.9
    iterations: int = 2000
    seed: int = 0
    pr: bool = True
    ur: bool = True
    cn: bool = True
    detach_weights: bool = False
    diagnostics: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        if self.mu < 0 or self.lam < 0:
            raise ParameterError("mu and lam must be nonnegative")
        if self.batch_size < 2:
            raise ParameterError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.iterations < 1:
            raise ParameterError(f"iterations must be at least 1, got {self.iterations}")
        if not self.lr > 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")

    @property
    def toggles(self) -> Toggles:
        return Toggles(self.pr, self.ur, self.cn, self.detach_weights)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class Report:
    iterations: List[int]
    total_loss: List[float]
    ce_loss: List[float]
    method_loss: List[float]
    target_accuracy: List[float]
    source_accuracy_final: float
    target_accuracy_final: float
    error_matrix: List[List[float]]
    a_distance: Optional[float] = None
    eps_ideal: Optional[float] = None
    iterations_to_threshold: Dict[str, Optional[int]] = field(default_factory=dict)
    wall_time: float = field(default=0.0, compare=False)

    def to_dict(self, include_wall_time: bool = False) -> Dict:
        d = asdict(self)
        if not include_wall_time:
            d.pop("wall_time")
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "Report":
        return cls(**d)


THRESHOLDS = (0.85, 0.9, 0.95)


def classifier_spec(d_in: int, num_classes: int):
    """F = d_in -> 16 relu -> 16 relu; G = 16 -> |C|."""
    return mlp_spec(d_in, [FEATURE_WIDTH, FEATURE_WIDTH], num_classes)


def discriminator_spec():
    return mlp_spec(FEATURE_WIDTH, [FEATURE_WIDTH], 2)


def _streams(seed: int):
    """Independent generators for init, discriminator init, source and target draws."""
    return np.random.SeedSequence(seed).spawn(5)


def predict(params: ModelParams, points: np.ndarray) -> np.ndarray:
    _, logits = mlp_forward(params, points)
    return np.argmax(logits, axis=1)


def features(params: ModelParams, points: np.ndarray) -> np.ndarray:
    feats, _ = mlp_forward(params, points)
    return feats


def evaluate(params: ModelParams, ds: DomainDataset, num_classes: Optional[int] = None):
    """Accuracy and row-normalized error matrix (true class -> predicted class)."""
    if not ds.labeled:
        raise ContractError("evaluate needs a labeled dataset")
    if len(ds) == 0:
        raise ContractError("evaluate on an empty dataset")
    k = num_classes or params.d_out
    pred = predict(params, ds.points)
    return accuracy_and_error_matrix(ds.labels, pred, k)


def accuracy_and_error_matrix(labels: np.ndarray, pred: np.ndarray, k: int):
    counts = np.zeros((k, k))
    np.add.at(counts, (labels, pred), 1.0)
    row = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, row, out=np.zeros_like(counts), where=row > 0)
    return float(np.mean(labels == pred)), matrix


def convergence_stats(report: Report, threshold: float) -> Optional[int]:
    """First recorded iteration whose target accuracy reaches ``threshold``."""
    if not 0 < threshold <= 1:
        raise ParameterError(f"threshold must be in (0, 1], got {threshold}")
    for it, acc in zip(report.iterations, report.target_accuracy):
        if acc >= threshold:
            return it
    return None


def _method_term(method: str, logits_t, config: TrainConfig):
    if method.endswith("mcc"):
        loss, _ = mcc_loss(logits_t, config.temperature, config.toggles)
        return loss
    if method.endswith("minent"):
        return minent_loss(logits_t, config.temperature)
    return None


def train(spec: ScenarioSpec, config: TrainConfig,
          init: Optional[ModelParams] = None) -> Tuple[ModelParams, Report]:
    """Train F and G (and D for adversarial methods) on a scenario.

    Per step: CE on a labeled source batch, plus ``mu`` times the method loss
    on an unlabeled target batch, plus ``lam`` times the discriminator loss
    on gradient-reversed features for the ``dann`` family.
    """
    from .diagnostics import a_distance, representation_ideal_error

    started = time.perf_counter()
    spec = normalize_scenario(spec)
    source, target = spec.source, spec.target
    k = spec.num_classes
    s_init, s_disc, s_src, s_tgt, s_diag = _streams(config.seed)

    params = init if init is not None else init_params(classifier_spec(source.dim, k), s_init)
    adversarial = config.method.startswith("dann")
    disc = init_params(discriminator_spec(), s_disc) if adversarial else None

    arrays = params.arrays() + (disc.arrays() if disc is not None else [])
    opt = OptState.for_params(arrays, config.lr, config.momentum)
    n_cls = len(params.arrays())

    src_stream = batch_iter(source, config.batch_size, s_src)
    tgt_stream = batch_iter(target, config.batch_size, s_tgt, with_labels=False)
    domain_labels = np.repeat([0, 1], config.batch_size)
    evaluate_target = target.labeled

    curves = {"iterations": [], "total_loss": [], "ce_loss": [], "method_loss": [],
              "target_accuracy": []}
    for it in range(config.iterations):
        xs, ys = next(src_stream)
        xt = next(tgt_stream)

        tape = ad.Tape()
        bound = params.bind(tape)
        feat_s, logit_s = mlp_forward(bound, xs)
        feat_t, logit_t = mlp_forward(bound, xt)
        ce = cross_entropy(logit_s, ys)
        total = ce
        term = _method_term(config.method, logit_t, config)
        if term is not None and config.mu > 0:
            total = total + config.mu * term
        leaves = bound.vars()
        if adversarial:
            dbound = disc.bind(tape)
            leaves = leaves + dbound.vars()
            coeff = grl_coeff(it / config.iterations)
            adv = domain_adversarial_loss(
                ad.concat_rows([feat_s, feat_t]), domain_labels, dbound, coeff
            )
            if config.lam > 0:
                total = total + config.lam * adv

        value = total.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at iteration {it + 1}")
        grads = tape.backward(total)
        new = sgd_step(arrays, [ad.grad_of(grads, v) for v in leaves], opt)
        arrays = new
        params = params.with_arrays(arrays[:n_cls])
        if disc is not None:
            disc = disc.with_arrays(arrays[n_cls:])

        if (it + 1) % CURVE_EVERY == 0 or it + 1 == config.iterations:
            curves["iterations"].append(it + 1)
            curves["total_loss"].append(value)
            curves["ce_loss"].append(ce.item())
            curves["method_loss"].append(term.item() if term is not None else 0.0)
            if evaluate_target:
                acc, _ = evaluate(params, target, k)
            else:
                acc = float("nan")
            curves["target_accuracy"].append(acc)

    src_acc, _ = evaluate(params, source, k)
    if evaluate_target:
        tgt_acc, err = evaluate(params, target, k)
    else:
        tgt_acc, err = float("nan"), np.zeros((k, k))

    report = Report(
        **curves,
        source_accuracy_final=src_acc,
        target_accuracy_final=tgt_acc,
        error_matrix=err.tolist(),
    )
    if evaluate_target:
        report.iterations_to_threshold = {
            f"{t:g}": convergence_stats(report, t) for t in THRESHOLDS
        }
    if config.diagnostics:
        diag_seed = int(s_diag.generate_state(1)[0])
        report.a_distance = a_distance(
            features(params, source.points), features(params, target.points), diag_seed
        )
        if evaluate_target:
            report.eps_ideal = representation_ideal_error(params, source, target, diag_seed)
    report.wall_time = time.perf_counter() - started
    return params, report
