"""Self-check suites for the loss pipeline and the autodiff engine.

Each suite compares library output against an independent reference
(scalar-loop oracles, closed forms or finite differences). Library functions
are looked up through their modules at call time, so a patched or broken
implementation is what gets checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, List, Tuple

import numpy as np

from . import autodiff as ad
from . import confusion

FD_STEP = 1e-5
GRAD_TOL = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    checks: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: {self.checks} checks{extra}"


class _Suite:
    def __init__(self, name: str):
        self.name = name
        self.checks = 0
        self.failures: List[str] = []

    def check(self, ok: bool, what: str) -> None:
        self.checks += 1
        if not ok:
            self.failures.append(what)

    def result(self) -> SuiteResult:
        detail = self.failures[0] if self.failures else ""
        if len(self.failures) > 1:
            detail += f"; {len(self.failures) - 1} more"
        return SuiteResult(self.name, not self.failures, self.checks, detail)


def _softmax_reference(row, t):
    top = max(row)
    e = [math.exp((v - top) / t) for v in row]
    s = sum(e)
    return [x / s for x in e]


def suite_softmax(rng: np.random.Generator, draws: int = 200) -> SuiteResult:
    s = _Suite("softmax")
    for _ in range(draws):
        b, k = rng.integers(1, 9), rng.integers(2, 9)
        t = float(rng.choice([0.5, 1.0, 2.5, 5.0]))
        z = rng.normal(0, 3, (b, k))
        p = ad.softmax_rows(z, t)
        ref = np.array([_softmax_reference(r, t) for r in z])
        s.check(np.max(np.abs(p - ref)) <= 1e-12, f"softmax differs from reference at T={t}")
        s.check(np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12), "rows do not sum to 1")
        shifted = ad.softmax_rows(z + rng.normal(0, 5, (b, 1)), t)
        s.check(np.max(np.abs(shifted - p)) <= 1e-12, "not invariant to per-row shifts")
    big = ad.softmax_rows(np.array([[1000.0, 0.0, -1000.0]]), 1.0)
    s.check(bool(np.all(np.isfinite(big))), "overflow on large logits")
    return s.result()


def suite_weights(rng: np.random.Generator, draws: int = 200) -> SuiteResult:
    s = _Suite("weights")
    # two examples with entropies 0 and ln 2: certainties 2 and 1.5
    w = confusion.uncertainty_weights(np.array([[0.0], [math.log(2.0)]]))
    s.check(np.max(np.abs(w.ravel() - [8 / 7, 6 / 7])) <= 1e-12, f"anchor weights {w.ravel()}")
    w = confusion.uncertainty_weights(np.full((5, 1), 0.7))
    s.check(np.array_equal(w, np.ones((5, 1))), "equal entropies must give unit weights")
    for _ in range(draws):
        b, k = int(rng.integers(2, 33)), int(rng.integers(2, 13))
        probs = ad.softmax_rows(rng.normal(0, 3, (b, k)), 1.0)
        h = confusion.entropy_rows(probs)
        ref_h = np.array([[-sum(q * math.log(max(q, 1e-12)) for q in row)] for row in probs])
        s.check(np.max(np.abs(h - ref_h)) <= 1e-12, "entropy differs from reference")
        w = confusion.uncertainty_weights(h)
        s.check(abs(w.sum() - b) <= 1e-9, f"weights sum to {w.sum()} not {b}")
        s.check(bool(np.all((w >= 0.5) & (w <= 2.0))), "weight outside [0.5, 2]")
        order = np.argsort(h.ravel())
        s.check(bool(np.all(np.diff(w.ravel()[order]) <= 1e-12)), "weights not decreasing in entropy")
    return s.result()


def random_logits(rng: np.random.Generator, b_range=(2, 64), k_range=(2, 12),
                  scale=None) -> np.ndarray:
    """Gaussian logits; ``scale=None`` draws the spread uniformly from [0.1, 5]."""
    b = int(rng.integers(b_range[0], b_range[1] + 1))
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    sigma = float(rng.uniform(0.1, 5.0)) if scale is None else scale
    return rng.normal(0, sigma, (b, k))


def suite_oracle(rng: np.random.Generator, draws: int = 1000) -> SuiteResult:
    s = _Suite("oracle equivalence")
    worst = 0.0
    for _ in range(draws):
        z = random_logits(rng)
        t = float(rng.choice([0.5, 1.0, 2.5, 5.0]))
        got, _ = confusion.mcc_loss(z, t)
        want = confusion.mcc_loss_oracle(z, t)
        worst = max(worst, abs(got - want))
        s.check(abs(got - want) <= 1e-10, f"mcc_loss {got} vs oracle {want} (T={t})")
    res = s.result()
    if res.passed:
        res.detail = f"max |diff| {worst:.1e}"
    return res


def suite_anchors(rng: np.random.Generator, draws: int = 1000) -> SuiteResult:
    s = _Suite("analytic anchors")
    for k in (2, 3, 12):
        onehot = np.full((k, k), -1e4)
        np.fill_diagonal(onehot, 1e4)
        loss, _ = confusion.mcc_loss(onehot, 1.0)
        s.check(abs(loss) <= 1e-12, f"one-hot batch gives {loss}, expected 0")
        loss, _ = confusion.mcc_loss(np.zeros((32, k)), 2.5)
        s.check(abs(loss - (k - 1) / k) <= 1e-12, f"uniform batch |C|={k} gives {loss}")
    for _ in range(draws):
        # unit-scale logits keep every class's batch mass far above the
        # denominator epsilon, which the identity ignores
        z = random_logits(rng, scale=1.0)
        loss, out = confusion.mcc_loss(z, float(rng.choice([0.5, 1.0, 2.5, 5.0])))
        k = z.shape[1]
        s.check(abs(loss - (1.0 - np.trace(out.normalized) / k)) <= 1e-10, "trace identity violated")
        s.check(abs(out.weights.sum() - z.shape[0]) <= 1e-9, "weights do not sum to B")
    return s.result()


TOGGLE_GRID = [confusion.Toggles(pr, ur, cn, det)
               for pr, ur, cn, det in product((False, True), repeat=4)]


def logit_gradient_error(z: np.ndarray, t: float, toggles: "confusion.Toggles") -> float:
    """Relative error between the tape gradient and central differences."""
    tape = ad.Tape()
    zv = tape.leaf(z, "logits")
    loss, out = confusion.mcc_loss(zv, t, toggles)
    g = ad.grad_of(tape.backward(loss), zv)
    # detached weights are constants in backward, so difference with them pinned
    pinned = out.weights if (toggles.detach_weights and toggles.ur) else None
    fn: Callable = lambda ps: confusion.mcc_loss(ps[0], t, toggles, weights=pinned)[0]
    (fd,) = ad.finite_diff_grad(fn, [z], FD_STEP)
    return ad.relative_error(g, fd)


def suite_gradients(rng: np.random.Generator, draws: int = 3) -> SuiteResult:
    s = _Suite("gradient checks")
    worst = 0.0
    for toggles in TOGGLE_GRID:
        for _ in range(draws):
            z = random_logits(rng, (2, 10), (2, 6))
            err = logit_gradient_error(z, float(rng.choice([0.5, 1.0, 2.5])), toggles)
            worst = max(worst, err)
            s.check(err <= GRAD_TOL, f"relative error {err:.2e} for {toggles}")
    res = s.result()
    if res.passed:
        res.detail = f"max rel err {worst:.1e}"
    return res


def suite_autodiff(rng: np.random.Generator, draws: int = 20) -> SuiteResult:
    s = _Suite("autodiff primitives")
    for _ in range(draws):
        a, b, c = (int(v) for v in rng.integers(1, 6, 3))
        x, y = rng.normal(size=(a, b)), rng.normal(size=(b, c))
        ref = np.array([[sum(x[i, p] * y[p, j] for p in range(b)) for j in range(c)] for i in range(a)])
        s.check(np.max(np.abs(ad.matmul(x, y) - ref)) <= 1e-12, "matmul differs from triple loop")

        def loss(ps):
            u = ad.tanh(ad.matmul(ps[0], ps[1]))
            v = ad.mul(ad.exp(ad.scale(u, 0.5)), ad.relu(u))
            return ad.reduce_sum(ad.add(v, ad.log_clamped(ad.add(ad.abs_(u), 1.0))))

        tape = ad.Tape()
        xv, yv = tape.leaf(x), tape.leaf(y)
        grads = tape.backward(loss([xv, yv]))
        fd = ad.finite_diff_grad(lambda ps: float(loss(ps)[0, 0]), [x, y], FD_STEP)
        for got, want in zip((ad.grad_of(grads, xv), ad.grad_of(grads, yv)), fd):
            err = ad.relative_error(got, want)
            s.check(err <= GRAD_TOL, f"composite gradient relative error {err:.2e}")
    return s.result()


SUITES: Tuple[Tuple[str, Callable[[np.random.Generator], SuiteResult]], ...] = (
    ("softmax", suite_softmax),
    ("weights", suite_weights),
    ("oracle", suite_oracle),
    ("anchors", suite_anchors),
    ("gradients", suite_gradients),
    ("autodiff", suite_autodiff),
)


def run_all(seed: int = 0) -> List[SuiteResult]:
    """Run every suite with its own seeded generator."""
    streams = np.random.SeedSequence(seed).spawn(len(SUITES))
    results = []
    for (_, fn), ss in zip(SUITES, streams):
        try:
            results.append(fn(np.random.default_rng(ss)))
        except Exception as exc:  # a crash is a failure, not an abort
            results.append(SuiteResult(fn.__name__.removeprefix("suite_"), False, 0,
                                       f"{type(exc).__name__}: {exc}"))
    return results
