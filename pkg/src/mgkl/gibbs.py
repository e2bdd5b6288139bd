"""Gibbs (log-linear) importance weights: l1-regularized MaxEnt / log-linear KLIEP.

Q(x) = P(x) exp(sum_c lam_c c(x) - lam_0). Minimizing KL(R||Q) + sum_c a_c |lam_c|
over lam is, up to the constant KL(R||P),

    f(lam) = lam_0(lam) - lam . E_R[c] + sum_c a_c |lam_c|,

whose smooth part has gradient E_Q[c] - E_R[c]. We run accelerated proximal
gradient steps with soft-thresholding, backtracking and restarts.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import PairData
from .errors import NonConvergence, OverflowGuard
from .prob import DiscreteDistribution, LogBase, WeightFunction, kl_nats
from .subpop import Subpopulation, SubpopulationFamily, from_dict, side_labeled

logger = logging.getLogger(__name__)

EXPONENT_WINDOW = 700.0


@dataclass
class FitParams:
    alpha: float | list = 0.0
    learning_rate: float = 0.02
    max_iters: int = 5000
    grad_tol: float = 1e-7
    boosting_mode: bool = False
    advantage_threshold: float = 0.02
    max_features: int = 500
    step_growth: float = 1.0
    strict: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if np.any(np.asarray(self.alpha, dtype=float) < 0):
            raise ValueError("alpha must be nonnegative")
        if self.step_growth < 1:
            raise ValueError("step_growth must be >= 1")


class GibbsModel(WeightFunction):
    def __init__(self, features, coef, lambda0, alphas):
        self.features: list[Subpopulation] = list(features)
        self.coef = np.asarray(coef, dtype=float)
        self.lambda0 = float(lambda0)
        self.alphas = np.asarray(alphas, dtype=float)
        self.trace: list[float] = []
        self.iterations = 0
        self.converged = True

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.features:
            return np.zeros((x.shape[0], 0))
        return np.column_stack([np.asarray(c(x), dtype=float) for c in self.features])

    def log_weight(self, x) -> np.ndarray:
        return self.design(x) @ self.coef - self.lambda0

    def __call__(self, x):
        return np.exp(self.log_weight(x))

    def to_json(self) -> dict:
        return {
            "features": [c.to_dict() for c in self.features],
            "coef": [float(v) for v in self.coef],
            "lambda0": self.lambda0,
            "alphas": [float(v) for v in self.alphas],
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_json(cls, obj) -> "GibbsModel":
        model = cls([from_dict(d) for d in obj["features"]], obj["coef"], obj["lambda0"], obj["alphas"])
        model.iterations = obj.get("iterations", 0)
        model.converged = obj.get("converged", True)
        return model

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "GibbsModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _logsumexp(eta, log_m):
    z = eta + log_m
    top = z.max()
    return float(top + np.log(np.exp(z - top).sum()))


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _stationarity(lam, grad, alphas):
    """Largest entry of the minimum-norm subgradient."""
    active = lam != 0
    viol = np.where(active, np.abs(grad + alphas * np.sign(lam)), np.maximum(np.abs(grad) - alphas, 0.0))
    return float(viol.max()) if viol.size else 0.0


class _Problem:
    def __init__(self, Fp, log_pm, mean_r, alphas):
        self.Fp = Fp
        self.log_pm = log_pm
        self.mean_r = mean_r
        self.alphas = alphas
        self.warned = False

    def smooth(self, lam):
        eta = self.Fp @ lam
        if not self.warned and eta.size and np.abs(eta).max() > EXPONENT_WINDOW:
            warnings.warn("log-weights exceed the stable exponent window; using shifted sums",
                          OverflowGuard)
            self.warned = True
        lam0 = _logsumexp(eta, self.log_pm)
        q = np.exp(eta + self.log_pm - lam0)
        return lam0 - lam @ self.mean_r, q @ self.Fp - self.mean_r, lam0

    def penalty(self, lam):
        return float(self.alphas @ np.abs(lam))


def _prox_step(prob: _Problem, y, y_val, y_grad, step):
    """Backtracking proximal step from y; returns (cand, value, grad, step)."""
    while True:
        cand = _soft(y - step * y_grad, step * prob.alphas)
        diff = cand - y
        c_val, c_grad, _ = prob.smooth(cand)
        slack = 1e-12 * max(1.0, abs(y_val))  # sufficient decrease is unreadable below rounding
        if c_val <= y_val + y_grad @ diff + (diff @ diff) / (2 * step) + slack or step < 1e-12:
            return cand, c_val, c_grad, step
        step *= 0.5


def _prox_descent(prob: _Problem, lam, step, n_iters, params: FitParams, trace):
    """Accelerated proximal gradient with restart; returns (lam, step, stationarity, iters).

    Momentum matters when features are collinear: the smooth part is flat
    along some direction and only the l1 term moves the iterate there. A
    step that would raise the objective is replaced by a plain step from the
    current point, so the objective never increases.
    """
    val, grad, _ = prob.smooth(lam)
    obj = val + prob.penalty(lam)
    stat = _stationarity(lam, grad, prob.alphas)
    prev, t = lam, 1.0
    it = 0
    while it < n_iters and stat > params.grad_tol:
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = lam + ((t - 1.0) / t_next) * (lam - prev)
        if np.array_equal(y, lam):
            y_val, y_grad = val, grad
        else:
            y_val, y_grad, _ = prob.smooth(y)
        cand, c_val, c_grad, step = _prox_step(prob, y, y_val, y_grad, step)
        c_obj = c_val + prob.penalty(cand)
        if c_obj > obj and not np.array_equal(y, lam):
            t_next = 1.0
            cand, c_val, c_grad, step = _prox_step(prob, lam, val, grad, step)
            c_obj = c_val + prob.penalty(cand)
        prev, lam, val, grad, obj, t = lam, cand, c_val, c_grad, c_obj, t_next
        trace.append(obj)
        stat = _stationarity(lam, grad, prob.alphas)
        step *= params.step_growth
        it += 1
    return lam, step, stat, it


def _alphas_for(alpha, n):
    a = np.asarray(alpha, dtype=float)
    return np.full(n, float(a)) if a.ndim == 0 else a.copy()


def fit(p_side, r_side=None, family: SubpopulationFamily | None = None,
        params: FitParams | None = None) -> GibbsModel:
    """Fit the l1-regularized Gibbs projection of R onto the family.

    For an explicit family all members are features from the start. With a
    learner-backed family (and ``boosting_mode``) the learner proposes the
    feature with the largest |R(c) - Q(c)| each round until that advantage
    drops to the threshold.
    """
    params = params or FitParams()
    data = PairData.coerce(p_side, r_side)
    log_pm = np.log(data.p_m)
    offset = 0.0
    if data.exact:
        offset = kl_nats(data.r_dist.pmf, data.p_dist.pmf)

    if family is not None and family.explicit and not params.boosting_mode:
        model = GibbsModel(family.members, np.zeros(len(family)), 0.0, _alphas_for(params.alpha, len(family)))
        Fp = model.design(data.p_x)
        mean_r = data.r_m @ model.design(data.r_x)
        prob = _Problem(Fp, log_pm, mean_r, model.alphas)
        trace = [prob.smooth(model.coef)[0]]
        lam, _, stat, iters = _prox_descent(prob, model.coef, params.learning_rate,
                                            params.max_iters, params, trace)
        model.coef = lam
        model.lambda0 = prob.smooth(lam)[2]
        model.trace = [offset + t for t in trace]
        model.iterations = iters
        model.converged = stat <= params.grad_tol
        if not model.converged and params.strict:
            exc = NonConvergence(f"no convergence after {iters} iterations (stationarity {stat:.3g})", stat)
            exc.model = model
            raise exc
        return model

    learner = family.learner if family is not None and not family.explicit else None
    if learner is None:
        if family is None or not family.explicit:
            raise ValueError("boosting mode needs a learner-backed or explicit family")
        from .subpop import FamilyLearner
        learner = FamilyLearner(family.members)
    return _fit_boosting(data, learner, params, log_pm, offset)


def _fit_boosting(data: PairData, learner, params: FitParams, log_pm, offset) -> GibbsModel:
    """Functional-gradient boosting: one proximal step per proposed feature.

    Each round reweights P by the current Q, asks the learner for the
    predicate h that best separates Q from R, and moves lam_h by
    learning_rate * (E_R[h] - E_Q[h]) followed by soft-thresholding.
    Rounds stop once the learner's advantage is at most the threshold.
    """
    alpha = float(np.asarray(params.alpha, dtype=float).ravel()[0])
    feats: list[Subpopulation] = []
    index: dict[str, int] = {}
    cols_p: list[np.ndarray] = []
    mean_r: list[float] = []
    lam: list[float] = []
    eta = np.zeros(len(log_pm))
    x, y, _ = side_labeled(data.p_x, data.p_m, data.r_x, data.r_m)
    n_p = len(log_pm)
    lr = params.learning_rate
    lam0 = _logsumexp(eta, log_pm)
    trace = [0.0]
    converged = False
    rounds = 0
    for rounds in range(1, params.max_iters + 1):
        q_m = np.exp(eta + log_pm - lam0)
        h, adv = learner(x, y, np.concatenate([q_m, data.r_m]))
        if adv <= params.advantage_threshold:
            converged = True
            rounds -= 1
            break
        key = json.dumps(h.to_dict(), sort_keys=True)
        if key not in index:
            if len(feats) >= params.max_features:
                break
            index[key] = len(feats)
            feats.append(h)
            col = np.asarray(h(x), dtype=float)
            cols_p.append(col[:n_p])
            mean_r.append(float(data.r_m @ col[n_p:]))
            lam.append(0.0)
        j = index[key]
        gap = mean_r[j] - float(q_m @ cols_p[j])
        new = float(_soft(lam[j] + lr * gap, lr * alpha))
        eta += (new - lam[j]) * cols_p[j]
        lam[j] = new
        lam0 = _logsumexp(eta, log_pm)
        trace.append(lam0 - float(np.dot(lam, mean_r)) + alpha * float(np.abs(lam).sum()))
        logger.debug("boost round %d: advantage %.4f, %d features", rounds, adv, len(feats))
    model = GibbsModel(feats, np.asarray(lam), lam0 if feats else 0.0, np.full(len(feats), alpha))
    model.trace = [offset + t for t in trace]
    model.iterations = rounds
    model.converged = converged
    return model


def log_partition(model: GibbsModel, p_side) -> float:
    """lam_0 = log E_P[exp(sum lam_c c(x))] by max-shifted summation."""
    from .prob import support

    x, m = support(p_side)
    if not model.features:
        return 0.0
    return _logsumexp(model.design(x) @ model.coef, np.log(m))


def ell1(model: GibbsModel) -> float:
    return float(np.abs(model.coef).sum())


@dataclass
class KktReport:
    gaps: np.ndarray                  # E_R[c] - E_Q[c]
    max_ineq_violation: float         # max_c (|gap| - alpha_c)^+
    max_sign_violation: float         # max over active c of |gap - alpha_c sign(lam_c)|
    tol: float
    ok: bool = field(init=False)

    def __post_init__(self):
        self.ok = self.max_ineq_violation <= self.tol and self.max_sign_violation <= self.tol


def kkt_check(model: GibbsModel, p_side, r_side=None, tol: float = 1e-6) -> KktReport:
    data = PairData.coerce(p_side, r_side)
    w = model(data.p_x)
    q_m = data.p_m * w
    q_m = q_m / q_m.sum()
    gaps = data.r_m @ model.design(data.r_x) - q_m @ model.design(data.p_x)
    ineq = np.maximum(np.abs(gaps) - model.alphas, 0.0)
    active = model.coef != 0
    sign = np.abs(gaps - model.alphas * np.sign(model.coef))[active]
    return KktReport(gaps, float(ineq.max()) if ineq.size else 0.0,
                     float(sign.max()) if sign.size else 0.0, tol)


def gibbs_distribution(model: GibbsModel, p_exact: DiscreteDistribution) -> DiscreteDistribution:
    q = p_exact.pmf * model(p_exact.points)
    return DiscreteDistribution(q / q.sum(), p_exact.points)


def pythagorean_gibbs_check(model: GibbsModel, p_exact: DiscreteDistribution,
                            r_exact: DiscreteDistribution, base=LogBase.TWO) -> float:
    """|KL(R||P) - KL(R||Q) - KL(Q||P) - sum_c a_c |lam_c|| on exact distributions."""
    q = gibbs_distribution(model, p_exact)
    gap = (kl_nats(r_exact.pmf, p_exact.pmf) - kl_nats(r_exact.pmf, q.pmf)
           - kl_nats(q.pmf, p_exact.pmf) - float(model.alphas @ np.abs(model.coef)))
    return LogBase.parse(base).from_nats(abs(gap))
