"""Per-sub-population divergence estimators and attribution audits.

Q-side quantities are w-weighted P-side sums; nothing is ever sampled from Q.
All logs are natural internally and converted to the requested base on the
way out. The slack terms alpha/R(C) and alpha/(R(C)-alpha) come from
log(1+x) <= x in nats, so they are converted along with everything else.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import PairData
from .errors import AbsoluteContinuityViolation, EmptyConditioningSet, NonPositiveWeight
from .prob import LogBase, kl_nats, safe_log

# near-ties for the worst violator go to family order; optimizer noise is ~1e-8
WORST_TIE = 1e-6

REPORT_COLUMNS = ["name", "q_mass", "r_mass", "est_q", "est_r", "pyth_residual",
                  "sandwich_lo", "sandwich_hi", "flags"]


class _Eval:
    """Cached per-point arrays for one weight function on one data set."""

    def __init__(self, w, data: PairData):
        self.data = data
        self.wp = np.asarray(w(data.p_x), dtype=float)
        self.wr = np.asarray(w(data.r_x), dtype=float)
        if np.any(self.wp < 0):
            raise NonPositiveWeight("negative importance weight")
        self.qm = data.p_m * self.wp
        with np.errstate(divide="ignore"):
            self.q_logw = np.where(self.qm > 0, self.qm * np.log(np.where(self.wp > 0, self.wp, 1.0)), 0.0)
        self._logwr = None
        self.w = w

    @property
    def logwr(self):
        if self._logwr is None:
            self._logwr = safe_log(self.wr)
        return self._logwr

    def masks(self, c):
        return (np.asarray(c(self.data.p_x), dtype=bool), np.asarray(c(self.data.r_x), dtype=bool))


def _coerce(data):
    if isinstance(data, PairData):
        return data
    return PairData.coerce(*data)


def _est_q_nats(ev: _Eval, cp):
    qc = float(ev.qm[cp].sum())
    pc = float(ev.data.p_m[cp].sum())
    if qc <= 0 or pc <= 0:
        raise EmptyConditioningSet("Q(C) or P(C) is zero")
    return float(ev.q_logw[cp].sum()) / qc + math.log(pc / qc)


def _est_r_nats(ev: _Eval, cp, cr):
    qc = float(ev.qm[cp].sum())
    pc = float(ev.data.p_m[cp].sum())
    rc = float(ev.data.r_m[cr].sum())
    if qc <= 0 or pc <= 0 or rc <= 0:
        raise EmptyConditioningSet("R(C), Q(C) or P(C) is zero")
    wr = ev.wr[cr]
    if np.any(wr <= 0):
        raise NonPositiveWeight("w vanishes on part of R|C")
    return float(ev.data.r_m[cr] @ np.log(wr)) / rc + math.log(pc / qc)


def estimator_conditional_q(w, data, c, base=LogBase.TWO) -> float:
    """E_{Q|C}[log w] + log(P(C)/Q(C)); equals KL(Q|C || P|C)."""
    ev = _Eval(w, _coerce(data))
    cp, _ = ev.masks(c)
    return LogBase.parse(base).from_nats(_est_q_nats(ev, cp))


def estimator_conditional_r(w, data, c, base=LogBase.TWO) -> float:
    """E_{R|C}[log w] + log(P(C)/Q(C)); equals KL(R|C||P|C) - KL(R|C||Q|C)."""
    ev = _Eval(w, _coerce(data))
    cp, cr = ev.masks(c)
    return LogBase.parse(base).from_nats(_est_r_nats(ev, cp, cr))


def pythagorean_residual(w, data, c, base=LogBase.TWO) -> float:
    ev = _Eval(w, _coerce(data))
    cp, cr = ev.masks(c)
    return LogBase.parse(base).from_nats(abs(_est_q_nats(ev, cp) - _est_r_nats(ev, cp, cr)))


def global_estimates(w, data, base=LogBase.TWO) -> tuple[float, float]:
    """(E_R[log w], E_Q[log w]): a lower bound on KL(R||P), and KL(Q||P)."""
    ev = _Eval(w, _coerce(data))
    base = LogBase.parse(base)
    lower = float(ev.data.r_m @ ev.logwr)
    return base.from_nats(lower), base.from_nats(float(ev.q_logw.sum()))


def _kl_or_inf(a, b):
    try:
        return kl_nats(a, b)
    except AbsoluteContinuityViolation:
        return math.inf


def exact_conditional_kls(w, data: PairData, c) -> dict:
    """KL(R|C||P|C), KL(Q|C||P|C), KL(R|C||Q|C) in nats by direct summation."""
    pts = data.p_dist.points
    mask = np.asarray(c(pts), dtype=bool)
    p = np.where(mask, data.p_dist.pmf, 0.0)
    r = np.where(mask, data.r_dist.pmf, 0.0)
    q = p * np.asarray(w(pts), dtype=float)
    if p.sum() <= 0 or r.sum() <= 0 or q.sum() <= 0:
        raise EmptyConditioningSet("conditioning set has zero mass")
    p, r, q = p / p.sum(), r / r.sum(), q / q.sum()
    return {"kl_rp": kl_nats(r, p), "kl_qp": kl_nats(q, p), "kl_rq": _kl_or_inf(r, q)}


def _true_log_ratio_r(data: PairData, cr):
    """E_{R|C}[log w*] on exact data."""
    pts = data.r_x[cr]
    # R-support points index back into the domain
    lookup = {row.tobytes(): i for i, row in enumerate(data.p_dist.points)}
    idx = [lookup[row.tobytes()] for row in pts]
    p = data.p_dist.pmf[idx]
    r = data.r_dist.pmf[idx]
    if np.any(p <= 0):
        raise AbsoluteContinuityViolation("R puts mass where P has none")
    return float(r @ np.log(r / p) / r.sum())


@dataclass
class AttributionRow:
    name: str
    p_mass: float
    q_mass: float
    r_mass: float
    est_q: float | None = None
    est_r: float | None = None
    pyth_residual: float | None = None
    multiaccuracy_gap: float | None = None
    kl_rp: float | None = None
    kl_qp: float | None = None
    kl_rq: float | None = None
    soundness_slack: float | None = None
    improvement_slack: float | None = None
    sandwich_lo: float | None = None
    sandwich_hi: float | None = None
    se_q: float | None = None
    se_r: float | None = None
    multiaccuracy_ok: bool | None = None
    pythagorean_ok: bool | None = None
    excess: float = -math.inf
    flags: list = field(default_factory=list)

    @property
    def passed(self):
        return "skipped" in self.flags or bool(self.multiaccuracy_ok and self.pythagorean_ok)


@dataclass
class AttributionReport:
    rows: list
    alpha: float
    beta: float
    mass_floor: float
    base: str
    passed: bool
    worst_c: str | None
    lower_bound_r: float
    gibbs_style_q: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["rows"] = [_jsonable(asdict(r)) for r in self.rows]
        return _jsonable(d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in self.rows:
            vals = []
            for col in REPORT_COLUMNS:
                v = getattr(r, col)
                if col == "flags":
                    vals.append(";".join(v))
                elif v is None:
                    vals.append("")
                else:
                    vals.append(repr(float(v)) if not isinstance(v, str) else v)
            writer.writerow(vals)
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def _bootstrap(ev: _Eval, cp, cr, counts_p, counts_r):
    """Std errors of (est_q, est_r) in nats from multinomial resample counts."""
    wts_p = counts_p / counts_p.sum(axis=1, keepdims=True)
    wts_r = counts_r / counts_r.sum(axis=1, keepdims=True)
    pc = wts_p[:, cp].sum(axis=1)
    qc = wts_p[:, cp] @ ev.wp[cp]
    rc = wts_r[:, cr].sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        eq_log = wts_p[:, cp] @ np.where(ev.wp[cp] > 0, ev.wp[cp] * np.log(np.where(ev.wp[cp] > 0, ev.wp[cp], 1)), 0)
        est_q = eq_log / qc + np.log(pc / qc)
        est_r = (wts_r[:, cr] @ np.log(ev.wr[cr])) / rc + np.log(pc / qc)
    ok = np.isfinite(est_q) & np.isfinite(est_r)
    if ok.sum() < 2:
        return None, None
    return float(np.std(est_q[ok], ddof=1)), float(np.std(est_r[ok], ddof=1))


def audit(w, data, family, alpha: float, beta: float, mass_floor: float | None = None,
          base=LogBase.TWO, tol: float = 1e-9, bootstrap: int = 0, seed: int = 0) -> AttributionReport:
    """Check (alpha, beta) multi-group attribution over an explicit family.

    Sets with R(C) below `mass_floor` (default alpha) are reported but do
    not count toward pass/fail. `beta` is in units of `base`.
    """
    data = _coerce(data)
    base = LogBase.parse(base)
    floor = alpha if mass_floor is None else mass_floor
    beta_nats = base.to_nats(beta)
    ev = _Eval(w, data)
    counts = None
    if bootstrap and not data.exact:
        rng = np.random.default_rng(seed)
        counts = (rng.multinomial(len(data.p_m), data.p_m, size=bootstrap),
                  rng.multinomial(len(data.r_m), data.r_m, size=bootstrap))
    rows = []
    for c in family:
        cp, cr = ev.masks(c)
        pc, qc, rc = float(data.p_m[cp].sum()), float(ev.qm[cp].sum()), float(data.r_m[cr].sum())
        row = AttributionRow(c.name, pc, qc, rc)
        row.multiaccuracy_gap = abs(qc - rc)
        if rc <= 0 or rc < floor:
            row.flags.append("skipped")
        if pc > 0 and qc > 0:
            row.est_q = base.from_nats(_est_q_nats(ev, cp))
        if pc > 0 and qc > 0 and rc > 0:
            try:
                er = _est_r_nats(ev, cp, cr)
                row.est_r = base.from_nats(er)
                row.pyth_residual = abs(row.est_q - row.est_r)
            except NonPositiveWeight:
                row.flags.append("w_zero_on_R")
                row.pyth_residual = math.inf
            row.sandwich_lo = base.from_nats(math.log(rc / pc))
        elif rc > 0:
            row.flags.append("empty_q_or_p")
            row.pyth_residual = math.inf
        if data.exact and rc > 0 and pc > 0:
            kls = exact_conditional_kls(w, data, c) if qc > 0 else None
            if kls is not None:
                row.kl_rp = base.from_nats(kls["kl_rp"])
                row.kl_qp = base.from_nats(kls["kl_qp"])
                row.kl_rq = base.from_nats(kls["kl_rq"])
                row.soundness_slack = row.kl_rp - row.kl_qp
                row.improvement_slack = row.kl_rp - row.kl_rq
            row.sandwich_hi = base.from_nats(_true_log_ratio_r(data, cr))
        if counts is not None and row.est_r is not None:
            se_q, se_r = _bootstrap(ev, cp, cr, *counts)
            row.se_q = None if se_q is None else base.from_nats(se_q)
            row.se_r = None if se_r is None else base.from_nats(se_r)
        row.multiaccuracy_ok = row.multiaccuracy_gap <= alpha + tol
        if rc > 0 and row.pyth_residual is not None:
            allowed = base.from_nats(beta_nats / rc)
            row.pythagorean_ok = row.pyth_residual <= allowed + tol
            row.excess = max(row.multiaccuracy_gap - alpha, row.pyth_residual - allowed)
        else:
            row.pythagorean_ok = "skipped" in row.flags
            row.excess = row.multiaccuracy_gap - alpha
        rows.append(row)

    counted = [r for r in rows if "skipped" not in r.flags]
    passed = all(r.passed for r in counted)
    worst = None
    if counted:
        top = max(r.excess for r in counted)
        worst = next(r.name for r in counted if r.excess >= top - WORST_TIE)
    lower, gq = global_estimates(w, data, base)
    return AttributionReport(rows, alpha, beta, floor, base.value, passed, worst, lower, gq)


@dataclass
class SandwichRow:
    name: str
    lower: float | None
    middle: float | None
    upper: float | None
    lower_ok: bool | None
    upper_ok: bool | None
    lower_margin: float | None
    upper_margin: float | None
    flags: list = field(default_factory=list)


def sandwich_check(w, data, family, alpha: float, beta: float, base=LogBase.TWO,
                   tol: float = 1e-9) -> list[SandwichRow]:
    """log(R(C)/P(C)) - beta/R(C) - alpha/(R(C)-alpha) <= E_{R|C}[log w] <= E_{R|C}[log w*] + alpha/R(C).

    The upper side needs the true ratio and is only checked in exact mode.
    Sets with R(C) <= alpha are skipped and flagged.
    """
    data = _coerce(data)
    base = LogBase.parse(base)
    beta_nats = base.to_nats(beta)
    ev = _Eval(w, data)
    out = []
    for c in family:
        cp, cr = ev.masks(c)
        pc, rc = float(data.p_m[cp].sum()), float(data.r_m[cr].sum())
        if rc <= alpha or rc <= 0:
            out.append(SandwichRow(c.name, None, None, None, None, None, None, None, ["mass_too_small"]))
            continue
        wr = ev.wr[cr]
        if np.any(wr <= 0):
            out.append(SandwichRow(c.name, None, -math.inf, None, False, None, None, None, ["w_zero_on_R"]))
            continue
        middle = float(data.r_m[cr] @ np.log(wr)) / rc
        lower = math.log(rc / pc) - beta_nats / rc - alpha / (rc - alpha)
        row = SandwichRow(c.name, base.from_nats(lower), base.from_nats(middle), None,
                          middle >= lower - tol, None, base.from_nats(middle - lower), None)
        if data.exact:
            upper = _true_log_ratio_r(data, cr) + alpha / rc
            row.upper = base.from_nats(upper)
            row.upper_ok = middle <= upper + tol
            row.upper_margin = base.from_nats(upper - middle)
        out.append(row)
    return out
