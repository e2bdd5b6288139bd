"""Command-line driver: gen, fit, audit, oracle and report.

Exit codes: 0 success / audit pass, 1 usage or I/O problem, 2 optimizer
non-convergence, 3 audit failure. Every subcommand accepts ``--config
FILE.toml``; keys are the long option names (dashes or underscores) and
flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import attribution, gibbs, partition, synth
from .data import PairData
from .errors import MgklError, NonConvergence
from .prob import (DiscreteDistribution, LogBase, SampleSet, TableWeight, chain_rule_decompose,
                   infinity_norm, kl_exact, kl_nats, log_weight_expectation, nwj_lower_bound)
from .subpop import FamilyLearner, SubpopulationFamily, make_learner

logger = logging.getLogger("mgkl")

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGENCE, EXIT_AUDIT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- file helpers ------------------------------------------------------------

def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(attribution._jsonable(obj), sort_keys=True, indent=1) + "\n"


def write_json(path, obj):
    atomic_write(path, dump_json(obj))


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"missing file: {path}")
    with open(path) as fh:
        return json.load(fh)


def _write_samples(path, s: SampleSet):
    with tempfile.TemporaryDirectory() as tmp:
        s.to_csv(Path(tmp) / "x.csv")
        atomic_write(path, (Path(tmp) / "x.csv").read_text())


def load_data(directory):
    """(PairData, family, meta) from a directory written by ``gen``."""
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {d}")
    meta = read_json(d / "meta.json")
    family = SubpopulationFamily.from_json(read_json(d / "family.json"))
    if meta.get("mode") == "exact":
        p = DiscreteDistribution.from_json(read_json(d / "p.json"))
        r = DiscreteDistribution.from_json(read_json(d / "r.json"))
        return PairData.from_exact(p, r), family, meta
    for name in ("p.csv", "r.csv"):
        if not (d / name).is_file():
            raise UsageError(f"missing file: {d / name}")
    p = SampleSet.from_csv(d / "p.csv", "P", meta.get("seed", 0))
    r = SampleSet.from_csv(d / "r.csv", "R", meta.get("seed", 0))
    return PairData.from_samples(p, r), family, meta


def load_model(path):
    obj = read_json(path)
    if "layers" in obj:
        return partition.reweighting(partition.Partition.from_json(obj)), "mc"
    if "features" in obj:
        return gibbs.GibbsModel.from_json(obj), "llkliep"
    raise UsageError(f"{path}: neither a partition nor a Gibbs model")


# -- gen ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    out = Path(args.out)
    base = LogBase.parse(args.base)
    if args.kind == "mixture":
        spec = synth.MixtureSpec(k=args.k, d=args.d, n=args.n, seed=args.seed, shift=args.shift)
        p, r, family = synth.gaussian_mixture_pair(spec)
        meta = {"mode": "sample", "kind": "mixture", "seed": args.seed, "spec": asdict(spec),
                "target": synth.shifted_gaussian_kl(spec.shift_vector, base)}
    elif args.kind == "bias":
        if args.corpus:
            corpus = synth.LabeledCorpus.from_csv(args.corpus)
        else:
            corpus = synth.synthetic_parity_corpus(seed=args.seed)
        spec = synth.BiasSpec(args.delta, corpus, n=args.n, seed=args.seed)
        p, r, family = synth.parity_bias_pair(spec)
        meta = {"mode": "sample", "kind": "bias", "seed": args.seed, "delta": args.delta, "n": args.n,
                "corpus": args.corpus, "target": synth.parity_target(args.delta, base)}
    elif args.kind == "gap1":
        inst = synth.gap1_instance()
        meta = {"mode": "exact", "kind": "gap1", "seed": 0, "expected": inst.expected,
                "target": kl_exact(inst.r, inst.p, base)}
    else:
        inst = synth.random_exact_instance(args.domain_size, args.features, args.seed)
        meta = {"mode": "exact", "kind": "random", "seed": args.seed,
                "domain_size": args.domain_size, "target": kl_exact(inst.r, inst.p, base)}
    meta["base"] = base.value
    if meta["mode"] == "exact":
        write_json(out / "p.json", inst.p.to_json())
        write_json(out / "r.json", inst.r.to_json())
        family = inst.family
    else:
        _write_samples(out / "p.csv", p)
        _write_samples(out / "r.csv", r)
    write_json(out / "family.json", family.to_json())
    write_json(out / "meta.json", meta)
    print(f"wrote {out} (target {meta['target']:.4f} {base.value})")
    return EXIT_OK


# -- fit ---------------------------------------------------------------------

def _learner(args, data, family):
    name = args.learner or ("family" if data.exact else "dt1")
    return name, make_learner(name, family)


def cmd_fit(args) -> int:
    data, family, meta = load_data(args.data)
    out = Path(args.out)
    base = LogBase.parse(args.base)
    name, learner = _learner(args, data, family)
    log = {"estimator": args.estimator, "learner": name, "data": str(args.data)}
    code = EXIT_OK
    if args.estimator == "mc":
        params = partition.McParams(max_width=args.max_width, advantage_threshold=args.advantage_threshold,
                                    max_rounds=args.max_rounds, holdout=args.holdout)
        part = partition.build_partition(data, learner=learner, params=params, seed=args.seed)
        write_json(out / "partition.json", part.to_json())
        w = partition.reweighting(part)
        log.update(params=asdict(params), rounds=part.log, states=part.n_states)
    else:
        exact_defaults = (1.0, 100000, 1e-10) if data.exact else (0.02, 5000, 1e-7)
        params = gibbs.FitParams(
            alpha=args.alpha,
            learning_rate=args.learning_rate if args.learning_rate is not None else exact_defaults[0],
            max_iters=args.max_iters if args.max_iters is not None else exact_defaults[1],
            grad_tol=args.grad_tol if args.grad_tol is not None else exact_defaults[2],
            boosting_mode=name != "family",
            advantage_threshold=args.advantage_threshold)
        fam = family if name == "family" else SubpopulationFamily(learner=learner)
        try:
            w = gibbs.fit(data, family=fam, params=params)
        except NonConvergence as exc:
            w = exc.model
            log["error"] = str(exc)
            code = EXIT_NONCONVERGENCE
        write_json(out / "gibbs.json", w.to_json())
        log.update(params=asdict(params), iterations=w.iterations, converged=w.converged,
                   features=len(w.features), trace=[base.from_nats(t) for t in w.trace])
    lower, gq = attribution.global_estimates(w, data, base)
    log.update(base=base.value, lower_bound_r=lower, gibbs_style_q=gq, target=meta.get("target"))
    write_json(out / "fit_log.json", log)
    print(f"{args.estimator}/{name}: E_R[log w] = {lower:.4f}, E_Q[log w] = {gq:.4f} {base.value}")
    if code == EXIT_NONCONVERGENCE:
        print(f"error: {log['error']}", file=sys.stderr)
    return code


# -- audit -------------------------------------------------------------------

def cmd_audit(args) -> int:
    data, family, _ = load_data(args.data)
    w, kind = load_model(args.model)
    base = LogBase.parse(args.base)
    boot = args.bootstrap if args.bootstrap is not None else (0 if data.exact else 200)
    report = attribution.audit(w, data, family, args.alpha, args.beta, args.mass_floor, base,
                               bootstrap=boot, seed=args.seed)
    sandwich = attribution.sandwich_check(w, data, family, args.alpha, args.beta, base)
    obj = report.to_json()
    obj["model"] = kind
    obj["sandwich"] = [asdict(s) for s in sandwich]
    out = Path(args.out)
    write_json(out / "report.json", obj)
    atomic_write(out / "report.csv", report.to_csv())
    print(_table(report_rows(obj)))
    print(f"E_R[log w] = {report.lower_bound_r:.4f}  E_Q[log w] = {report.gibbs_style_q:.4f} {base.value}")
    if report.passed:
        print("audit: PASS")
        return EXIT_OK
    print(f"audit: FAIL (worst {report.worst_c})")
    return EXIT_AUDIT


# -- oracle ------------------------------------------------------------------

def _oracle_checks(p, r, family, base):
    """Yield (property, ok, detail) for the invariant suite on one exact instance."""
    data = PairData.from_exact(p, r)
    kl = kl_exact(r, p, base)
    w_star = TableWeight.ratio(r, p)
    for c in family:
        try:
            marg, cond_c, cond_cbar = chain_rule_decompose(r, p, c, base)
        except MgklError:
            continue
        total = marg + cond_c + cond_cbar
        yield f"chain rule [{c.name}]", abs(total - kl) <= 1e-9, f"{total:.9f} vs {kl:.9f}"

    rng = np.random.default_rng(0)
    worst_lb, worst_nwj = -math.inf, -math.inf
    for _ in range(50):
        vals = rng.uniform(0.05, 5.0, p.domain_size)
        w_un = TableWeight(p.points, vals)
        w_n = TableWeight(p.points, vals / float(p.pmf @ vals))
        worst_lb = max(worst_lb, log_weight_expectation(w_n, r, base) - kl)
        worst_nwj = max(worst_nwj, nwj_lower_bound(w_un, r, p, base) - kl)
    yield "lower bound: E_R[log w] <= KL", worst_lb <= 1e-9, f"max excess {worst_lb:.3g}"
    yield "NWJ bound <= KL", worst_nwj <= 1e-9, f"max excess {worst_nwj:.3g}"
    if np.all(w_star(p.points) > 0):
        eq = abs(nwj_lower_bound(w_star, r, p, base) - kl)
        yield "NWJ tight at w*", eq <= 1e-9, f"gap {eq:.3g}"

    model = gibbs.fit(data, family=family, params=gibbs.FitParams(
        alpha=0.0, learning_rate=1.0, max_iters=100000, grad_tol=1e-10, strict=False))
    kkt = gibbs.kkt_check(model, data, tol=1e-6)
    yield "KKT certificate (alpha=0)", kkt.ok, f"max gap {kkt.max_ineq_violation:.3g}"
    pyth = gibbs.pythagorean_gibbs_check(model, p, r, base)
    yield "global Pythagorean identity", pyth <= 1e-5, f"residual {pyth:.3g}"
    q = gibbs.gibbs_distribution(model, p)
    for c in family:
        if r.mass(c) <= 0 or q.mass(c) <= 0:
            continue
        est_q = attribution.estimator_conditional_q(model, data, c, base)
        kls = attribution.exact_conditional_kls(model, data, c)
        ref = base.from_nats(kls["kl_qp"])
        yield f"estimator equals KL(Q|C||P|C) [{c.name}]", abs(est_q - ref) <= 1e-9, f"{est_q:.9f}"

    part = partition.build_partition(data, learner=FamilyLearner(family.members))
    w = partition.reweighting(part)
    rep = partition.mcab_audit(part, data, family=family)
    a = rep.alpha_hat
    try:
        log_norm = base.from_nats(math.log(infinity_norm(w, p).value))
    except MgklError:  # w = 0 on a state R never visits: the bound is vacuous unless a = 0
        log_norm = math.inf
    for c in family:
        rc = r.mass(c)
        if rc < 0.05:
            continue
        res = attribution.pythagorean_residual(w, data, c, base)
        bound = 2 * a * log_norm / rc if a > 0 else 0.0
        yield f"multicalibration bound [{c.name}]", res <= bound + 1e-9, f"{res:.3g} <= {bound:.3g}"
    yield "identity: KL(P||P) = 0", kl_exact(p, p, base) == 0.0 and kl_nats(r.pmf, r.pmf) == 0.0, ""

    report = attribution.audit(model, data, family, 0.0, 0.0, base=base)
    for row in report.rows:
        if "skipped" not in row.flags and not row.pythagorean_ok:
            yield f"FLAG Gibbs fit violates conditional Pythagorean [{row.name}]", None, \
                f"residual {row.pyth_residual:.6f}"


def cmd_oracle(args) -> int:
    base = LogBase.parse(args.base)
    if args.instance == "gap1":
        p, r, family = synth.gap1_instance()
    elif args.instance == "identity":
        p, _, family = synth.random_exact_instance(args.domain_size, args.features, args.seed)
        r = p
    else:
        p, r, family = synth.random_exact_instance(args.domain_size, args.features, args.seed)
    failed = 0
    for prop, ok, detail in _oracle_checks(p, r, family, base):
        tag = "FLAG" if ok is None else ("PASS" if ok else "FAIL")
        name = prop[5:] if prop.startswith("FLAG ") else prop
        print(f"{tag}  {name}  {detail}".rstrip())
        failed += ok is False
    print(f"oracle: {'PASS' if not failed else f'{failed} FAILED'}")
    return EXIT_OK if not failed else EXIT_AUDIT


# -- report ------------------------------------------------------------------

def report_rows(obj) -> list[dict]:
    rows = []
    for r in obj["rows"]:
        row = {col: r.get(col) for col in attribution.REPORT_COLUMNS}
        row["flags"] = ";".join(r.get("flags") or [])
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _table(rows) -> str:
    cols = attribution.REPORT_COLUMNS
    cells = [cols] + [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(line[i]) for line in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(wd) for v, wd in zip(line, widths)).rstrip() for line in cells)


def cmd_report(args) -> int:
    obj = read_json(args.report)
    if "rows" not in obj:
        raise UsageError(f"{args.report}: not an attribution report")
    rows = report_rows(obj)
    if args.format == "table":
        text = _table(rows) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=attribution.REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in r.items()})
        text = buf.getvalue()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mgkl", description="KL divergence estimation with multi-group attribution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML file with option defaults")
        p.add_argument("--base", default="two", help="log base for reported values: two or natural")
        p.add_argument("--seed", type=int, default=0)

    g = sub.add_parser("gen", help="generate an instance")
    g.add_argument("kind", choices=["mixture", "bias", "gap1", "random"])
    g.add_argument("--out", required=True)
    g.add_argument("--k", type=int, default=5)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--n", type=int, default=30000)
    g.add_argument("--shift", type=float, default=2.5)
    g.add_argument("--delta", type=float, default=0.9)
    g.add_argument("--corpus", help="labeled CSV (label[,class],f0,...); synthetic if omitted")
    g.add_argument("--domain-size", type=int, default=8)
    g.add_argument("--features", type=int, default=4)
    common(g)

    f = sub.add_parser("fit", help="fit importance weights")
    f.add_argument("--data", required=True, help="directory written by gen")
    f.add_argument("--out", required=True)
    f.add_argument("--estimator", choices=["mc", "llkliep"], default="mc")
    f.add_argument("--learner", choices=["dt1", "tree5", "family"])
    f.add_argument("--max-width", type=int, default=60)
    f.add_argument("--advantage-threshold", type=float, default=0.02)
    f.add_argument("--max-rounds", type=int, default=40)
    f.add_argument("--holdout", type=float, default=0.0)
    f.add_argument("--alpha", type=float, default=0.0)
    f.add_argument("--learning-rate", type=float)
    f.add_argument("--max-iters", type=int)
    f.add_argument("--grad-tol", type=float)
    common(f)

    a = sub.add_parser("audit", help="multi-group attribution audit")
    a.add_argument("--data", required=True)
    a.add_argument("--model", required=True, help="partition.json or gibbs.json")
    a.add_argument("--out", required=True)
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--beta", type=float, default=0.05)
    a.add_argument("--mass-floor", type=float)
    a.add_argument("--bootstrap", type=int, help="resamples for standard errors (default 200 on samples, 0 exact)")
    common(a)

    o = sub.add_parser("oracle", help="run the invariant suite on an exact instance")
    o.add_argument("--instance", choices=["gap1", "random", "identity"], default="gap1")
    o.add_argument("--domain-size", type=int, default=8)
    o.add_argument("--features", type=int, default=4)
    common(o)

    r = sub.add_parser("report", help="flatten a report.json")
    r.add_argument("report")
    r.add_argument("--format", choices=["csv", "table"], default="table")
    r.add_argument("--out")
    common(r)
    return parser


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "audit": cmd_audit, "oracle": cmd_oracle, "report": cmd_report}


def _apply_config(parser, sub_parser, argv, args):
    """Re-parse with TOML values as defaults so explicit flags still win."""
    cfg = Path(args.config)
    if not cfg.is_file():
        raise UsageError(f"missing config file: {cfg}")
    with open(cfg, "rb") as fh:
        try:
            values = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{cfg}: {exc}") from exc
    known = {a.dest for a in sub_parser._actions} - {"help", "config"}
    prefill = argparse.Namespace()
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"{cfg}: unknown key {key!r}")
        setattr(prefill, dest, value)
    # subparsers copy their own defaults over the outer namespace, so parse
    # the subcommand's arguments directly
    start = next(i for i, tok in enumerate(argv) if tok == args.command) + 1
    new = sub_parser.parse_args(argv[start:], namespace=prefill)
    new.command, new.verbose = args.command, args.verbose
    return new


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        if args.config:
            sub_parser = parser._subparsers._group_actions[0].choices[args.command]
            args = _apply_config(parser, sub_parser, argv, args)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, ValueError, KeyError, MgklError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
