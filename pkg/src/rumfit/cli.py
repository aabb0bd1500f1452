"""Command-line front end: fit, simulate, evaluate, compare, check, convert.

Primary reports are built to be byte-identical across reruns and thread
counts once --seed is fixed: they carry no timestamps, JSON keys are
sorted, and floats round-trip through repr.  Run provenance that cannot
be deterministic (wall time, input digests, the resolved option set)
goes into a separate manifest file, written next to --out by default.

Exit codes: 0 for success, including runs that only raise statistical
warnings such as a failed connectivity check; 2 for usage errors; 3 for
missing or malformed data; 4 for numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
import time

import numpy as np
from numpy.random import SeedSequence

from . import __version__
from .distributions import NoiseModel, ZeroMassIntervalError, sample_ranking
from .evaluate import FittedModel, ModelSpec, aic, bic, log_likelihood, model_compare
from .gibbs import GibbsConfig
from .mcem import FitConfig, fit
from .plackett_luce import pl_fit
from .prefdata import (
    ConditionViolationError,
    ParseError,
    Profile,
    check_condition1,
    parse_election_file,
    parse_profile,
    serialize_profile,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

MODEL_CHOICES = ("normal", "normal-freevar", "gumbel", "pl")

_SCHEDULE_RE = re.compile(r"^\s*(\d+)\s*(?:\+\s*(\d+)\s*\*\s*t\s*)?$")


def _read_text(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _parse_schedule(text, parser):
    match = _SCHEDULE_RE.match(text)
    if match is None:
        parser.error("--schedule must look like '2000+300*t' (or a plain constant)")
    base = int(match.group(1))
    slope = int(match.group(2) or 0)
    if base < 1:
        parser.error("schedule must start at a positive sample count")
    return lambda t: base + slope * t


def _family_of(model):
    return "normal" if model.startswith("normal") else "gumbel"


def _scale_from_var(family, var, parser):
    """Per-family scale matching a requested utility variance."""
    if var is None:
        return 1.0
    if var <= 0.0 or not math.isfinite(var):
        parser.error("--var must be positive and finite")
    if family == "normal":
        return math.sqrt(var)
    return math.sqrt(6.0 * var) / math.pi


def _cond_payload(result):
    if result.satisfied:
        return {"satisfied": True, "witness": None}
    c1, c2 = result.witness
    return {"satisfied": False, "witness": [list(c1), list(c2)]}


def _induced_order(values):
    """Descending stable order of a quality vector, as plain ints."""
    return [int(a) for a in np.argsort(-np.asarray(values, dtype=float),
                                       kind="stable")]


def _float_list(values):
    return [float(v) for v in values]


def _fit_config(args, parser, estimate_variance=False):
    """Translate shared fitting flags into a FitConfig."""
    if args.schedule is not None and args.gibbs_n is not None:
        parser.error("pass either --gibbs-n or --schedule, not both")
    if args.schedule is not None:
        schedule = _parse_schedule(args.schedule, parser)
    elif args.gibbs_n is not None:
        if args.gibbs_n < 1:
            parser.error("--gibbs-n must be positive")
        schedule = lambda t, n=args.gibbs_n: n
    else:
        schedule = _parse_schedule("2000+300*t", parser)
    if args.gibbs_m is not None and args.gibbs_m < 1:
        parser.error("--gibbs-m must be positive")
    try:
        gibbs = GibbsConfig(rb_samples=args.gibbs_m,
                            thinning=args.thin if args.thin is not None else 1.0,
                            seed=SeedSequence(args.seed))
        return FitConfig(max_iters=args.iters if args.iters is not None else 100,
                         param_tol=args.tol if args.tol is not None else 1e-3,
                         gibbs_base=gibbs,
                         sample_schedule=schedule,
                         estimate_variance=estimate_variance,
                         threads=args.threads)
    except ValueError as exc:
        parser.error(str(exc))


# ---------------------------------------------------------------------------
# Subcommands.  Each returns (primary_text, input_paths) and leaves writing
# the primary output and the manifest to main().


def cmd_fit(args, parser):
    profile = parse_profile(_read_text(args.data))
    condition = check_condition1(profile)
    report = {
        "command": "fit",
        "model": args.model,
        "m": profile.m,
        "n": profile.n,
        "names": list(profile.names) if profile.names is not None else None,
        "condition1": _cond_payload(condition),
        "seed": args.seed,
    }
    tol = args.tol if args.tol is not None else 1e-3

    if args.model == "pl":
        for flag, value in (("--gibbs-n", args.gibbs_n), ("--gibbs-m", args.gibbs_m),
                            ("--thin", args.thin), ("--schedule", args.schedule),
                            ("--var", args.var)):
            if value is not None:
                parser.error("%s does not apply to --model pl" % flag)
        try:
            params = pl_fit(profile,
                            tol=args.tol if args.tol is not None else 1e-10,
                            max_iters=args.iters if args.iters is not None else 10000)
        except ConditionViolationError as exc:
            report.update({"lam": None, "log_lam": None, "ranking": None,
                           "ranking_names": None, "tie_warning": False,
                           "converged": False, "trace": None,
                           "warnings": [str(exc)]})
            return _dump_json(report), [args.data]
        log_lam = np.log(params.lam)
        log_lam -= log_lam[0]
        order = _induced_order(params.lam)
        gaps = np.abs(log_lam[:, None] - log_lam[None, :])[np.triu_indices(profile.m, 1)]
        report.update({
            "lam": _float_list(params.lam),
            "log_lam": _float_list(log_lam),
            "ranking": order,
            "ranking_names": [profile.names[a] for a in order]
            if profile.names is not None else None,
            "tie_warning": bool(gaps.size and float(gaps.min()) < 10.0 * tol),
            "converged": True,
            "trace": None,
            "warnings": [],
        })
        return _dump_json(report), [args.data]

    family = _family_of(args.model)
    cfg = _fit_config(args, parser,
                      estimate_variance=args.model == "normal-freevar")
    scale = _scale_from_var(family, args.var, parser)
    result = fit(profile, family, cfg, scale=scale)
    order = _induced_order(result.theta)
    report.update({
        "theta": _float_list(result.theta),
        "sigma": _float_list(result.sigma) if result.sigma is not None else None,
        "scale": scale,
        "ranking": order,
        "ranking_names": [profile.names[a] for a in order]
        if profile.names is not None else None,
        "tie_warning": result.tie_warning,
        "converged": result.converged,
        "warnings": list(result.warnings),
        "trace": [{"iteration": i,
                   "n_samples": rec.n_samples,
                   "max_change": float(rec.max_change),
                   "theta": _float_list(rec.theta)}
                  for i, rec in enumerate(result.trace)],
    })
    if args.trace_csv is not None:
        with open(args.trace_csv, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "n_samples", "max_change"]
                            + ["theta_%d" % j for j in range(profile.m)])
            for i, rec in enumerate(result.trace):
                writer.writerow([i, rec.n_samples, repr(float(rec.max_change))]
                                + [repr(float(v)) for v in rec.theta])
    return _dump_json(report), [args.data]


def cmd_simulate(args, parser):
    if args.m < 1:
        parser.error("--m must be positive")
    if args.n < 1:
        parser.error("--n must be positive: cannot simulate an empty profile")
    if args.theta == "linear":
        theta = np.arange(1, args.m + 1, dtype=float)
    else:
        try:
            theta = np.array([float(tok) for tok in args.theta.split(",")])
        except ValueError:
            parser.error("--theta must be 'linear' or a comma-separated float list")
        if theta.size != args.m:
            parser.error("--theta lists %d values for --m %d" % (theta.size, args.m))
    names = None
    if args.names is not None:
        names = tuple(s.strip() for s in args.names.split(","))
        if len(names) != args.m:
            parser.error("--names lists %d names for --m %d" % (len(names), args.m))
    scale = _scale_from_var(args.family, args.var, parser)
    noise = NoiseModel(args.family, scale)
    rng = np.random.default_rng(args.seed)
    draws = [sample_ranking(theta, noise, rng) for _ in range(args.n)]
    profile = Profile(m=args.m, ballots=[(r, 1) for r in draws], names=names)
    header = (
        "rumfit %s simulate" % __version__,
        "family=%s m=%d n=%d seed=%d" % (args.family, args.m, args.n, args.seed),
        "theta=%s var=%s" % (",".join(repr(float(t)) for t in theta),
                             "default" if args.var is None else repr(args.var)),
    )
    return serialize_profile(profile, header_comments=header), []


def _model_from_report(payload, parser):
    kind = payload.get("model")
    if kind not in MODEL_CHOICES:
        raise ValueError("params file lists unknown model %r" % (kind,))
    if kind == "pl":
        if payload.get("lam") is None:
            raise ValueError("params file has no fitted worths")
        return FittedModel(kind="pl", lam=np.array(payload["lam"], dtype=float))
    if payload.get("theta") is None:
        raise ValueError("params file has no fitted locations")
    theta = np.array(payload["theta"], dtype=float)
    if payload.get("sigma") is not None:
        scale = np.array(payload["sigma"], dtype=float)
    else:
        scale = float(payload.get("scale", 1.0))
    return FittedModel(kind=kind, theta=theta, scale=scale)


def cmd_evaluate(args, parser):
    profile = parse_profile(_read_text(args.data))
    payload = json.loads(_read_text(args.params))
    model = _model_from_report(payload, parser)
    estimate = log_likelihood(profile, model, method=args.method,
                              n_draws=args.draws, seed=args.seed,
                              threads=args.threads)
    report = {
        "command": "evaluate",
        "model": model.kind,
        "method": estimate.method,
        "m": profile.m,
        "n": profile.n,
        "k": model.k,
        "ll": estimate.value,
        "ll_se": estimate.std_err,
        "ll_per_ballot": estimate.value / profile.n,
        "aic": aic(estimate.value, model.k),
        "bic": bic(estimate.value, model.k, profile.n),
        "seed": args.seed,
    }
    return _dump_json(report), [args.data, args.params]


def cmd_compare(args, parser):
    profile = parse_profile(_read_text(args.data))
    label_a, label_b = args.model_a, args.model_b
    if label_a == label_b:
        label_a += "-a"
        label_b += "-b"

    def spec_of(model, var, flag, label):
        if model == "pl" and var is not None:
            parser.error("%s does not apply to a P-L model" % flag)
        return ModelSpec(model, label=label,
                         scale=_scale_from_var(_family_of(model), var, parser))

    spec_a = spec_of(args.model_a, args.var_a, "--var-a", label_a)
    spec_b = spec_of(args.model_b, args.var_b, "--var-b", label_b)
    cfg = _fit_config(args, parser)
    report = model_compare(profile, spec_a, spec_b, holdout_size=args.holdout,
                           cfg=cfg, seed=args.seed, n_draws=args.draws,
                           threads=args.threads)
    if args.format == "text":
        return report.to_text(), [args.data]
    payload = report.to_dict()
    payload["command"] = "compare"
    payload["seed"] = args.seed
    return _dump_json(payload), [args.data]


def cmd_check(args, parser):
    profile = parse_profile(_read_text(args.data))
    result = check_condition1(profile)
    report = {
        "command": "check",
        "m": profile.m,
        "n": profile.n,
        "names": list(profile.names) if profile.names is not None else None,
    }
    report.update(_cond_payload(result))
    return _dump_json(report), [args.data]


def cmd_convert(args, parser):
    profile = parse_election_file(_read_text(args.input))
    header = ("converted from election layout: %d candidates, %d ballots"
              % (profile.m, profile.n),)
    return serialize_profile(profile, header_comments=header), [args.input]


# ---------------------------------------------------------------------------
# Parser wiring.


def _add_common(sub, threads_default=0):
    sub.add_argument("--seed", type=int, default=0,
                     help="master seed; fixes every random stream (default 0)")
    sub.add_argument("--out", default=None,
                     help="primary report path (default: stdout)")
    sub.add_argument("--manifest", default=None,
                     help="manifest path (default: <out>.manifest.json when "
                          "--out is given, else not written)")
    sub.add_argument("--threads", type=int, default=threads_default,
                     help="worker threads; 0 means all cores (default 0); "
                          "results do not depend on this")


def _add_fit_flags(sub):
    sub.add_argument("--iters", type=int, default=None,
                     help="iteration cap (EM default 100, P-L default 10000)")
    sub.add_argument("--tol", type=float, default=None,
                     help="stopping tolerance (EM default 1e-3, P-L 1e-10)")
    sub.add_argument("--gibbs-n", type=int, default=None,
                     help="fixed chain length per EM iteration "
                          "(overrides the schedule)")
    sub.add_argument("--gibbs-m", type=int, default=None,
                     help="inner samples per chain visit; omit for the exact "
                          "conditional-mean (Rao-Blackwell) limit")
    sub.add_argument("--thin", type=float, default=None,
                     help="fraction of scans retained, in (0, 1] (default 1)")
    sub.add_argument("--schedule", default=None,
                     help="chain-length schedule 'a+b*t' over EM iterations t "
                          "(default '2000+300*t')")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="rumfit",
        description="Fit and compare random utility models on ranking data.")
    parser.add_argument("--version", action="version",
                        version="rumfit %s" % __version__)
    subs = parser.add_subparsers(dest="cmd", required=True, metavar="command")

    p_fit = subs.add_parser("fit", help="fit one model to a ballot file")
    p_fit.add_argument("data", help="ballot file")
    p_fit.add_argument("--model", choices=MODEL_CHOICES, required=True)
    p_fit.add_argument("--var", type=float, default=None,
                       help="utility variance fixing the noise scale "
                            "(EM models only; default: scale 1)")
    p_fit.add_argument("--trace-csv", default=None,
                       help="write the EM trace as CSV for plotting")
    _add_fit_flags(p_fit)
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = subs.add_parser("simulate", help="draw a synthetic profile from a RUM")
    p_sim.add_argument("--m", type=int, required=True, help="number of alternatives")
    p_sim.add_argument("--n", type=int, required=True, help="number of rankings")
    p_sim.add_argument("--theta", default="linear",
                       help="'linear' for 1..m or a comma-separated list")
    p_sim.add_argument("--family", choices=("normal", "gumbel"), default="normal")
    p_sim.add_argument("--var", type=float, default=None,
                       help="utility variance (default: scale 1)")
    p_sim.add_argument("--names", default=None,
                       help="comma-separated alternative names")
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = subs.add_parser("evaluate",
                             help="log-likelihood of a fit report on a ballot file")
    p_eval.add_argument("data", help="ballot file")
    p_eval.add_argument("--params", required=True,
                        help="fit report (JSON) holding the parameters")
    p_eval.add_argument("--method",
                        choices=("auto", "closed", "quadrature", "sis"),
                        default="auto")
    p_eval.add_argument("--draws", type=int, default=2000,
                        help="samples per ballot for the sis method")
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = subs.add_parser("compare",
                            help="fit two models on a train split and compare")
    p_cmp.add_argument("data", help="ballot file")
    p_cmp.add_argument("--model-a", choices=MODEL_CHOICES, required=True)
    p_cmp.add_argument("--model-b", choices=MODEL_CHOICES, required=True)
    p_cmp.add_argument("--var-a", type=float, default=None,
                       help="fixed utility variance for model a")
    p_cmp.add_argument("--var-b", type=float, default=None,
                       help="fixed utility variance for model b")
    p_cmp.add_argument("--holdout", type=int, default=100,
                       help="holdout ballots for predictive LL (default 100)")
    p_cmp.add_argument("--draws", type=int, default=2000,
                       help="samples per ballot for sis likelihoods")
    p_cmp.add_argument("--format", choices=("json", "text"), default="json")
    _add_fit_flags(p_cmp)
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_chk = subs.add_parser("check",
                            help="connectivity (bounded-MLE) check of a ballot file")
    p_chk.add_argument("data", help="ballot file")
    _add_common(p_chk)
    p_chk.set_defaults(func=cmd_check)

    p_cnv = subs.add_parser("convert",
                            help="convert an election-layout file to the ballot format")
    p_cnv.add_argument("input", help="election-layout file")
    _add_common(p_cnv)
    p_cnv.set_defaults(func=cmd_convert)

    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.threads == 0:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        parser.error("--threads must be 0 (all cores) or positive")
    started = time.perf_counter()
    try:
        primary, inputs = args.func(args, parser)
    except ZeroMassIntervalError as exc:
        print("rumfit: numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except ArithmeticError as exc:
        print("rumfit: numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, ConditionViolationError, OSError, ValueError,
            json.JSONDecodeError) as exc:
        print("rumfit: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    _emit(primary, args.out)

    manifest_path = args.manifest
    if manifest_path is None and args.out is not None:
        manifest_path = args.out + ".manifest.json"
    if manifest_path is not None:
        options = {k: v for k, v in vars(args).items() if k != "func"}
        manifest = {
            "command": args.cmd,
            "options": options,
            "version": __version__,
            "inputs": {path: _sha256(path) for path in inputs},
            "wall_time_s": round(time.perf_counter() - started, 6),
        }
        _emit(_dump_json(manifest), manifest_path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
