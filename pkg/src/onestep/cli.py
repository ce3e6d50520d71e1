"""Command-line front end: ``onestep {correct,simulate,dpmm-fit,nuisance-fit}``.

Every command validates all inputs before touching the output directory and
writes each file atomically. Exit status is 0 on success, 2 for invalid
input or configuration and 3 for numerical failures.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dpmm, functionals, nuisance, simharness
from .bayes_bootstrap import (
    MASK64,
    ROLE_CORRECTION,
    ROLE_DPMM,
    RngStream,
    load_influence_csv,
    one_step_posterior,
)
from .core import (
    CorrectedDraws,
    atomic_write_text,
    csv_text,
    fingerprint,
    format_float,
    load_causal_csv,
    load_univariate_csv,
    read_csv_table,
    summarize,
)
from .errors import ConfigError, InputError, NumericError, OnestepError, ParseError

log = logging.getLogger("onestep")

_LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

# nuisance-fit output file per target
NUISANCE_FILES = {"pi": "pi.csv", "m": "m.csv", "mu0": "mu0.csv", "mu1": "mu1.csv"}


def _seed(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, required=True, help="root seed (unsigned 64-bit)")
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--config", help="JSON file whose keys override command-line flags")

    parser = argparse.ArgumentParser(prog="onestep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("correct", parents=[common], help="one-step corrected posterior draws")
    p.add_argument("--functional", choices=functionals.FUNCTIONALS)
    p.add_argument("--data", required=False)
    p.add_argument("--influence", help="InfluenceMatrix CSV (plugin,psi_1..psi_n)")
    p.add_argument("--mixture", help="mixture draws CSV from dpmm-fit (isd)")
    p.add_argument("--pi")
    p.add_argument("--m")
    p.add_argument("--mu0")
    p.add_argument("--mu1")
    p.add_argument("--g-column", dest="g_column")
    p.add_argument("--draws", type=_positive_int, default=1000, help="B for the linear functional")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--positivity-floor", dest="positivity_floor", type=float,
                   default=functionals.DEFAULT_FLOOR)
    p.add_argument("--clip", action="store_true", help="floor propensities instead of failing")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo coverage study")
    p.add_argument("--scenario", choices=simharness.SCENARIOS, default="laplace_isd")
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--reps", type=_positive_int, default=200)
    p.add_argument("--draws", type=_positive_int, default=2000)
    p.add_argument("--methods", choices=simharness.METHODS, default="both")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--misspecify", choices=("none", "outcome", "propensity"), default="none")
    p.add_argument("--heterogeneous", action="store_true")
    p.add_argument("--tau0", type=float, default=2.0)
    p.add_argument("--learner", choices=("s", "t"), default="s")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=2000)
    p.add_argument("--thin", type=_positive_int, default=1)
    p.add_argument("--truncation", type=_positive_int, default=30)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--base-sd", dest="base_sd", type=float, default=1.0)
    p.add_argument("--per-replicate", dest="per_replicate", action="store_true",
                   help="include per-replicate summaries in JSON output")

    p = sub.add_parser("dpmm-fit", parents=[common], help="DP Gaussian mixture posterior draws")
    p.add_argument("--data", required=False)
    p.add_argument("--column", default="z")
    p.add_argument("--draws", type=_positive_int, default=2000)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=2000)
    p.add_argument("--thin", type=_positive_int, default=1)
    p.add_argument("--truncation", type=_positive_int, default=30)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--base-mean", dest="base_mean", type=float, default=0.0)
    p.add_argument("--base-sd", dest="base_sd", type=float, default=1.0)
    p.add_argument("--a", type=float, default=1.0)
    p.add_argument("--b", type=float, default=1.0)

    p = sub.add_parser("nuisance-fit", parents=[common], help="Bayesian-bootstrap GLM nuisance draws")
    p.add_argument("--data", required=False)
    p.add_argument("--target", choices=tuple(NUISANCE_FILES), default="pi")
    p.add_argument("--mar", action="store_true", help="data has outcomes missing where a=0")
    p.add_argument("--family", choices=nuisance.FAMILIES)
    p.add_argument("--basis", choices=nuisance.BASES, default="linear")
    p.add_argument("--degree", type=_positive_int, default=1)
    p.add_argument("--learner", choices=("s", "t"), default="s")
    p.add_argument("--draws", type=_positive_int, default=1000)
    return parser


def apply_config(args):
    """Overlay keys of the ``--config`` JSON object onto parsed flags."""
    if not args.config:
        return args
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc.strerror}", path=args.config) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=args.config, line=exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ParseError("config must be a JSON object", path=args.config, line=1)
    known = vars(args)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config"):
            raise ConfigError(f"config key {key!r} cannot be overridden")
        if dest not in known:
            raise ConfigError(f"unknown config key {key!r} for command {args.command}")
        setattr(args, dest, value)
    # re-run flag-level validation on overridden values
    if not isinstance(args.seed, int) or not 0 <= args.seed <= MASK64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if not isinstance(args.threads, int) or args.threads < 1:
        raise ConfigError("threads must be a positive integer")
    if args.format not in ("json", "csv"):
        raise ConfigError("format must be 'json' or 'csv'")
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            raise ConfigError(f"--{name.replace('_', '-')} is required here")


def _check_rows(n_data, n_other, path):
    if n_data != n_other:
        raise ParseError(f"has {n_other} data columns but the data file has {n_data} rows", path=path, line=1)


def _check_out_dir(out):
    parent = out
    while not os.path.exists(parent):
        parent = os.path.dirname(os.path.abspath(parent))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise ConfigError(f"output directory {out!r} is not writable")


def _write_outputs(out, files):
    """Write ``{name: text}`` into ``out``; nothing is renamed into place
    until every payload has been rendered."""
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        atomic_write_text(os.path.join(out, name), text)


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


# --- correct -------------------------------------------------------------------


def _nuisance(path, kind, n):
    link = "logit" if kind == "propensity" else "identity"
    draws = nuisance.load_nuisance_csv(path, kind=kind, link=link)
    _check_rows(n, draws.n, path)
    return draws


def _linear_g(args):
    header, table = read_csv_table(args.data)
    col = args.g_column
    if col is None:
        col = header[0] if len(header) == 1 else "y"
    if col not in header:
        raise ParseError(f"no column {col!r} for g", path=args.data, line=1)
    g = table[:, header.index(col)]
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise ParseError(f"missing or non-finite value in column {col!r}", path=args.data, line=int(bad[0]) + 2)
    return g, fingerprint(table)


def _data_fingerprint(path):
    _, table = read_csv_table(path)
    return table.shape[0], fingerprint(np.nan_to_num(table, nan=0.0), np.isnan(table))


def run_correct(args):
    _require(args, "functional", "data")
    spec_opts = {"positivity_floor": args.positivity_floor, "clip": bool(args.clip)}
    if args.g_column is not None:
        spec_opts["g_column"] = args.g_column
    spec = functionals.FunctionalSpec(args.functional, spec_opts)
    if not 0 < float(args.level) < 1:
        raise ConfigError("level must lie in (0, 1)")
    rng = RngStream(args.seed).substream(ROLE_CORRECTION)
    fid = spec.id
    floor, clip, threads = spec.floor, spec.clip, args.threads

    if args.influence:
        n, fp = _data_fingerprint(args.data)
        infl = load_influence_csv(args.influence)
        _check_rows(n, infl.n, args.influence)
        draws = one_step_posterior(infl, rng, fid, fp, threads)
    elif fid == "linear":
        g, fp = _linear_g(args)
        draws = one_step_posterior(functionals.linear_influence(g, args.draws), rng, fid, fp, threads)
    elif fid == "isd":
        _require(args, "mixture")
        data = load_univariate_csv(args.data)
        mix = dpmm.load_mixture_csv(args.mixture)
        infl = functionals.isd_influence(mix, data, threads)
        draws = one_step_posterior(infl, rng, fid, data.fingerprint(), threads)
    elif fid in ("mar_mean", "mar_mean_fixed_pi"):
        _require(args, "pi", "m")
        data = load_causal_csv(args.data, mar=True)
        pi = _nuisance(args.pi, "propensity", data.n)
        m = _nuisance(args.m, "regression", data.n)
        if fid == "mar_mean":
            infl = functionals.mar_influence(pi, m, data, floor, clip)
        else:
            infl = functionals.mar_influence_fixed_pi(pi, m, data, floor, clip)
        draws = one_step_posterior(infl, rng, fid, data.fingerprint(), threads)
    else:
        needed = ("pi", "mu0") if fid == "att" else ("pi", "mu0", "mu1")
        _require(args, *needed)
        data = load_causal_csv(args.data)
        pi = _nuisance(args.pi, "propensity", data.n)
        mu0 = _nuisance(args.mu0, "regression", data.n)
        if fid == "att":
            draws = functionals.att_posterior(pi, mu0, data, rng, floor, clip, threads)
        else:
            mu1 = _nuisance(args.mu1, "regression", data.n)
            post = functionals.actt_posterior if fid == "actt" else functionals.cate_posterior
            draws = post(pi, mu0, mu1, data, rng, floor, clip, threads)

    summary = summarize(draws, float(args.level))
    report = {
        "functional": spec.to_dict(),
        "seed": args.seed,
        "n": draws.n,
        "B": draws.B,
        "fingerprint": draws.fingerprint,
        **summary.to_dict(),
    }
    files = {"draws.csv": draws_csv_text(draws), "summary.json": _json_text(report)}
    return files, _json_text(report)


def draws_csv_text(draws: CorrectedDraws):
    return csv_text(["draw", "value"], [(b + 1, v) for b, v in enumerate(draws.values)])


# --- simulate --------------------------------------------------------------------


def experiment_config(args):
    options = {}
    if args.scenario == "mar_synthetic":
        options["misspecify"] = args.misspecify
    elif args.scenario == "att_synthetic":
        options.update(homogeneous=not args.heterogeneous, tau0=float(args.tau0), learner=args.learner)
    dp = {}
    if args.scenario == "laplace_isd":
        dp = {"burn_in": int(args.burn_in), "thin": int(args.thin), "truncation": int(args.truncation),
              "mass": float(args.mass), "base_sd": float(args.base_sd)}
        dpmm.DpmmConfig(**dp)
    return simharness.ExperimentConfig(
        scenario=args.scenario, n=int(args.n), reps=int(args.reps), B=int(args.draws), seed=args.seed,
        methods=args.methods, level=float(args.level), options=options, dpmm=dp,
    )


def metrics_csv_text(rows):
    header = ["method", "bias", "mae", "rmse", "coverage", "interval_length"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join([r.method] + [format_float(getattr(r, h)) for h in header[1:]]))
    return "\n".join(lines) + "\n"


def run_simulate(args):
    cfg = experiment_config(args)
    result = simharness.simulate(cfg, threads=args.threads)
    csv_out = metrics_csv_text(result.rows)
    if args.format == "csv":
        return {"metrics.csv": csv_out}, csv_out
    return {"metrics.json": _json_text(result.to_dict(include_replicates=args.per_replicate))}, csv_out


# --- fits ----------------------------------------------------------------------------


def run_dpmm_fit(args):
    _require(args, "data")
    data = load_univariate_csv(args.data, column=args.column)
    cfg = dpmm.DpmmConfig(
        mass=float(args.mass), base_mean=float(args.base_mean), base_sd=float(args.base_sd),
        a=float(args.a), b=float(args.b), truncation=int(args.truncation),
        burn_in=int(args.burn_in), keep=int(args.draws), thin=int(args.thin),
    )
    draws = dpmm.fit(data, cfg, RngStream(args.seed).substream(ROLE_DPMM))
    return {"mixture.csv": dpmm.mixture_csv_text(draws)}, f"{len(draws)} mixture draws, H={cfg.truncation}\n"


def run_nuisance_fit(args):
    _require(args, "data")
    target = args.target
    mar = bool(args.mar) or target == "m"
    data = load_causal_csv(args.data, mar=mar)
    family = args.family or ("bernoulli-logit" if target == "pi" else "gaussian-identity")
    cfg = nuisance.GlmConfig(family=family, basis=args.basis, degree=int(args.degree))
    rng = RngStream(args.seed)
    B = int(args.draws)
    if target == "pi":
        draws = nuisance.bb_glm_posterior(data, "propensity", cfg, B, rng)
    elif target == "m":
        draws = nuisance.bb_glm_posterior(data, "outcome", cfg, B, rng)
    else:
        if data.mar:
            raise ConfigError("mu0/mu1 need causal data with every outcome observed")
        mu0, mu1 = nuisance.outcome_posteriors(data, cfg, B, rng, learner=args.learner)
        draws = mu0 if target == "mu0" else mu1
    name = NUISANCE_FILES[target]
    return {name: nuisance.nuisance_csv_text(draws)}, f"{draws.B} draws of {target} at n={draws.n}\n"


COMMANDS = {
    "correct": run_correct,
    "simulate": run_simulate,
    "dpmm-fit": run_dpmm_fit,
    "nuisance-fit": run_nuisance_fit,
}


def _setup_logging():
    level = os.environ.get("ONESTEP_LOG", "warning").lower()
    if level not in _LOG_LEVELS:
        raise ConfigError(f"ONESTEP_LOG must be one of {sorted(_LOG_LEVELS)}")
    logging.basicConfig(level=_LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        args = apply_config(args)
        _check_out_dir(args.out)
        files, stdout_text = COMMANDS[args.command](args)
        _write_outputs(args.out, files)
    except InputError as exc:
        print(f"onestep: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"onestep: numeric error: {exc}", file=sys.stderr)
        return 3
    except OnestepError as exc:
        print(f"onestep: error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"onestep: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(stdout_text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
