"""Command-line interface: ``slabdecomp <subcommand> --config FILE [...]``.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 infeasible
verdict (``feasibility`` only), 4 runtime or numerical error.
"""

import argparse
import logging
import math
import sys

import numpy as np

from . import _io, config
from .errors import ConfigError, InfeasibleError, PreconditionError, SlabdecompError
from .experiments import (CoverageSetting, chain_diagnostics, coverage_experiment,
                          default_burn_in)
from .feasibility import (AsymptoticPoint, asymptotic_feasibility, empirical_feasibility,
                          scan_region)
from .oracle import enumerate_exact_posterior, marginal_table
from .potential import Decomposition, field_model
from .samplers import run_chain, two_stage_sample

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_RUNTIME = 0, 1, 2, 3, 4

log = logging.getLogger("slabdecomp")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _globals(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None),
                        help="master seed (overrides sampler/experiment seeds)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads")
    parser.add_argument("--quiet", action="store_true", default=default(False),
                        help="suppress stdout reports and warnings")


def build_parser():
    parser = _Parser(prog="slabdecomp", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    common = _Parser(add_help=False)
    _globals(common, suppress=True)
    common.add_argument("--config", required=True, help="JSON run configuration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("feasibility", parents=[common], help="log-concavity (feasibility) verdict for the field marginal")
    p.add_argument("--asymptotic", action="store_true",
                   help="use Bai-Yin limits at delta = n/d, sigma0 = sigma_d/sqrt(d)")
    for name, text in [("region", "asymptotic feasibility grid (CSV)"),
                       ("sample", "two-stage posterior samples (CSV + .meta.json)"),
                       ("oracle", "exact marginal CDF tables (CSV)"),
                       ("coverage", "credible-interval coverage experiment (CSV + .summary.json)")]:
        sub.add_parser(name, parents=[common], help=text).add_argument("--out", required=True)
    p = sub.add_parser("diagnose", parents=[common], help="trace/autocorrelation of one coordinate")
    p.add_argument("--coordinate", type=int, required=True, help="0-based coordinate index")
    p.add_argument("--out", required=True, help="trace CSV; autocorrelations go to <out>.acf.csv")
    p.add_argument("--max-lag", type=int, default=50)
    p.add_argument("--samples", type=int, default=None, help="retained states (default: experiment.samples)")
    p.add_argument("--state", choices=["theta", "phi"], default="theta")
    return parser


def _stem(path, suffix):
    return f"{path[:-4] if path.endswith('.csv') else path}{suffix}"


def _emit(args, obj):
    if not args.quiet:
        print(_io.dumps(obj))


def _seed(args, doc, section):
    if args.seed is not None:
        return args.seed
    return doc.get(section, {}).get("seed", 0)


def _decomposition(doc, inst):
    gamma, offset = config.gamma_spec(doc)
    return Decomposition.from_instance(inst, gamma=gamma, offset=offset)


def cmd_feasibility(args, doc):
    opts = config.feasibility_options(doc)
    prior = config.prior(doc)
    m = doc["model"]
    if args.asymptotic:
        pt = AsymptoticPoint(m["n"] / m["d"], config.noise_std(doc) / math.sqrt(m["d"]), prior)
        report = asymptotic_feasibility(pt, **opts)
    else:
        _, inst = config.instance(doc, _seed(args, doc, "model"))
        report = empirical_feasibility(inst.X, inst.noise_std, prior, **opts)
    _emit(args, report.to_dict())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_region(args, doc):
    axis1, axis2, fixed = config.region_axes(doc)
    base = config.prior(doc)
    scan = scan_region(axis1, axis2, {"prior": base, **fixed}, threads=args.threads,
                       **config.feasibility_options(doc))
    scan.write_csv(args.out)
    _emit(args, {"points": len(scan.axis1) * len(scan.axis2),
                 "feasible": int(scan.verdicts().sum()),
                 "boundary_crossings_per_slice": scan.crossings_per_slice(),
                 "boundary": scan.boundary()})
    return EXIT_OK


def _chain(args, doc):
    rho = doc["model"]["design"].get("rho", 0.0)
    return config.chain_config(doc, seed=_seed(args, doc, "sampler"),
                               default_burn_in=default_burn_in(rho))


def cmd_sample(args, doc):
    _, inst = config.instance(doc, _seed(args, doc, "model"))
    decomp = _decomposition(doc, inst)
    cfg = _chain(args, doc)
    samples = two_stage_sample(decomp, config.prior(doc), cfg, config.sample_count(doc, cfg))
    samples.write_csv(args.out)
    meta = samples.metadata()
    meta["run_config"] = _echo(args, doc)
    _io.write_json(_stem(args.out, ".meta.json"), meta)
    _emit(args, {k: meta[k] for k in ("n_samples", "acceptance_rate", "gamma", "convexity_margin")})
    return EXIT_OK


def _echo(args, doc):
    """The config with the effective seeds filled in, so that it reproduces the run."""
    echo = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    echo["model"]["seed"] = config.data_seed(doc, _seed(args, doc, "model"))
    if "sampler" in echo:
        echo["sampler"]["seed"] = _seed(args, doc, "sampler")
    if "experiment" in echo:
        echo["experiment"]["seed"] = _seed(args, doc, "experiment")
    return echo


def cmd_oracle(args, doc):
    _, inst = config.instance(doc, _seed(args, doc, "model"))
    post = enumerate_exact_posterior(inst.X, inst.y, inst.noise_std, config.prior(doc))
    points = doc.get("oracle", {}).get("grid_points", 201)
    rows = []
    for i in range(inst.d):
        lo, hi = post.support(i, width=5.0)
        ts = np.union1d(np.linspace(min(lo, -1e-3), max(hi, 1e-3), points), [0.0])
        atom = post.atom_prob(i)
        for t, c in marginal_table(post, i, ts):
            rows.append((i, t, c, atom))
    _io.write_csv(args.out, ["coordinate", "t", "cdf", "atom_prob"], rows)
    _emit(args, {"d": inst.d, "atom_probs": [post.atom_prob(i) for i in range(inst.d)]})
    return EXIT_OK


def cmd_coverage(args, doc):
    m = doc["model"]
    exp = doc.get("experiment", {})
    chain = _chain(args, doc)
    setting = CoverageSetting(n=m["n"], d=m["d"], prior=config.prior(doc),
                              noise_std=config.noise_std(doc), chain=chain,
                              design=config.design(doc),
                              samples=config.sample_count(doc, chain, default=2000),
                              level=exp.get("level", 0.95),
                              gamma_offset=config.gamma_spec(doc)[1])
    if config.gamma_spec(doc)[0] is not None:
        raise ConfigError("coverage experiments draw a new design per repetition; "
                          "use gamma 'auto+<offset>'")
    result = coverage_experiment(setting, exp.get("repetitions", 100),
                                 _seed(args, doc, "experiment"), threads=args.threads,
                                 force=exp.get("force", False))
    result.write_csv(args.out)
    summary = result.summary()
    summary["run_config"] = _echo(args, doc)
    _io.write_json(_stem(args.out, ".summary.json"), summary)
    _emit(args, {k: summary[k] for k in ("repetitions", "completed", "aggregate_rate")})
    return EXIT_OK


def cmd_diagnose(args, doc):
    _, inst = config.instance(doc, _seed(args, doc, "model"))
    decomp = _decomposition(doc, inst)
    prior = config.prior(doc)
    cfg = _chain(args, doc)
    n = args.samples if args.samples is not None else config.sample_count(doc, cfg)
    if args.state == "phi":
        states = run_chain(field_model(decomp, prior), cfg.for_samples(n), n)
    else:
        states = two_stage_sample(decomp, prior, cfg, n)
    bundle = chain_diagnostics(states, args.coordinate, args.max_lag)
    bundle.write_csv(args.out, _stem(args.out, ".acf.csv"))
    _emit(args, bundle.summary())
    return EXIT_OK


COMMANDS = {"feasibility": cmd_feasibility, "region": cmd_region, "sample": cmd_sample,
            "oracle": cmd_oracle, "coverage": cmd_coverage, "diagnose": cmd_diagnose}


def run_cli(argv=None):
    """Run the CLI and return the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        doc = config.load(args.config)
        return COMMANDS[args.command](args, doc)
    except (ConfigError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SlabdecompError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
