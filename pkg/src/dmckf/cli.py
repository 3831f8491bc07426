"""Command-line entry point ``dmckf``."""

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from importlib import resources

from . import __version__
from .diagnostics import DEFAULT_PROBES, dmckf_flops, sdkf_flops, verify_contraction, zeta_bound
from .errors import DmckfError
from .filters import fixed_point_update
from .harness import DEFAULT_SWEEP_PROBS, DEFAULT_SWEEP_SIGMAS, ExperimentConfig, TrialSet, run_experiment, summary_payload
from .network import DEFAULT_TOPOLOGY_FILE

EXIT_FAILURE = 1
EXIT_USAGE = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="override the configured master seed")


def _add_outputs(p):
    p.add_argument("--records-csv", help="write the per-step record dump here")
    p.add_argument("--summary-json", help="write the JSON summary here")
    p.add_argument("--figures-dir", help="render report figures into this directory")


def build_parser():
    parser = _Parser(prog="dmckf", description="Distributed maximum-correntropy Kalman filtering with packet drops.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run the experiment described by a config file")
    _add_common(p, config_required=True)
    _add_outputs(p)

    p = sub.add_parser("sweep-sigma", help="per-node MSD and iterations over sigma and p grids")
    _add_common(p)
    _add_outputs(p)
    p.add_argument("--sigmas", type=float, nargs="+", help=f"kernel bandwidths (default {list(DEFAULT_SWEEP_SIGMAS)})")
    p.add_argument("--p", type=float, nargs="+", dest="probs", help=f"reception probabilities (default {list(DEFAULT_SWEEP_PROBS)})")
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)

    p = sub.add_parser("convergence-check", help="contraction report for one captured filter step")
    _add_common(p)
    p.add_argument("--trial", type=int, default=0, help="trial index (default 0)")
    p.add_argument("--step", type=int, default=1, help="1-based time step (default 1)")
    p.add_argument("--node", type=int, default=1, help="1-based node index (default 1)")
    p.add_argument("--sigma", type=float, help="kernel bandwidth (default: first configured sigma)")
    p.add_argument("--p", type=float, dest="prob", help="reception probability (default: first configured p)")
    p.add_argument("--beta", type=float, help="ball radius (default: beta-factor * zeta)")
    p.add_argument("--beta-factor", type=float, default=2.0)
    p.add_argument("--alpha", type=float, help="contraction target in (0, 1)")
    p.add_argument("--probes", type=int, default=DEFAULT_PROBES)

    p = sub.add_parser("complexity", help="operation counts of one filter step")
    p.add_argument("--n", type=int, required=True, help="state dimension")
    p.add_argument("--m", type=int, required=True, help="stacked measurement dimension")
    p.add_argument("--t", type=float, default=1.0, help="average fixed-point iterations (default 1)")

    p = sub.add_parser("emit-default-topology", help="write the shipped default edge list")
    p.add_argument("--out", help="destination file (default: stdout)")
    return parser


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _apply_outputs(cfg, args):
    changes = {k: getattr(args, k) for k in ("records_csv", "summary_json", "figures_dir") if getattr(args, k)}
    return cfg.replace(**changes) if changes else cfg


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _cmd_simulate(args, out):
    cfg = _apply_outputs(_load_config(args), args)
    result = run_experiment(cfg)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["algorithm", "sigma", "p", "network_msd_db", "avg_iterations", "nonconverged_steps"])
    for row in summary_payload(result)["network"]:
        w.writerow([row["algorithm"], _fmt(row["sigma"]), _fmt(row["p"]), _fmt(row["msd_db"]),
                    _fmt(row["avg_iterations"]), row["nonconverged_steps"]])


def _cmd_sweep(args, out):
    cfg = _load_config(args)
    changes = {}
    if args.sigmas or not args.config:
        changes["sigmas"] = tuple(args.sigmas or DEFAULT_SWEEP_SIGMAS)
    if args.probs or not args.config:
        changes["drop_probs"] = tuple(args.probs or DEFAULT_SWEEP_PROBS)
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.steps is not None:
        changes["steps"] = args.steps
    cfg = _apply_outputs(cfg.replace(**changes), args)
    result = run_experiment(cfg)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["sigma", "p", "node", "algorithm", "neighbors", "msd_db", "msd_stderr_db", "avg_iterations"])
    for r in sorted(result.summary, key=lambda r: (r.sigma, -r.p, r.node, r.algorithm)):
        w.writerow([_fmt(r.sigma), _fmt(r.p), r.node, r.algorithm, r.neighbors, _fmt(r.msd_db),
                    _fmt(r.msd_stderr_db), _fmt(r.avg_iterations)])


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _cmd_convergence(args, out):
    cfg = _load_config(args)
    sigma = args.sigma if args.sigma is not None else cfg.sigmas[0]
    prob = args.prob if args.prob is not None else cfg.drop_probs[0]
    if args.step < 1:
        raise DmckfError("step must be >= 1")
    cfg = cfg.replace(steps=args.step, trials=max(cfg.trials, args.trial + 1))
    trials = TrialSet(cfg, [args.trial])
    if not 1 <= args.node <= trials.topology.node_count:
        raise DmckfError(f"node must lie in 1..{trials.topology.node_count}")
    aug, _ = trials.capture(0, args.step, args.node, sigma, prob)
    beta = args.beta if args.beta is not None else args.beta_factor * zeta_bound(aug)
    report = verify_contraction(aug, sigma, beta, probes=args.probes, alpha=args.alpha)
    x, _, diag = fixed_point_update(aug, cfg.filter_config(sigma))
    payload = {k: _json_safe(v) for k, v in asdict(report).items()}
    payload.update({
        "trial": args.trial, "step": args.step, "node": args.node, "p": prob,
        "iterations": int(diag.iterations), "converged": bool(diag.converged),
    })
    json.dump(payload, out, indent=2)
    out.write("\n")


def _cmd_complexity(args, out):
    base = sdkf_flops(args.n, args.m)
    t = int(args.t) if float(args.t).is_integer() else args.t
    mc = dmckf_flops(args.n, args.m, t)
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["algorithm", "n", "m_ia", "t", "add_mult", "special"])
    w.writerow(["stationary-dkf", args.n, args.m, "", base.add_mult, base.special])
    w.writerow(["dmckf-dpd", args.n, args.m, _fmt(t), _fmt(mc.add_mult), _fmt(mc.special)])


def _cmd_topology(args, out):
    text = resources.files("dmckf.data").joinpath(DEFAULT_TOPOLOGY_FILE).read_text(encoding="utf-8")
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    else:
        out.write(text)


COMMANDS = {
    "simulate": _cmd_simulate,
    "sweep-sigma": _cmd_sweep,
    "convergence-check": _cmd_convergence,
    "complexity": _cmd_complexity,
    "emit-default-topology": _cmd_topology,
}


def _one_line(msg):
    return " ".join(str(msg).split())


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: usage: {_one_line(exc)}", file=err)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, out)
    except (DmckfError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {_one_line(exc)}", file=err)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":
    sys.exit(main())
