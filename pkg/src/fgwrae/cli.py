"""Command-line interface.

Every subcommand requires ``--seed``.  Results are printed as JSON on
standard output with 12 significant digits.  Exit status is 0 on success,
2 on usage or input errors and 1 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import data_io
from .bench import DEFAULT_SIZES, scaling_bench
from .cotrain import MODES as COTRAIN_MODES
from .cotrain import CoTrainConfig, cotrain, eval_multiview
from .errors import InvalidInputError, InvalidStateError
from .gaussian_ot import hierarchical_fgw
from .ot_core import (
    FgwSolverOpts, build_cost_matrix, empirical_fgw, round_to_polytope, sinkhorn, uniform,
)
from .rae import (
    TrainConfig, cluster_purity, save_checkpoint, train_drae, train_prae, transport_assignment,
)
from .sliced_ot import sample_projections, sliced_fgw

__all__ = ["main", "run", "format_result", "DIST_MODES"]

DIST_MODES = ("w-sinkhorn", "gw", "fgw", "sliced-w", "sliced-gw", "sliced-fgw")


class NumericalFailure(Exception):
    pass


def _round12(v):
    v = float(v)
    if not math.isfinite(v):
        raise NumericalFailure(f"non-finite value {v}")
    return float("%.12g" % v)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round12(obj)
    return obj


def format_result(result, fmt="json"):
    """Serialize a flat or nested result record.

    Floats keep 12 significant digits; a non-finite value raises.  The
    ``csv`` format writes a header line and one row of values.
    """
    clean = _clean(result)
    if fmt == "json":
        return json.dumps(clean) + "\n"
    if fmt == "csv":
        keys = list(clean)
        return ",".join(keys) + "\n" + ",".join(str(clean[k]) for k in keys) + "\n"
    raise InvalidInputError(f"unknown format {fmt!r}")


def _solver_opts(args):
    return FgwSolverOpts(
        outer_iters=args.iters, seed=args.seed, restarts=args.restarts, polish_iters=args.polish
    )


def _save_plan(path, T):
    data_io.save_cloud(path, T)


def _cmd_dist(args):
    X = data_io.load_cloud(args.a)
    Y = data_io.load_cloud(args.b)
    mode = args.mode
    plan = None
    if mode.startswith("sliced"):
        if X.shape[0] != Y.shape[0]:
            raise InvalidInputError("sliced modes need clouds with the same number of samples")
        beta = {"sliced-w": 0.0, "sliced-gw": 1.0}.get(mode, args.beta)
        rng = data_io.rng_stream(args.seed, "projections")
        proj_x = sample_projections(X.shape[1], args.slices, rng=rng)
        proj_y = None
        if X.shape[1] != Y.shape[1]:
            if beta < 1.0:
                raise InvalidInputError("clouds of different dimension need --mode sliced-gw")
            proj_y = sample_projections(Y.shape[1], args.slices, rng=rng)
        value = sliced_fgw(X, Y, beta, proj_x, projections_y=proj_y)
    elif mode == "w-sinkhorn":
        if X.shape[1] != Y.shape[1]:
            raise InvalidInputError("w-sinkhorn needs clouds of equal dimension")
        C = build_cost_matrix(X, Y)
        a, b = uniform(X.shape[0]), uniform(Y.shape[0])
        scale = float(C.max())
        if scale == 0.0:
            plan = np.outer(a, b)
        else:
            res = sinkhorn(a, b, np.exp(-C / (args.epsilon * scale)), max_iter=args.iters)
            plan = round_to_polytope(res.coupling, a, b)
        value = float(np.sum(C * plan))
    else:
        beta = 1.0 if mode == "gw" else args.beta
        res, value = empirical_fgw(X, Y, beta, _solver_opts(args), init=args.warm)
        plan = res.coupling
    # round-off can push an exact zero slightly negative
    text = format_result({"distance": max(value, 0.0)})
    if args.plan_out and plan is not None:
        _save_plan(args.plan_out, plan)
    return text


def _cmd_gmm_dist(args):
    P = data_io.load_gmm(args.a)
    Q = data_io.load_gmm(args.b)
    plan, value = hierarchical_fgw(P, Q, args.beta, _solver_opts(args), init=args.warm)
    text = format_result({"distance": max(value, 0.0), "marginal_residual": plan.residual})
    if args.plan_out:
        _save_plan(args.plan_out, plan.coupling)
    return text


TRAIN_OVERRIDES = ("epochs", "K", "gamma", "beta", "latent_dim", "batch_size", "J", "L", "lr")


def _train_config(args):
    cfg = data_io.load_config(args.config, TrainConfig) if args.config else TrainConfig()
    changes = {k: getattr(args, k) for k in TRAIN_OVERRIDES if getattr(args, k) is not None}
    changes["seed"] = args.seed
    return dataclasses.replace(cfg, **changes)


def _write_outputs(out_dir, stem, encoder, decoder, prior, config, report):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{stem}_checkpoint.json", encoder, decoder, prior, config)
    data_io.save_report(out / f"{stem}_report.csv", report)
    return out


def _cmd_train(args, probabilistic):
    cfg = _train_config(args)
    X = data_io.load_cloud(args.data)
    trainer = train_prae if probabilistic else train_drae
    encoder, decoder, prior, report = trainer(cfg, X)
    result = {
        "epochs": report.epochs,
        "first_recon_loss": report.recon_loss[0] if report.epochs else 0.0,
        "final_recon_loss": report.recon_loss[-1] if report.epochs else 0.0,
        "final_reg_value": report.reg_value[-1] if report.epochs else 0.0,
        "skipped_batches": report.skipped_batches,
    }
    if args.labels:
        labels = data_io.load_labels(args.labels)
        if labels.size != X.shape[0]:
            raise InvalidInputError("label count does not match the data")
        assign = transport_assignment(
            encoder, prior, X, cfg.beta, cfg.solver_opts(), probabilistic=probabilistic
        )
        result["purity"] = cluster_purity(assign, labels)
    text = format_result(result)
    if args.out_dir:
        stem = "prae" if probabilistic else "drae"
        _write_outputs(args.out_dir, stem, encoder, decoder, prior, cfg, report)
    return text


def _cmd_cotrain(args):
    if args.config:
        cfg = data_io.load_config(args.config, CoTrainConfig)
    else:
        cfg = CoTrainConfig(view_a=TrainConfig(latent_dim=2), view_b=TrainConfig(latent_dim=3))
    changes = {k: getattr(args, k) for k in ("tau", "gamma", "mode", "epochs") if getattr(args, k) is not None}
    cfg = dataclasses.replace(
        cfg, **changes, seed=args.seed,
        view_a=dataclasses.replace(cfg.view_a, seed=2 * args.seed),
        view_b=dataclasses.replace(cfg.view_b, seed=2 * args.seed + 1),
    )
    A = data_io.load_cloud(args.a)
    B = data_io.load_cloud(args.b)
    model_a, model_b, (rep_a, rep_b) = cotrain(cfg, A, B)
    result = {
        "epochs": rep_a.epochs,
        "final_recon_loss_a": rep_a.recon_loss[-1] if rep_a.epochs else 0.0,
        "final_recon_loss_b": rep_b.recon_loss[-1] if rep_b.epochs else 0.0,
        "relational_init": rep_a.relational_init,
        "relational_final": rep_a.relational[-1] if rep_a.relational else 0.0,
    }
    if args.labels:
        labels = data_io.load_labels(args.labels)
        result["accuracy"] = eval_multiview(model_a, model_b, A, B, labels, args.seed)
    text = format_result(result)
    if args.out_dir:
        _write_outputs(args.out_dir, "view_a", model_a.encoder, model_a.decoder, model_a.prior,
                       cfg.view_a, rep_a)
        _write_outputs(args.out_dir, "view_b", model_b.encoder, model_b.decoder, model_b.prior,
                       cfg.view_b, rep_b)
    return text


def _cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "clusters":
        cloud = data_io.gen_clusters(args.K, args.n, args.dim, args.spread, args.seed)
        data_io.save_cloud(out / "data.csv", cloud.samples)
        data_io.save_labels(out / "labels.csv", cloud.labels)
        result = {"samples": len(cloud), "dim": cloud.dim, "files": ["data.csv", "labels.csv"]}
    else:
        view_a, view_b, labels = data_io.gen_two_view(args.n, args.seed, noise=args.noise)
        data_io.save_cloud(out / "view_a.csv", view_a.samples)
        data_io.save_cloud(out / "view_b.csv", view_b.samples)
        data_io.save_labels(out / "labels.csv", labels)
        result = {"samples": len(view_a), "files": ["view_a.csv", "view_b.csv", "labels.csv"]}
    return format_result(result)


def _cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",")]
    rows, direct_slope, sliced_slope = scaling_bench(
        sizes, seed=args.seed, J=args.J, L=args.L, M=args.M, repeats=args.repeats,
    )
    if args.out:
        lines = ["N,direct_seconds,sliced_seconds"]
        lines += [f"{r.N},{_round12(r.direct_seconds)!r},{_round12(r.sliced_seconds)!r}" for r in rows]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return format_result({
        "rows": [dataclasses.asdict(r) for r in rows],
        "direct_slope": direct_slope,
        "sliced_slope": sliced_slope,
    })


def _sizes(text):
    try:
        sizes = [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(sizes) < 2:
        raise argparse.ArgumentTypeError("need at least two sizes")
    return text


def _solver_flags(p):
    p.add_argument("--warm", choices=("product", "identity"), default="product",
                   help="starting plan of the proximal solver")
    p.add_argument("--restarts", type=int, default=0, help="extra random starting plans")
    p.add_argument("--polish", type=int, default=0, help="Frank-Wolfe steps after the proximal loop")
    p.add_argument("--plan-out", help="CSV file for the transport plan")


def build_parser():
    parser = argparse.ArgumentParser(prog="fgwrae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, required=True)
        return p

    p = add("dist", "distance between two point clouds")
    p.add_argument("--mode", choices=DIST_MODES, required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--slices", type=int, default=50)
    p.add_argument("--iters", type=int, default=20, help="outer iterations (Sinkhorn sweeps for w-sinkhorn)")
    p.add_argument("--epsilon", type=float, default=0.05, help="entropic weight relative to the largest cost")
    _solver_flags(p)

    p = add("gmm-dist", "hierarchical FGW between two Gaussian mixtures")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=20)
    _solver_flags(p)

    for name, help_text in (("train-prae", "train a probabilistic RAE"),
                            ("train-drae", "train a deterministic RAE")):
        p = add(name, help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--labels")
        p.add_argument("--config")
        p.add_argument("--out-dir")
        for flag in TRAIN_OVERRIDES:
            kind = float if flag in ("gamma", "beta", "lr") else int
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=kind)

    p = add("cotrain", "co-train two autoencoders")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--labels")
    p.add_argument("--config")
    p.add_argument("--out-dir")
    p.add_argument("--tau", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mode", choices=COTRAIN_MODES)
    p.add_argument("--epochs", type=int)

    p = add("synth", "write a synthetic data set")
    p.add_argument("--kind", choices=("clusters", "two-view"), default="clusters")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--K", type=int, default=3)
    p.add_argument("--n", type=int, default=200, help="samples per cluster, or total for two-view")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--spread", type=float, default=0.3)
    p.add_argument("--noise", type=float, default=0.05)

    p = add("bench", "runtime scaling of direct vs sliced FGW")
    p.add_argument("--mode", choices=("scaling",), default="scaling")
    p.add_argument("--sizes", type=_sizes, default=",".join(map(str, DEFAULT_SIZES)))
    p.add_argument("--J", type=int, default=20)
    p.add_argument("--L", type=int, default=50)
    p.add_argument("--M", type=int, default=8)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="CSV file for the timing table")
    return parser


COMMANDS = {
    "dist": _cmd_dist,
    "gmm-dist": _cmd_gmm_dist,
    "train-prae": lambda a: _cmd_train(a, True),
    "train-drae": lambda a: _cmd_train(a, False),
    "cotrain": _cmd_cotrain,
    "synth": _cmd_synth,
    "bench": _cmd_bench,
}


def run(argv, stdout=None, stderr=None):
    """Run one command; returns the exit status."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        text = COMMANDS[args.command](args)
    except (InvalidInputError, InvalidStateError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    except (NumericalFailure, ArithmeticError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return 1
    stdout.write(text)
    return 0


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
