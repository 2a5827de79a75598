"""Command-line front end.

Subcommands: ``gen``, ``solve``, ``sweep``, ``dataset``, ``tune``, ``eval``
and ``replay``. Every run except ``replay`` writes a manifest next to its
main output (``<out>.manifest.json``) that records the full argument list,
input and output hashes, seed, version and wall time; ``replay`` re-runs a
manifest and reproduces the same output files byte for byte.

Exit codes: 0 success or converged, 2 finished without converging,
1 usage error, 3 input error, 4 numerical failure.
"""
import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .baselines import AdmmConfig, GraspConfig, admm_solve, grasp_solve
from .errors import (BacktrackExhausted, DimensionMismatch, FeasibilityNotFound,
                     InnerSolveFailed, InvalidWeights, NoStabilizingSolution, NotHurwitz,
                     ParseError, SingularSystem, SparseLQRError, TooManyRejections,
                     ZeroReference)
from .objective import lqr_gain
from .solvers import (IspaConfig, IstaConfig, Status, fista_solve, ispa_solve, ista_solve)
from .sparsity import Ball, Regularizer, nnz
from .systems import (DatasetSpec, dataset_from_dict, dataset_to_dict, file_sha256,
                      gain_to_dict, gen_dataset, gen_multiagent, load_json, load_plant,
                      save_json, save_plant)
from .unrolled import (TrainOptions, UnrolledNet, net_from_dict, net_to_dict, nmse,
                       nmse_by_depth, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4

ALGORITHMS = ("ista", "fista", "ispa", "admm", "grasp")
SWEEP_COLUMNS = ("value", "J", "G", "nnz", "iters", "lyap_solves")

_INPUT_ERRORS = (ParseError, DimensionMismatch, InvalidWeights, NotHurwitz, OSError,
                 ZeroReference)
_NUMERICAL_ERRORS = (SingularSystem, NoStabilizingSolution, FeasibilityNotFound,
                     InnerSolveFailed, BacktrackExhausted, TooManyRejections,
                     np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def parse_range(text, integer=False):
    """``"a,b,c"`` or ``"start:stop:count"`` (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            count = int(count)
            if count < 1:
                raise ValueError
            vals = np.linspace(float(start), float(stop), count).tolist()
        else:
            vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad range {text!r}; use a,b,c or start:stop:count") from None
    if not vals:
        raise UsageError("range is empty")
    if integer:
        vals = [int(round(v)) for v in vals]
    return vals


# -- configs from arguments -----------------------------------------------------

def _ista_config(a, gamma=None):
    return IstaConfig(gamma=a.gamma if gamma is None else gamma, rho0=a.rho0, alpha=a.alpha,
                      tol=a.tol, max_iter=a.max_iter, max_backtracks=a.max_backtracks,
                      regularizer=Regularizer(a.reg, epsilon=a.epsilon),
                      strict_acceptance=not a.lenient)


def _ispa_config(a, radius=None):
    r = a.radius if radius is None else radius
    rho0 = a.rho0 if a.rho0_set else 1.0
    alpha = a.alpha if a.alpha_set else 0.7
    return IspaConfig(radius=Ball(a.ball, r), rho0=rho0, alpha=alpha, armijo_c=a.armijo_c,
                      tol=a.tol, max_iter=a.max_iter, max_backtracks=a.max_backtracks)


def _admm_config(a, gamma=None):
    return AdmmConfig(gamma=a.gamma if gamma is None else gamma, rho=a.rho, eps_abs=a.eps_abs,
                      eps_rel=a.eps_rel, max_iter=a.max_iter, inner_steps=a.inner_steps,
                      inner_tol=a.inner_tol, regularizer=Regularizer(a.reg, epsilon=a.epsilon))


def _grasp_config(a, s=None):
    return GraspConfig(s=int(a.s if s is None else s), tol=a.tol, max_iter=a.max_iter,
                       exempt_diagonal=a.exempt_diagonal, count_mode=a.count_mode)


def _run_algorithm(algo, plant, K0, a, value=None):
    """Solve with ``algo``; ``value`` overrides gamma (or the budget/radius)."""
    if algo == "ista":
        return ista_solve(plant, K0, _ista_config(a, value))
    if algo == "fista":
        return fista_solve(plant, K0, _ista_config(a, value))
    if algo == "ispa":
        return ispa_solve(plant, K0, _ispa_config(a, value))
    if algo == "admm":
        return admm_solve(plant, K0, _admm_config(a, value))
    return grasp_solve(plant, K0, _grasp_config(a, value))


def _primary_value(algo, a):
    if algo in ("ista", "fista", "admm"):
        return a.gamma
    if algo == "ispa":
        return a.radius
    return a.s


def _load_init(a, plant):
    if a.init:
        d = load_json(a.init)
        if "K" not in d:
            raise ParseError("gain file has no 'K'", field="K")
        K = np.array(d["K"], dtype=float)
        if K.shape != (plant.m, plant.n):
            raise DimensionMismatch(f"initial K has shape {K.shape}, expected {(plant.m, plant.n)}")
        return K
    return lqr_gain(plant)


# -- commands -------------------------------------------------------------------

def cmd_gen(a):
    if a.agents < 1:
        raise UsageError("--agents must be >= 1")
    plant = gen_multiagent(a.agents)
    save_plant(plant, a.out)
    return EXIT_OK, [a.out], []


def cmd_solve(a):
    plant = load_plant(a.plant)
    K0 = _load_init(a, plant)
    res = _run_algorithm(a.algo, plant, K0, a)
    converged = res.trace.status is Status.CONVERGED
    gain = gain_to_dict(res.K, res.J, res.G, _primary_value(a.algo, a), a.algo,
                        res.trace.iterations, converged, nnz=nnz(res.K),
                        status=res.trace.status.value, lyap_solves=res.trace.lyap_solves)
    save_json(gain, a.out)
    outputs = [a.out]
    trace_path = a.trace or _sibling(a.out, ".trace.csv")
    res.trace.to_csv(trace_path)
    outputs.append(trace_path)
    inputs = [a.plant] + ([a.init] if a.init else [])
    return (EXIT_OK if converged else EXIT_NOT_CONVERGED), outputs, inputs


def _sweep_point(args):
    algo, plant, K0, a, value = args
    res = _run_algorithm(algo, plant, K0, a, value)
    return (value, res.J, res.G, nnz(res.K), res.trace.iterations, res.trace.lyap_solves,
            res.trace.status is Status.CONVERGED)


def cmd_sweep(a):
    plant = load_plant(a.plant)
    K0 = _load_init(a, plant)
    values = parse_range(a.values, integer=a.algo == "grasp" or
                         (a.algo == "ispa" and a.ball == "l0"))
    tasks = [(a.algo, plant, K0, a, v) for v in values]
    if a.jobs > 1:
        with ProcessPoolExecutor(max_workers=a.jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    _write_csv(a.out, SWEEP_COLUMNS, [r[:6] for r in rows])
    inputs = [a.plant] + ([a.init] if a.init else [])
    code = EXIT_OK if all(r[6] for r in rows) else EXIT_NOT_CONVERGED
    return code, [a.out], inputs


def cmd_dataset(a):
    if a.plant:
        base = load_plant(a.plant)
        inputs = [a.plant]
    else:
        if a.agents < 1:
            raise UsageError("--agents must be >= 1")
        base = gen_multiagent(a.agents)
        inputs = []
    spec = DatasetSpec(base=base, count=a.count, noise_sigma=a.sigma, seed=a.seed,
                       perturb_targets=a.targets)
    ref = IstaConfig(gamma=a.gamma, rho0=a.rho0, alpha=a.alpha, tol=a.tol,
                     max_iter=a.max_iter, regularizer=Regularizer(a.reg))
    examples, rejections = gen_dataset(spec, ref, jobs=a.jobs)
    reference = {"algorithm": "ista", "gamma": a.gamma, "rho0": a.rho0, "alpha": a.alpha,
                 "tol": a.tol, "regularizer": a.reg}
    save_json(dataset_to_dict(spec, examples, rejections, reference), a.out)
    return EXIT_OK, [a.out], inputs


def _split(examples, train_count):
    if not 0 < train_count < len(examples) + 1:
        raise UsageError(f"--train-count must be in [1, {len(examples)}]")
    return examples[:train_count], examples[train_count:]


def _reference_params(d, a):
    ref = d.get("reference", {})
    rho0 = a.rho0 if a.rho0_set else float(ref.get("rho0", 100.0))
    gamma = a.gamma if a.gamma_set else float(ref.get("gamma", 1.0))
    return rho0, gamma


def cmd_tune(a):
    d = load_json(a.dataset)
    _, examples = dataset_from_dict(d)
    train_set, _ = _split(examples, a.train_count)
    rho0, gamma = _reference_params(d, a)
    net = UnrolledNet.initial(a.layers, rho0=rho0, gamma=gamma, sparsity_op=a.sparsity_op)
    opts = TrainOptions(epochs=a.epochs, step=a.step, spsa_perturb=a.perturb, seed=a.seed,
                        batch_size=a.batch, method=a.method)
    result = train(net, train_set, opts)
    out = net_to_dict(result.net)
    out["training"] = {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
                       "no_improvement": result.no_improvement, "accepted": result.accepted,
                       "epochs": a.epochs, "train_count": len(train_set), "seed": a.seed}
    save_json(out, a.out)
    return EXIT_OK, [a.out], [a.dataset]


def _estimate_gains(path):
    d = load_json(path)
    if isinstance(d, dict) and "examples" in d:
        return [np.array(e["K_star"], dtype=float) for e in d["examples"]]
    if isinstance(d, dict) and "gains" in d:
        return [np.array(K, dtype=float) for K in d["gains"]]
    raise ParseError("estimates file needs 'examples' or 'gains'", field="gains")


def cmd_eval(a):
    d = load_json(a.dataset)
    _, examples = dataset_from_dict(d)
    inputs = [a.dataset]
    if a.estimates:
        est = _estimate_gains(a.estimates)
        value = nmse(est, [ex.K_star for ex in examples])
        _write_csv(a.out, ("count", "nmse"), [(len(examples), value)])
        return EXIT_OK, [a.out], inputs + [a.estimates]
    _, test_set = _split(examples, a.train_count)
    if not test_set:
        raise UsageError("no test examples left after the training split")
    rho0, gamma = _reference_params(d, a)
    if a.net:
        net = net_from_dict(load_json(a.net))
        inputs.append(a.net)
    else:
        net = UnrolledNet.initial(a.layers, rho0=rho0, gamma=gamma)
    base = UnrolledNet.initial(net.depth, rho0=rho0, gamma=gamma, sparsity_op=net.sparsity_op)
    untuned = nmse_by_depth(base, test_set)
    tuned = nmse_by_depth(net, test_set)
    rows = [(t + 1, untuned[t], tuned[t]) for t in range(net.depth)]
    _write_csv(a.out, ("depth", "nmse_untuned", "nmse_tuned"), rows)
    return EXIT_OK, [a.out], inputs


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "sweep": cmd_sweep, "dataset": cmd_dataset,
            "tune": cmd_tune, "eval": cmd_eval}


# -- parser ---------------------------------------------------------------------

class _Marked(argparse.Action):
    """Store a value and remember that the user gave it explicitly."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        setattr(namespace, self.dest + "_set", True)


def _add_solver_flags(p):
    p.add_argument("--algo", choices=ALGORITHMS, default="ista")
    p.add_argument("--init", help="gain file with the initial K (default: LQR gain)")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--reg", default="l1",
                   choices=("l1", "weighted_l1", "block_l1", "weighted_block_l1"))
    p.add_argument("--epsilon", type=float, default=1e-4, help="reweighting offset")
    p.add_argument("--rho0", type=float, default=100.0, action=_Marked)
    p.add_argument("--alpha", type=float, default=1.5, action=_Marked)
    p.add_argument("--max-backtracks", type=int, default=60)
    p.add_argument("--lenient", action="store_true",
                   help="reject candidates on instability only")
    p.add_argument("--ball", choices=("l0", "l1", "block_l1"), default="l0")
    p.add_argument("--radius", type=float, default=100.0)
    p.add_argument("--armijo-c", type=float, default=1e-4)
    p.add_argument("--rho", type=float, default=100.0, help="ADMM penalty")
    p.add_argument("--eps-abs", type=float, default=1e-4)
    p.add_argument("--eps-rel", type=float, default=1e-2)
    p.add_argument("--inner-steps", type=int, default=50)
    p.add_argument("--inner-tol", type=float, default=1e-6)
    p.add_argument("--s", type=int, default=100, help="GraSP nonzero budget")
    p.add_argument("--exempt-diagonal", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--count-mode", choices=("elements", "blocks"), default="elements")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", required=True)
    common.add_argument("--tol", type=float, default=1e-4)
    common.add_argument("--max-iter", type=int, default=10000)
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")

    parser = _Parser(prog="sparselqr", description="Sparse LQR feedback design.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write the multi-agent benchmark plant")
    p.add_argument("--agents", type=int, required=True)

    p = sub.add_parser("solve", parents=[common], help="run one solver on a plant file")
    p.add_argument("--plant", required=True)
    p.add_argument("--trace", help="trace CSV path (default: <out>.trace.csv)")
    _add_solver_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="solve over a range of gamma or budgets")
    p.add_argument("--plant", required=True)
    p.add_argument("--values", required=True, help="a,b,c or start:stop:count")
    _add_solver_flags(p)

    p = sub.add_parser("dataset", parents=[common], help="perturbed plants with reference gains")
    p.add_argument("--agents", type=int, default=5)
    p.add_argument("--plant", help="base plant file (overrides --agents)")
    p.add_argument("--count", type=int, default=120)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--targets", choices=("A", "A,B1,B2"), default="A")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--rho0", type=float, default=100.0)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--reg", default="l1",
                   choices=("l1", "weighted_l1", "block_l1", "weighted_block_l1"))

    for name, helptext in (("tune", "train an unrolled net"), ("eval", "NMSE versus depth")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--dataset", required=True)
        p.add_argument("--train-count", type=int, default=100)
        p.add_argument("--layers", type=int, default=10)
        p.add_argument("--rho0", type=float, default=100.0, action=_Marked)
        p.add_argument("--gamma", type=float, default=1.0, action=_Marked)
        if name == "tune":
            p.add_argument("--epochs", type=int, default=1000)
            p.add_argument("--step", type=float, default=0.05)
            p.add_argument("--perturb", type=float, default=1e-3)
            p.add_argument("--batch", type=int, default=8)
            p.add_argument("--method", choices=("spsa", "fd"), default="spsa")
            p.add_argument("--sparsity-op", choices=("elementwise", "block"),
                           default="elementwise")
        else:
            p.add_argument("--net", help="trained net file (default: untuned net)")
            p.add_argument("--estimates", help="gains to score against the references")

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    return parser


def _sibling(path, suffix):
    root, _ = os.path.splitext(path)
    return root + suffix


def _manifest(a, argv, code, outputs, inputs, wall):
    config = {k: v for k, v in sorted(vars(a).items()) if not k.endswith("_set")}
    return {
        "tool": "sparselqr",
        "version": __version__,
        "command": a.command,
        "argv": list(argv),
        "config": config,
        "seed": a.seed,
        "inputs": {p: file_sha256(p) for p in inputs},
        "outputs": {p: file_sha256(p) for p in outputs},
        "exit_code": code,
        "wall_time_s": wall,
    }


def _run(argv):
    parser = build_parser()
    a = parser.parse_args(argv)
    if a.command == "replay":
        m = load_json(a.manifest)
        if "argv" not in m:
            raise ParseError("manifest has no 'argv'", field="argv")
        return _run(m["argv"])
    for flag in ("rho0", "alpha", "gamma"):
        if not hasattr(a, flag + "_set"):
            setattr(a, flag + "_set", False)
    if a.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    t0 = time.perf_counter()
    code, outputs, inputs = COMMANDS[a.command](a)
    wall = time.perf_counter() - t0
    path = a.manifest or a.out + ".manifest.json"
    save_json(_manifest(a, argv, code, outputs, inputs, wall), path)
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SparseLQRError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
