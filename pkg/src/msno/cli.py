"""Command-line interface: ``msno <command> [options]``.

Every command prints one JSON line on success.  Failures exit with status 1
(2 for usage errors) and write ``{"error": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from ._validation import ConfigurationError, DatasetError, MsnoError
from .fem import PicardOptions, relative_errors, solve_fine_diffusion, solve_fine_richards
from .field import ForcingKind, KleParams, kle_eigendecomposition, sample_forcing, sample_kle_field
from .gmsfem import breakeven, solve_gmsfem_diffusion, solve_gmsfem_richards
from .grid import DomainKind, build_grid
from .msbasis import assemble_restriction, compute_bases
from .predictor.training import DESK_CONFIGS, FULL_SCALE_CONFIGS, TrainOptions, predict_basis, strict_determinism, train
from .report import RunReport

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _workers() -> int:
    if strict_determinism():
        return 1
    return max(1, int(os.environ.get("MSNO_THREADS", "1")))


def _map(fn, items):
    """Order-preserving map over samples, in worker processes when ``MSNO_THREADS`` > 1."""
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _load_config(value):
    if value is None:
        return {}
    text = value.strip()
    if not text.startswith("{"):
        path = Path(value)
        if not path.exists():
            raise ConfigurationError(f"config file {path} not found")
        text = path.read_text(encoding="utf-8")
    cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _equation_solvers(equation, picard):
    if equation == "diffusion":
        return (lambda g, k, f: solve_fine_diffusion(g, k, f)), (lambda g, k, f, R: solve_gmsfem_diffusion(g, k, f, R))
    return (
        lambda g, k, f: solve_fine_richards(g, k, f, picard),
        lambda g, k, f, R: solve_gmsfem_richards(g, k, f, R, picard),
    )


# ---------------------------------------------------------------- gen-data


def _gen_sample(job):
    grid, params, seed, forcing, gamma, solve = job
    decomp = _kle_cache(params)
    kappa = sample_kle_field(decomp, seed, grid).values
    f = sample_forcing(forcing, seed, grid, gamma=gamma).values
    sample = {"kappa": kappa, "forcing": f}
    if solve in ("diffusion", "both"):
        sample["u_diffusion"] = solve_fine_diffusion(grid, kappa, f).values
    if solve in ("richards", "both"):
        sample["u_richards"] = solve_fine_richards(grid, kappa, f).values
    return sample


_KLE = {}


def _kle_cache(params: KleParams):
    if params not in _KLE:
        _KLE[params] = kle_eigendecomposition(params)
    return _KLE[params]


def cmd_gen_data(args):
    grid = build_grid(args.n_coarse, args.n_fine)
    params = KleParams(**args.kle) if args.kle else KleParams()
    seeds = [args.seed + i for i in range(args.n_samples)]
    forcing = ForcingKind(args.forcing)
    samples = _map(_gen_sample, [(grid, params, s, forcing, args.gamma, args.solve) for s in seeds])
    meta = {"kle": params.to_dict(), "forcing": forcing.value, "gamma": args.gamma, "solve": args.solve}
    io.write_dataset(args.out, samples, seeds, grid, meta)
    return {"command": "gen-data", "out": str(args.out), "n_samples": len(samples), "seeds": [seeds[0], seeds[-1]],
            "n_kle_terms": _kle_cache(params).n_terms}


def _open_data(args):
    if args.data is None:
        raise ConfigurationError("--data is required")
    ds = io.read_dataset(args.data)
    start = args.start or 0
    stop = len(ds) if args.stop is None else args.stop
    ds = ds.subset(start, stop)
    grid = build_grid(ds.manifest["grid"]["n_coarse"], ds.manifest["grid"]["n_fine"])
    return ds, grid


# ---------------------------------------------------------------- build-basis


def cmd_build_basis(args):
    ds, grid = _open_data(args)
    bases, seconds = [], []
    for s in ds.samples:
        t0 = time.perf_counter()
        bases.append(compute_bases(grid, s["kappa"], args.n_basis, method=args.eig_method))
        seconds.append(time.perf_counter() - t0)
    io.write_bases(args.out, bases, ds.seeds, grid, {"n_basis": args.n_basis, "offline_seconds": seconds})
    return {"command": "build-basis", "out": str(args.out), "n_samples": len(bases), "n_domains": grid.n_domains,
            "n_basis": args.n_basis}


# ---------------------------------------------------------------- train


def cmd_train(args):
    ds, grid = _open_data(args)
    if args.oracle:
        io.write_oracle_checkpoint(args.out, grid, args.n_basis)
        return {"command": "train", "out": str(args.out), "oracle": True}
    if len(ds) == 0:
        raise DatasetError("training set is empty")
    kappas = [s["kappa"] for s in ds.samples]
    if args.bases:
        _, bases = io.read_bases(args.bases)
        bases = bases[(args.start or 0) : (args.start or 0) + len(kappas)]
    else:
        bases = [compute_bases(grid, k, args.n_basis) for k in kappas]
    opts = TrainOptions(loss=args.loss, epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                        weight_decay=args.weight_decay, seed=args.seed, lam=args.lam, n_vectors=args.n_vectors,
                        dtype=args.dtype)
    configs = dict(FULL_SCALE_CONFIGS if args.full_scale else DESK_CONFIGS)
    if args.layers or args.hidden:
        configs = {
            k: replace(c, n_layers=args.layers or c.n_layers, hidden=args.hidden or c.hidden) for k, c in configs.items()
        }
    t0 = time.perf_counter()
    ckpt = train(grid, kappas, bases, opts, configs, args.kinds)
    ckpt.manifest["train_seconds"] = time.perf_counter() - t0
    ckpt.manifest["dataset_seeds"] = list(ds.seeds)
    missing = [k for k in DomainKind if k not in ckpt.models]
    if missing:
        raise ConfigurationError(f"--kinds must cover every domain type to save a checkpoint; missing {[k.value for k in missing]}")
    io.write_checkpoint(args.out, ckpt)
    final = {k.value: m.loss_curve[-1] for k, m in ckpt.models.items()}
    return {"command": "train", "out": str(args.out), "loss": opts.loss, "epochs": opts.epochs, "final_loss": final}


# ---------------------------------------------------------------- solve / evaluate


def _basis_source(args, grid):
    """``bases(kappa) -> list of BasisSet`` for the requested method (None for fine solves)."""
    if args.method == "fine":
        return None
    if args.method == "gmsfem":
        return lambda k: compute_bases(grid, k, args.n_basis)
    if args.checkpoint is None:
        raise ConfigurationError("--checkpoint is required for --method gmsfem-no")
    if io.is_oracle_checkpoint(args.checkpoint):
        m = io.read_checkpoint_manifest(args.checkpoint)["training"]
        return lambda k: compute_bases(grid, k, m["n_basis"], m.get("n_extra", 4))
    ckpt = io.read_checkpoint(args.checkpoint)
    io.resolve_loss_kind(ckpt, getattr(args, "loss", None))
    return lambda k: predict_basis(ckpt, k, grid)


def _fields(args):
    """Coefficient and forcing fields from ``--data`` or freshly sampled from ``--seed``."""
    if args.data is not None:
        ds, grid = _open_data(args)
        return grid, [(s["kappa"], s["forcing"], s) for s in ds.samples], list(ds.seeds)
    grid = build_grid(args.n_coarse, args.n_fine)
    decomp = _kle_cache(KleParams())
    kappa = sample_kle_field(decomp, args.seed, grid).values
    f = sample_forcing(args.forcing, args.seed, grid).values
    return grid, [(kappa, f, {})], [args.seed]


def cmd_solve(args):
    grid, items, seeds = _fields(args)
    if not items:
        raise DatasetError("no samples to solve")
    picard = PicardOptions(args.picard_tol, args.picard_max_iter)
    fine, coarse = _equation_solvers(args.equation, picard)
    source = _basis_source(args, grid)
    out, iters = [], []
    for kappa, f, _ in items:
        if source is None:
            sol = fine(grid, kappa, f)
        else:
            sol = coarse(grid, kappa, f, assemble_restriction(source(kappa), grid))
        out.append({"u": sol.values})
        iters.append(sol.picard_iterations)
    io.write_dataset(args.out, out, seeds, grid, {"method": args.method, "equation": args.equation})
    norms = [float(np.linalg.norm(s["u"])) for s in out]
    return {"command": "solve", "out": str(args.out), "method": args.method, "equation": args.equation,
            "n_samples": len(out), "picard_iterations": iters, "solution_norms": norms}


def _evaluate_sample(job):
    grid, kappa, f, u_ref, equation, picard, n_basis, ckpt = job
    fine, coarse = _equation_solvers(equation, picard)
    timing = {}
    if u_ref is None:
        t0 = time.perf_counter()
        u_ref = fine(grid, kappa, f).values
        timing["fine"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    bases = compute_bases(grid, kappa, n_basis)
    timing["offline"] = time.perf_counter() - t0
    rows = {"gmsfem": relative_errors(u_ref, coarse(grid, kappa, f, assemble_restriction(bases, grid)), grid)}
    if ckpt is not None:
        t0 = time.perf_counter()
        pb = bases if ckpt == "oracle" else predict_basis(ckpt, kappa, grid)
        timing["inference"] = time.perf_counter() - t0
        rows["gmsfem-no"] = relative_errors(u_ref, coarse(grid, kappa, f, assemble_restriction(pb, grid)), grid)
    return rows, timing


def cmd_evaluate(args):
    ds, grid = _open_data(args)
    if len(ds) == 0:
        raise DatasetError("evaluation set is empty")
    picard = PicardOptions(args.picard_tol, args.picard_max_iter)
    ckpt = None
    if args.checkpoint is not None:
        ckpt = "oracle" if io.is_oracle_checkpoint(args.checkpoint) else io.read_checkpoint(args.checkpoint)
    key = f"u_{args.equation}"
    jobs = [
        (grid, s["kappa"], s["forcing"], None if args.recompute else s.get(key), args.equation, picard, args.n_basis, ckpt)
        for s in ds.samples
    ]
    results = _map(_evaluate_sample, jobs)
    config = {"data": str(args.data), "checkpoint": args.checkpoint, "equation": args.equation, "n_basis": args.n_basis,
              "seeds": list(ds.seeds), "picard_tol": args.picard_tol, "picard_max_iter": args.picard_max_iter,
              "grid": ds.manifest["grid"]}
    report = RunReport(config)
    totals = {}
    for rows, timing in results:
        report.record("fine", 0.0, 0.0)
        for method, (l2, h1) in rows.items():
            report.record(method, l2, h1)
        for k, v in timing.items():
            totals.setdefault(k, []).append(v)
    report.timings = {f"{k}_seconds_mean": float(np.mean(v)) for k, v in totals.items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.dumps(), encoding="utf-8")
    return {"command": "evaluate", "out": str(out / "report.json"), "n_samples": len(ds), "means": report.means()}


# ---------------------------------------------------------------- bench


def cmd_bench(args):
    grid = build_grid(args.n_coarse, args.n_fine)
    decomp = _kle_cache(KleParams())
    f = sample_forcing("unit", args.seed, grid).values
    t_data, t_offline, t_inf = [], [], []
    ckpt = io.read_checkpoint(args.checkpoint) if args.checkpoint else None
    for i in range(args.n_samples):
        seed = args.seed + i
        t0 = time.perf_counter()
        kappa = sample_kle_field(decomp, seed, grid).values
        bases = compute_bases(grid, kappa, args.n_basis)
        t_offline.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        solve_fine_richards(grid, kappa, f)
        t_data.append(time.perf_counter() - t0 + t_offline[-1])
        if ckpt is not None:
            t0 = time.perf_counter()
            predict_basis(ckpt, kappa, grid)
            t_inf.append(time.perf_counter() - t0)
        del bases
    per_sample = {"offline_seconds": float(np.mean(t_offline)), "data_seconds": float(np.mean(t_data))}
    result = {"command": "bench", "n_samples": args.n_samples, "grid": [grid.n_coarse, grid.n_fine], **per_sample}
    if ckpt is not None:
        n_train = int(ckpt.manifest.get("n_train_fields", 0))
        t_train = float(ckpt.manifest.get("train_seconds", args.train_seconds or 0.0))
        tdata_total = n_train * per_sample["data_seconds"]
        result.update({
            "inference_seconds": float(np.mean(t_inf)),
            "train_seconds": t_train,
            "data_total_seconds": tdata_total,
            "breakeven_samples": breakeven(tdata_total, t_train, float(np.mean(t_inf)), per_sample["offline_seconds"]),
        })
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(result, indent=2, sort_keys=True), encoding="utf-8")
    return result


# ---------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="msno", description="Multiscale GMsFEM solver with learned basis predictors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands = {}

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON file (or inline JSON object) of option defaults")
        p.add_argument("--out", default=None)
        p.set_defaults(func=fn)
        commands[name] = p
        return p

    def grid_opts(p):
        p.add_argument("--n-coarse", type=int, default=5)
        p.add_argument("--n-fine", type=int, default=101)

    def data_opts(p):
        p.add_argument("--data", default=None, help="dataset directory")
        p.add_argument("--start", type=int, default=None)
        p.add_argument("--stop", type=int, default=None)

    def picard_opts(p):
        p.add_argument("--picard-tol", type=float, default=1e-6)
        p.add_argument("--picard-max-iter", type=int, default=50)

    p = add("gen-data", cmd_gen_data, "sample coefficient and forcing fields, optionally with fine solves")
    grid_opts(p)
    p.add_argument("--n-samples", type=int, default=10)
    p.add_argument("--forcing", choices=[k.value for k in ForcingKind], default="unit")
    p.add_argument("--gamma", type=float, default=2000.0)
    p.add_argument("--solve", choices=["none", "diffusion", "richards", "both"], default="both")
    p.add_argument("--kle", type=json.loads, default=None, help="JSON object of KLE parameters")

    p = add("build-basis", cmd_build_basis, "classical offline stage")
    data_opts(p)
    p.add_argument("--n-basis", type=int, default=8)
    p.add_argument("--eig-method", choices=["sparse", "dense"], default="sparse")

    p = add("train", cmd_train, "train per-domain-type basis predictors")
    data_opts(p)
    p.add_argument("--bases", default=None, help="basis directory from build-basis (recomputed when absent)")
    p.add_argument("--n-basis", type=int, default=8)
    p.add_argument("--loss", choices=["rbfl2", "sal", "sal-pr"], default="sal")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--n-vectors", type=int, default=10)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--kinds", nargs="+", default=["full", "half", "corner"])
    p.add_argument("--full-scale", action="store_true", help="large F-FNO sizes (5 layers, width 128) instead of desk-scale")
    p.add_argument("--layers", type=int, default=None, help="override the F-FNO layer count")
    p.add_argument("--hidden", type=int, default=None, help="override the F-FNO hidden width")
    p.add_argument("--oracle", action="store_true", help="write an exact-eigensolve checkpoint stub")

    p = add("solve", cmd_solve, "fine, GMsFEM or GMsFEM-NO solves")
    data_opts(p)
    grid_opts(p)
    picard_opts(p)
    p.add_argument("--method", choices=["fine", "gmsfem", "gmsfem-no"], default="gmsfem")
    p.add_argument("--equation", choices=["diffusion", "richards"], default="richards")
    p.add_argument("--forcing", choices=[k.value for k in ForcingKind], default="unit")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--n-basis", type=int, default=8)
    p.add_argument("--loss", default=None, help="expected loss kind of the checkpoint")

    p = add("evaluate", cmd_evaluate, "error report against fine references")
    data_opts(p)
    picard_opts(p)
    p.add_argument("--equation", choices=["diffusion", "richards"], default="richards")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--n-basis", type=int, default=8)
    p.add_argument("--recompute", action="store_true", help="re-solve fine references instead of using cached ones")

    p = add("bench", cmd_bench, "timing table and breakeven point")
    grid_opts(p)
    p.add_argument("--n-samples", type=int, default=3)
    p.add_argument("--n-basis", type=int, default=8)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--train-seconds", type=float, default=None)
    return parser, commands


_REQUIRES_OUT = {"gen-data", "build-basis", "train", "solve", "evaluate"}


def parse_args(argv):
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    cfg = _load_config(args.config)
    if cfg:
        known = {a.dest for a in commands[args.command]._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys for {args.command}: {unknown}")
        commands[args.command].set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.command in _REQUIRES_OUT and args.out is None:
        raise UsageError(f"{args.command} requires --out")
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=os.environ.get("MSNO_LOG", "WARNING"), stream=sys.stderr)
    try:
        args = parse_args(argv)
        result = args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc)}), file=sys.stderr)
        return 2
    except (MsnoError, ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
