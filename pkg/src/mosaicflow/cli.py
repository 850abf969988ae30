"""Command-line front end: ``mosaicflow [global flags] <command> [options]``.

Commands: ``gen-data``, ``train``, ``solve``, ``schwarz-demo``, ``analyze``.
Every command writes ``resolved_config.json`` next to its outputs. Exit codes:
0 success, 2 configuration error, 3 I/O or format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .errors import ArrangementError, ContractError, DataError, DomainError, FormatError, NumericalError

log = logging.getLogger("mosaicflow")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


# ---------------------------------------------------------------- helpers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.ndarray, tuple)):
        return list(v)
    if isinstance(v, Path):
        return str(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config") and not k.startswith("_")}


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_pgm(field, path) -> dict:
    """8-bit plain (P2) heatmap, top row first; vertices outside the domain are black.

    Returns the linear normalization ``{"min", "max"}`` that maps to 0..255.
    """
    data = np.asarray(field.data, dtype=float)
    valid = np.isfinite(data)
    lo = float(data[valid].min()) if valid.any() else 0.0
    hi = float(data[valid].max()) if valid.any() else 0.0
    span = hi - lo
    scaled = np.zeros_like(data) if span == 0 else (data - lo) / span * 255.0
    pix = np.where(valid, np.rint(scaled), 0).astype(int)[::-1]
    lines = ["P2", f"{field.nx} {field.ny}", "255"]
    lines += [" ".join(map(str, row)) for row in pix]
    Path(path).write_text("\n".join(lines) + "\n")
    return {"min": lo, "max": hi}


def _parse_layers(text):
    """``"1"`` -> 1; ``"vhc,c"`` -> ["vhc", "c"]; ``"none"`` or ``""`` -> 0."""
    if isinstance(text, (int, list)):
        return text
    text = str(text).strip()
    if text in ("", "none"):
        return 0
    if text.isdigit():
        return int(text)
    return [part.strip() for part in text.split(",")]


def _parse_configurations(text):
    if isinstance(text, list):
        return [_parse_layers(c) for c in text]
    return [_parse_layers(c) for c in str(text).split(";")]


def _domain_from_args(args):
    from .mosaic.domains import BoundaryCondition, DomainSpec, load_domain_spec
    from .field import DomainMask

    if args.domain:
        spec = load_domain_spec(args.domain)
        if args.bc:
            spec = DomainSpec(spec.mask, BoundaryCondition(args.bc, {}), spec.edge_length, spec.name)
        return spec
    w, h = args.rectangle
    return DomainSpec(DomainMask.rectangle(w, h), BoundaryCondition(args.bc or "paper_g2", {}), 1.0, f"{w}x{h}")


def _genome_solver(args):
    from .fd import NumericGenomeSolver
    from .gfnet.checkpoint import checkpoint_load
    from .gfnet.solver import GFNetGenomeSolver

    if args.solver == "oracle":
        return NumericGenomeSolver(), None
    if not args.checkpoint:
        raise ContractError("--solver gfnet needs --checkpoint")
    model = checkpoint_load(args.checkpoint)
    return GFNetGenomeSolver(model), model


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    from .gp import HyperRanges, generate_dataset

    ranges = HyperRanges(
        lengthscale=tuple(args.lengthscale),
        variance=tuple(args.variance),
        family=args.family,
        power=tuple(args.power),
        jitter=args.jitter,
    )
    if args.n_samples < 1:
        raise ContractError("n_samples must be positive")
    out = _out_dir(args.out)
    ds = generate_dataset(out, args.n_samples, ranges, args.n_data_points, args.n_per_edge, args.seed, args.edge_length)
    _write_json(out / "resolved_config.json", _resolved(args))
    print(f"{len(ds)} samples -> {out / 'manifest.json'}")
    return EXIT_OK


def _build_model(args):
    from .gfnet.model import from_preset, init_model

    if args.arch:
        arch = args.arch.lower()
        hidden = args.hidden or ((32, 64, 96, 128) if arch == "lpfc" else (128, 96, 64, 32))
        return init_model("FC" if arch.startswith("fc") else "LPFC", hidden, exact_bc=arch == "fc-bc", seed=args.seed, precision=args.precision)
    return from_preset(args.preset, seed=args.seed, precision=args.precision)


def cmd_train(args) -> int:
    from .analysis import model_test_mar
    from .gfnet.checkpoint import checkpoint_save, load_train_state, save_train_state
    from .gfnet.loss import LossConfig
    from .gfnet.train import TrainConfig, data_mae, train
    from .gp import load_dataset

    dataset = load_dataset(args.data)
    model = _build_model(args)
    loss_cfg = LossConfig(args.alpha, args.beta, args.n_collocation, not args.no_adaptive)
    cfg = TrainConfig(
        args.lr0, args.decay, args.patience, args.threshold, args.lr_min, args.batch_size, tuple(args.split), args.seed, args.max_epochs
    )
    resume = load_train_state(Path(args.resume) / "state" if (Path(args.resume) / "state").is_dir() else args.resume) if args.resume else None
    out = _out_dir(args.out)
    _write_json(out / "resolved_config.json", _resolved(args))

    def progress(epoch, rec):
        log.info("epoch %d train %.4e val %.4e lr %.2e", epoch, rec["train_loss"], rec["val_loss"], rec["lr"])

    result = train(dataset, model, loss_cfg, cfg, resume=resume, stop_after=args.stop_after, callback=progress)
    checkpoint_save(result.model, out / "checkpoint")
    save_train_state(result.state, out / "state")
    with (out / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "lr"])
        for r in result.history:
            w.writerow([r["epoch"], repr(float(r["train_loss"])), repr(float(r["val_loss"])), repr(float(r["lr"]))])
    report = {
        "epochs": result.state.epoch,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "train_mae": result.train_mae,
        "initial_val_loss": result.history[0]["val_loss"] if result.history else None,
        "final_val_loss": result.history[-1]["val_loss"] if result.history else None,
    }
    if args.test_data:
        test = load_dataset(args.test_data)
        report["test_mae"] = data_mae(result.model, test.traces(), test.data_arrays())
        report["test_mar"] = model_test_mar(result.model, test.traces())
    _write_json(out / "report.json", report)
    print(f"trained {report['epochs']} epochs; best val {result.best_val_loss:.4e}; checkpoint -> {out / 'checkpoint'}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .fd import solve_dirichlet
    from .field import compute_mae, compute_mar_fd, read_field_csv, write_field_csv
    from .mosaic.arrangement import build_arrangement
    from .mosaic.predictor import mf_predict

    spec = _domain_from_args(args)
    arrangement = build_arrangement(spec.mask, _parse_layers(args.aux_layers), spec.edge_length, args.n_per_edge, args.order)
    out = _out_dir(args.out)
    _write_json(out / "resolved_config.json", _resolved(args))
    report = {"domain": spec.name, "n_cells": len(spec.mask), "n_genomes": len(arrangement), "counts": arrangement.counts()}
    if args.build_only:
        _write_json(out / "report.json", report)
        print(f"arrangement: {len(arrangement)} genomes {arrangement.counts()}")
        return EXIT_OK
    solver, _ = _genome_solver(args)
    values = spec.bc_values(args.n_per_edge)
    started = time.time()
    result = mf_predict(arrangement, values, solver, eps=args.eps, max_iterations=args.max_iter, init=args.init, workers=args.threads)
    elapsed = time.time() - started
    write_field_csv(result.field, out / "field.csv")
    report["pgm_normalization"] = write_pgm(result.field, out / "field.pgm")
    report["convergence"] = result.report.to_dict()
    report["mar"] = compute_mar_fd(result.field)
    if args.reference != "none":
        if args.reference == "direct":
            ref = solve_dirichlet(spec.mask, values, args.n_per_edge + 1, spec.edge_length)
        else:
            ref = read_field_csv(args.reference)
        report["mae"] = compute_mae(result.field, ref)
    report["metadata"] = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)), "elapsed_s": elapsed}
    _write_json(out / "report.json", report)
    status = "converged" if result.report.converged else "not converged"
    print(f"{status} after {result.report.iterations} iterations; field -> {out / 'field.csv'}")
    return EXIT_OK


def cmd_schwarz_demo(args) -> int:
    from .mosaic.demo import compare_modes
    from .mosaic.domains import BoundaryCondition

    bc = BoundaryCondition(args.bc, {"value": args.value} if args.bc == "constant" else {})
    res = compare_modes(bc, args.tol, args.max_iter, args.init)
    simple, aux = res["simple_exchange"], res["auxiliary"]
    out = _out_dir(args.out)
    _write_json(out / "resolved_config.json", _resolved(args))
    with (out / "schwarz.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mae_simple", "mae_auxiliary"])
        for it in range(max(len(simple.mae), len(aux.mae))):
            cell = lambda m: repr(float(m[it])) if it < len(m) else ""
            w.writerow([it + 1, cell(simple.mae), cell(aux.mae)])
    report = {
        "iterations_simple": simple.iterations,
        "iterations_auxiliary": aux.iterations,
        "converged_simple": simple.report.converged,
        "converged_auxiliary": aux.report.converged,
        "speedup": res["speedup"],
        "tolerance": args.tol,
    }
    _write_json(out / "report.json", report)
    print(f"simple {simple.iterations} iterations, auxiliary {aux.iterations} ({res['speedup']:.1f}x)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analysis import breakdown_row, decompose_errors, density_sweep, write_rows
    from .mosaic.arrangement import build_arrangement

    spec = _domain_from_args(args)
    solver, model = _genome_solver(args)
    if args.train_mae is not None:
        train_mae = args.train_mae
    elif model is not None:
        if "train_mae" not in model.fingerprint:
            raise ContractError("checkpoint has no recorded train_mae; pass --train-mae")
        train_mae = float(model.fingerprint["train_mae"])
    else:
        train_mae = 0.0
    out = _out_dir(args.out)
    _write_json(out / "resolved_config.json", _resolved(args))
    values = spec.bc_values(args.n_per_edge)
    arrangement = build_arrangement(spec.mask, _parse_layers(args.aux_layers), spec.edge_length, args.n_per_edge)
    b = decompose_errors(solver, train_mae, spec.mask, values, arrangement, args.eps, args.max_iter, args.n_per_edge, spec.edge_length)
    write_rows([breakdown_row(b)], out / "breakdown.csv")
    configs = _parse_configurations(args.configurations)
    rows = density_sweep(solver, spec.mask, values, configs, args.eps, args.max_iter, out / "sweep.csv", args.n_per_edge, spec.edge_length)
    print(f"final MAE {b.final_mae:.3e} (opt {b.optimization_error:.3e}, gen {b.generalization_error:.3e}, asm {b.assembly_error:.3e}); {len(rows)} sweep rows")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _pair(kind=float):
    return dict(nargs=2, type=kind, metavar=("LOW", "HIGH"))


def _add_domain_args(p):
    p.add_argument("--domain", help="domain spec JSON")
    p.add_argument("--rectangle", nargs=2, type=int, default=[2, 2], metavar=("W", "H"))
    p.add_argument("--bc", help="boundary condition family (overrides the spec's)")
    p.add_argument("--solver", choices=("oracle", "gfnet"), default="oracle")
    p.add_argument("--checkpoint")
    p.add_argument("--aux-layers", default="1", help='layer count or comma list such as "vhc,c"')
    p.add_argument("--eps", type=float)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--n-per-edge", type=int, default=32)


def _add_global_args(p, suppress: bool):
    # repeated on every subcommand so the flags may follow it; there they only override
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="JSON config; flat keys or one object per command")
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--threads", type=int, default=d(os.cpu_count() or 1))
    p.add_argument("--precision", choices=("f32", "f64"), default=d("f64"))
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosaicflow", description="Learned genome solvers assembled into Laplace solutions.")
    _add_global_args(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_args(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)

    p = sub.add_parser("gen-data", help="sample GP boundary traces and solve for interior data")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--n-data-points", type=int, default=100)
    p.add_argument("--n-per-edge", type=int, default=32)
    p.add_argument("--edge-length", type=float, default=1.0)
    p.add_argument("--lengthscale", default=[0.3, 3.0], **_pair())
    p.add_argument("--variance", default=[0.25, 4.0], **_pair())
    p.add_argument("--power", default=[1.0, 2.0], **_pair())
    p.add_argument("--family", choices=("squared_exponential", "power_exponential"), default="squared_exponential")
    p.add_argument("--jitter", type=float, default=1e-10)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a genome network")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", default="lpfc-desk")
    p.add_argument("--arch", choices=("fc", "lpfc", "fc-bc"), help="overrides --preset")
    p.add_argument("--hidden", nargs="+", type=int)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--n-collocation", type=int, default=400)
    p.add_argument("--no-adaptive", action="store_true", help="uniform collocation points")
    p.add_argument("--lr0", type=float, default=5e-4)
    p.add_argument("--decay", type=float, default=0.8)
    p.add_argument("--patience", type=int, default=200)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--lr-min", type=float, default=1e-7)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--split", nargs=2, type=int, default=[9, 1])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--stop-after", type=int, help="epochs to run in this call; resumable")
    p.add_argument("--resume", help="output directory (or state directory) of an earlier run")
    p.add_argument("--test-data", help="dataset for test MAE/MAR in the report")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="assemble a domain solution with the mosaic predictor")
    _add_domain_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--order", choices=("vh", "hv"), default="vh")
    p.add_argument("--init", choices=("zero", "extrapolate"), default="zero")
    p.add_argument("--reference", default="direct", help='"direct", "none" or a field CSV')
    p.add_argument("--build-only", action="store_true", help="only build and count the arrangement")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("schwarz-demo", help="two-genome simple vs auxiliary exchange")
    p.add_argument("--out", required=True)
    p.add_argument("--bc", default="harmonic_quadratic")
    p.add_argument("--value", type=float, default=1.0, help="level of the constant BC")
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=600)
    p.add_argument("--init", choices=("zero", "extrapolate"), default="zero")
    p.set_defaults(func=cmd_schwarz_demo)

    p = sub.add_parser("analyze", help="error breakdown and genome-density sweep")
    _add_domain_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--train-mae", type=float, help="defaults to the checkpoint's recorded value (0 for the oracle)")
    p.add_argument("--configurations", default="0;1;2;3", help='";"-separated layer specs')
    p.set_defaults(func=cmd_analyze)
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    config_path = pre.parse_known_args(argv)[0].config
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if not config_path or command is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(config_path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read config {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ContractError(f"config {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ContractError("config must be a JSON object")
    flat = {k: v for k, v in cfg.items() if not isinstance(v, dict)}
    for key, value in cfg.items():
        if isinstance(value, dict) and key not in subparsers:
            raise ContractError(f"unknown config section {key!r}")
    flat.update(cfg.get(command, {}))
    sub = subparsers[command]
    known_sub = {a.dest for a in sub._actions}
    known_global = {a.dest for a in parser._actions}
    sub_defaults, global_defaults = {}, {}
    for key, value in flat.items():
        dest = key.replace("-", "_")
        if dest in known_sub:
            sub_defaults[dest] = value
        elif dest in known_global:
            global_defaults[dest] = value
        else:
            raise ContractError(f"unknown config key {key!r} for command {command!r}")
    # a required option supplied by the config no longer needs the flag
    for action in sub._actions:
        if action.dest in sub_defaults:
            action.required = False
    sub.set_defaults(**sub_defaults)
    parser.set_defaults(**global_defaults)
    return parser.parse_args(argv)


def _threads(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise ContractError("threads must be positive")
        with _threads(args.threads):
            return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractError, DomainError, DataError, ArrangementError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
