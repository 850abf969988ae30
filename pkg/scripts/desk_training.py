"""Train the desk-scale genome networks on one shared dataset and report test metrics.

Trains LPFC with and without the residual term plus an FC baseline, saves each
checkpoint under ``--out`` and writes ``summary.json``.
"""

import argparse
import json
import time
from pathlib import Path

from mosaicflow.analysis import model_test_mar
from mosaicflow.gfnet.checkpoint import checkpoint_save
from mosaicflow.gfnet.loss import LossConfig
from mosaicflow.gfnet.model import from_preset
from mosaicflow.gfnet.train import TrainConfig, data_mae, train
from mosaicflow.gp import generate_dataset

# name -> (preset, alpha, collocation points, precision, epochs, initial lr)
RUNS = {
    "lpfc": ("lpfc-desk", 1e-3, 400, "f64", 400, 5e-4),
    "lpfc_alpha0": ("lpfc-desk", 0.0, 400, "f64", 400, 5e-4),
    "fc": ("fc-desk", 1e-3, 64, "f32", 300, 1e-3),
}


def run(name, dataset, test, out: Path, seed: int = 0, epochs: int | None = None) -> dict:
    preset, alpha, n_colloc, precision, default_epochs, lr0 = RUNS[name]
    model = from_preset(preset, seed=seed, precision=precision)
    t0 = time.perf_counter()
    result = train(
        dataset,
        model,
        LossConfig(alpha=alpha, n_collocation=n_colloc),
        TrainConfig(lr0=lr0, max_epochs=epochs or default_epochs, seed=seed),
    )
    checkpoint_save(result.model, out / name)
    return {
        "preset": preset,
        "alpha": alpha,
        "epochs": result.state.epoch,
        "seconds": time.perf_counter() - t0,
        "train_mae": result.train_mae,
        "test_mae": data_mae(result.model, test.traces(), test.data_arrays()),
        "test_mar": model_test_mar(result.model, test.traces()),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--runs", nargs="+", choices=sorted(RUNS), default=sorted(RUNS))
    ap.add_argument("--n-samples", type=int, default=500)
    ap.add_argument("--n-test", type=int, default=50)
    ap.add_argument("--epochs", type=int, help="override every run's epoch budget")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    dataset = generate_dataset(None, args.n_samples, seed=1)
    test = generate_dataset(None, args.n_test, seed=999)
    args.out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name in args.runs:
        summary[name] = run(name, dataset, test, args.out, args.seed, args.epochs)
        print(name, json.dumps(summary[name]), flush=True)
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
