"""Final MAE against auxiliary-layer count for a trained genome network (or the numeric oracle)."""

import argparse
from pathlib import Path

from mosaicflow.analysis import density_sweep
from mosaicflow.fd import NumericGenomeSolver
from mosaicflow.field import DomainMask
from mosaicflow.gfnet.checkpoint import checkpoint_load
from mosaicflow.mosaic.domains import BoundaryCondition


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", type=Path, help="omit to use the numeric oracle")
    ap.add_argument("--size", type=int, default=2, help="square domain of size x size genomes")
    ap.add_argument("--bc", default="gp")
    ap.add_argument("--bc-seed", type=int, default=7)
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--out", type=Path, default=Path("runs/sweep.csv"))
    args = ap.parse_args()
    model = checkpoint_load(args.checkpoint) if args.checkpoint else NumericGenomeSolver()
    params = {"seed": args.bc_seed} if args.bc == "gp" else {}
    rows = density_sweep(
        model,
        DomainMask.rectangle(args.size, args.size),
        BoundaryCondition(args.bc, params),
        list(range(args.layers + 1)),
        csv_path=args.out,
    )
    for r in rows:
        print(f"{r['arrangement']:>20} {r['n_genomes']:4d} genomes {r['iterations']:4d} it  MAE {r['final_mae']:.3e}")


if __name__ == "__main__":
    main()
