"""Compare D-RBFDD and shallow RBFDD on one MNIST normal-vs-anomaly scenario.

Example::

    python3 scripts/mnist_scenario.py --normal 9 --anomaly 4 --mnist-dir /root/data/mnist
"""

import argparse
import logging
import time
from pathlib import Path

from drbfdd.data import build_scenario, load_idx, subsample_scenario
from drbfdd.evalkit import evaluate
from drbfdd.optim import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mnist-dir", type=Path, default=Path("/root/data/mnist"))
    ap.add_argument("--normal", default="0")
    ap.add_argument("--anomaly", default="1")
    ap.add_argument("--n-normal", type=int, default=2500, help="0 keeps every normal image")
    ap.add_argument("--n-anomalous", type=int, default=500)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--H", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--beta", type=float, default=1e-3)
    ap.add_argument("--lam", type=float, default=1e-3)
    ap.add_argument("--models", default="drbfdd-2d,rbfdd")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    ds = load_idx(args.mnist_dir / "train-images-idx3-ubyte", args.mnist_dir / "train-labels-idx1-ubyte")
    sc = subsample_scenario(build_scenario(ds, args.normal, args.anomaly), args.n_normal, args.n_anomalous, seed=0)
    print(f"scenario {sc.name}: {len(sc.normal)} normal, {len(sc.anomalous)} anomalous")
    for model in args.models.split(","):
        cfg = TrainConfig(model=model, H=args.H, epochs=args.epochs, beta=args.beta, lam=args.lam)
        t = time.perf_counter()
        rep = evaluate(sc, cfg, args.iterations)
        aucs = " ".join(f"{a:.4f}" for a in rep.aucs)
        print(f"{model:<10} mean AUC {rep.mean_auc:.4f}  [{aucs}]  ({time.perf_counter() - t:.0f}s)")


if __name__ == "__main__":
    main()
