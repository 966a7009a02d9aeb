"""t-SNE on two well separated Gaussian clusters: purity, KL trace and an SVG.

    python3 scripts/tsne_demo.py --perplexity 15 --svg /tmp/clusters.svg
"""

import argparse
from pathlib import Path

import numpy as np

from midilstm.analysis import (
    TsneConfig,
    neighbor_purity,
    project_points,
    scatter_svg,
    tsne,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--perplexity", type=float, default=15.0)
    ap.add_argument("--gap", type=float, default=50.0, help="centre distance in units of sigma")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--svg")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    a = rng.normal(0.0, 1.0, (30, 10))
    b = rng.normal(0.0, 1.0, (30, 10))
    b[:, 0] += args.gap
    X = np.vstack([a, b])
    labels = [0] * 30 + [1] * 30

    cfg = TsneConfig(perplexity=args.perplexity, rng_seed=args.seed)
    res = tsne(X, cfg)
    for it in (1, 50, 100, 250, 500, 1000):
        print(f"iteration {it:5d}  KL {res.kl_trace[it - 1]:.4f}")
    print(f"nearest-neighbour purity {neighbor_purity(res.embedding, labels):.3f}")

    if args.svg:
        pts = project_points(X, [f"p{i}" for i in range(60)], [40 + 40 * l for l in labels],
                             ["on"] * 60, cfg)
        Path(args.svg).write_text(scatter_svg(pts))
        print(f"wrote {args.svg}")


if __name__ == "__main__":
    main()
