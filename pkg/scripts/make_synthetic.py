"""Write the bundled 200-row censored dataset used by the CLI tests and README.

Responses live on the concentration scale: the latent value g follows the
spatial regression model and the reported concentration is the inverse of
the iterated-log transform. Two testing methods give two detection limits.
"""
import argparse
import csv

import numpy as np

from censpat.simulate import spatial_noise


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/synthetic_200.csv")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=20240)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    n = args.n
    sites = rng.uniform(0, 1, size=(n, 2))
    X = rng.normal(size=(n, 4))
    beta = np.array([0.25, 0.0, -0.2, 0.0])
    g = 1.2 + X @ beta + 0.3 * spatial_noise(sites, 0.15, 0.8, rng)
    g = np.maximum(g, 0.0)
    conc = np.expm1(np.expm1(g))
    method_b = rng.random(n) < 0.3
    limits = np.where(method_b, np.quantile(conc, 0.45), np.quantile(conc, 0.3))
    cens = conc <= limits
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site_id", "x", "y", "response", "censored", "limit",
                    "elevation", "urban", "wells", "clay"])
        for i in range(n):
            w.writerow([f"S{i:03d}", f"{sites[i, 0]:.6f}", f"{sites[i, 1]:.6f}",
                        "" if cens[i] else f"{conc[i]:.6f}", int(cens[i]),
                        f"{limits[i]:.6f}" if cens[i] else ""]
                       + [f"{v:.6f}" for v in X[i]])
    print(f"wrote {args.out}: {n} rows, {cens.mean():.1%} censored")


if __name__ == "__main__":
    main()
