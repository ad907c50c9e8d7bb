"""Regenerate the bundled CSV datasets."""
import csv
from pathlib import Path

import numpy as np

from mesreg.simulation import SimConfig, replication_rng, simulate_dgp

OUT = Path(__file__).resolve().parents[1] / "src" / "mesreg" / "datasets"
ASSETS = 5
DAYS = 1744
SCALES = (1.0, 1.2, 1.4, 1.7, 2.0)
RHO = 0.6
DF = 5


def fit_example():
    ds = simulate_dgp(SimConfig(n=500, beta=0.9), replication_rng(7, 0))
    z = np.asarray(ds.z_v)
    with open(OUT / "fit_example.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "x", "z1", "z2"])
        for row in zip(ds.y, ds.x, z[:, 1], z[:, 2]):
            w.writerow([f"{v:.10g}" for v in row])


def erc_assets():
    rng = np.random.default_rng(20240917)
    burn = 100
    T = DAYS + burn + 5
    h = np.empty(T)
    h[0] = 0.0
    for t in range(1, T):
        h[t] = 0.98 * h[t - 1] + 0.08 * rng.standard_normal()
    vol = np.exp(h)
    corr = np.full((ASSETS, ASSETS), RHO) + (1 - RHO) * np.eye(ASSETS)
    g = rng.multivariate_normal(np.zeros(ASSETS), corr, size=T)
    eps = g / np.sqrt(rng.chisquare(DF, T) / DF)[:, None] * np.sqrt((DF - 2) / DF)
    loss = vol[:, None] * np.asarray(SCALES) * eps - 0.03
    lag = np.array([vol[t - 5:t].mean() if t >= 5 else np.nan for t in range(T)])
    keep = slice(burn + 5, T)
    with open(OUT / "erc_assets.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"asset{d + 1}" for d in range(ASSETS)] + ["vol_lag"])
        for i, (row, v) in enumerate(zip(loss[keep], lag[keep])):
            w.writerow([i] + [f"{x:.6f}" for x in row] + [f"{v:.6f}"])


if __name__ == "__main__":
    fit_example()
    erc_assets()
