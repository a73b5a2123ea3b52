"""Train the shared autoencoder across simulated clients, with and without the proximal term.

Run with ``python demos/federated_training.py``. Takes about ten seconds.
"""

from __future__ import annotations

from dataclasses import replace

from frba.config import RunConfig
from frba.data import generate_synthetic
from frba.federation import run_simulation


def main() -> None:
    records = generate_synthetic(20, 200, 0.0, seed=0)
    base = RunConfig().simulation_config()
    runs = {
        "mu=0.01": run_simulation(records, base),
        "mu=0": run_simulation(records, replace(base, train=replace(base.train, proximal_mu=0.0))),
    }
    print(f"{'round':>5}" + "".join(f"{k:>12}" for k in runs))
    n = min(len(r.rounds) for r in runs.values())
    for i in [0, *range(9, n, 10)]:
        print(f"{i + 1:>5}" + "".join(f"{r.mse_series[i]:12.5f}" for r in runs.values()))
    t = runs["mu=0.01"].global_thresholds
    print(f"global thresholds: lower {t.t_lower:.4f}  upper {t.t_upper:.4f}")


if __name__ == "__main__":
    main()
