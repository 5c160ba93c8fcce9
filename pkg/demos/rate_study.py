"""Reconstruct u(t) from noisy final data and watch the error shrink with eps.

Run: python demos/rate_study.py
"""

import numpy as np

from backward_rd import ExperimentConfig, run_rate_study

# linear problem (F = 0): at t = T/2 the log-log slope should be close to 1/4
cfg = ExperimentConfig(eval_times=(0.5,), eps_sweep=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6))
fit = run_rate_study(cfg)

print("eps           error")
for cell in fit.cells:
    print(f"{cell['eps']:<12.1e}  {cell['error']:.4e}")

(row,) = fit.fits
print(f"\nfitted slope {row['slope']:.4f} +- {row['stderr']:.4f}, predicted {row['predicted']:.4f}")

# logistic growth with the clamped nonlinearity: smaller beta gives a faster rate
for beta in (0.1, 0.3):
    cfg = ExperimentConfig(law_params={"a": 1.0, "b": 1.0, "N": 1}, beta=beta, amplitude=0.1, normalize="max",
                           mean=0.1, eval_times=(0.8,), eps_sweep=tuple(10.0 ** -np.arange(5, 11)))
    (row,) = run_rate_study(cfg).fits
    print(f"logistic, beta={beta}: slope {row['slope']:.4f}, predicted {row['predicted']:.4f}")
