"""Where to evaluate the regularized solution when the target is t = 0.

Run: python demos/t_eps.py
"""

from backward_rd import select_t_eps

print("eps       beta   t_eps          interval")
for beta in (None, 0.3):
    for k in (4, 6, 8, 10, 12):
        r = select_t_eps(10.0**-k, 1.0, 1, beta)
        print(f"1e-{k:<5d} {str(beta):6s} {r.t_eps:.6e}   ({r.interval[0]:.3e}, {r.interval[1]:.3e})")
