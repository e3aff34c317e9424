"""The adaptive group lasso solver on its own: a lambda path with KKT checks.

    python3 demos/group_lasso_path.py
"""

import numpy as np

from jadeode import sparsereg

rng = np.random.default_rng(0)
n, groups, L = 200, 6, 4
X = np.column_stack([np.ones(n), rng.normal(size=(n, groups * L))])
beta = np.zeros(1 + groups * L)
beta[1:1 + L] = [1.0, -0.5, 0.3, 0.2]
beta[1 + 2 * L: 1 + 3 * L] = [0.4, 0.4, -0.4, 0.1]
y = 2.0 + X @ beta + 0.5 * rng.normal(size=n)

prob = sparsereg.GroupProblem(X, y, L)
lmax = sparsereg.lambda_max(prob)
print(f"lambda_max = {lmax:.3f}")
for frac in (1.001, 0.9, 0.5, 0.2, 0.05, 0.01):
    prob.lam = frac * lmax
    sol = sparsereg.solve(prob)
    print(f"lam = {frac:5.3f} lambda_max  active {np.nonzero(sol.active)[0].tolist()!s:14}"
          f" kkt {sol.kkt_residual:.1e}  iters {sol.iterations}")

# adaptive weights from a pilot fit: groups the pilot zeroed stay out
prob.lam = 0.05 * lmax
pilot = sparsereg.solve(prob)
w = sparsereg.adaptive_weights(pilot)
adaptive = sparsereg.solve(sparsereg.GroupProblem(X, y, L, w, 0.05 * lmax))
print("adaptive weights:", np.round(w, 3))
print("adaptive active groups:", np.nonzero(adaptive.active)[0].tolist())
