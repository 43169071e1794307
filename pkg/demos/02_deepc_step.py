"""One Lasso-regularized DeePC step and the effect of lambda_g.

Uses noiseless data of a second-order LTI system. With a tiny Lasso weight the
predicted output matches the true response of the plant to the optimal input
sequence; increasing lambda_g shrinks the selector's 1-norm monotonically and
makes it sparser.

Run with ``python3 demos/02_deepc_step.py``.
"""

from dataclasses import replace

import numpy as np

from lassodeepc.deepc import DeePCProblem, selected_components, solve_step
from lassodeepc.plant import LTI_ORDER, lti_oracle_response
from lassodeepc.signal_data import Trajectory, build_hankel_blocks

RHO, L = 4, 6
rng = np.random.default_rng(1)

# %% Offline data: 120 samples under a uniform random input.
u_data = rng.uniform(-1, 1, (120, 1))
y_data, _ = lti_oracle_response(np.zeros(LTI_ORDER), u_data)
data = build_hankel_blocks(Trajectory(u_data, y_data), RHO, L)

# %% A fresh past window from an unknown initial state.
u_past = rng.uniform(-1, 1, (RHO, 1))
y_past, state = lti_oracle_response(rng.normal(size=LTI_ORDER), u_past)
z_ini = np.concatenate([u_past.ravel(), y_past.ravel()])

problem = DeePCProblem(RHO, L, Q=1.0, R=0.1, lambda_g=1e-8, lambda_2=1e-8,
                       y_ref=np.ones(L), u_min=-2.0, u_max=2.0)
sol = solve_step(problem, data, z_ini)
y_true, _ = lti_oracle_response(state, sol.u_f)
print("status:", sol.status.value)
print("predicted y:", np.round(sol.y_f.ravel(), 4))
print("true y     :", np.round(y_true.ravel(), 4))
print(f"prediction error {np.max(np.abs(sol.y_f - y_true)):.2e}")

# %% Shrinkage: the selector 1-norm never grows with lambda_g.
print("\nlambda_g   |g|_1     nonzeros   first input")
for lam in 10.0 ** np.arange(-3, 4):
    s = solve_step(replace(problem, lambda_g=float(lam)), data, z_ini)
    print(f"{lam:8.0e} {s.norm1:9.4f} {int(selected_components(s).sum()):8d} "
          f"{s.first_input[0]:+10.4f}")
