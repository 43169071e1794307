"""The explicit piecewise-affine selector law.

Around any optimal solution, the active set and the sign pattern of the
selector define a polyhedral region of initial windows on which the selector
is an affine function of z_ini. This script extracts that law, samples the
region and compares the law with fresh numerical solves, then explores the
neighbouring regions.

Run with ``python3 demos/03_explicit_law.py``.
"""

import numpy as np

from lassodeepc.deepc import DeePCController, DeePCProblem, InitialWindow
from lassodeepc.explicit import (ZERO, closed_form_selector, enumerate_regions,
                                 extract_certificate, local_affine_law, sample_region,
                                 verify_kkt)
from lassodeepc.signal_data import BlockDataMatrix, MatrixKind

RHO, L, N_G = 2, 2, 12
rng = np.random.default_rng(4)

# %% A small synthetic data matrix and a consistent initial window.
data = BlockDataMatrix(rng.normal(size=(2 * RHO, N_G)), rng.normal(size=(L, N_G)),
                       rng.normal(size=(L, N_G)), np.ones(N_G, dtype=int),
                       MatrixKind.HANKEL, RHO, L, 1, 1)
z = data.z_p @ (rng.normal(size=N_G) / np.sqrt(N_G))
problem = DeePCProblem(RHO, L, Q=1.0, R=0.5, lambda_g=0.3, lambda_2=1e-3,
                       y_ref=np.ones(L), u_min=-0.8, u_max=0.8)
ctrl = DeePCController(problem, data)
sol = ctrl.solve(InitialWindow(z))
print("status:", sol.status.value, "| KKT residuals:", verify_kkt(sol, data, problem).max())

# %% Certificate -> affine law g = F z + f on {z : P z <= p}.
cert = extract_certificate(sol)
region = local_affine_law(cert, data, problem)
print("sign pattern:", cert.sign_pattern.tolist())
print("region:", region.P.shape[0], "inequalities; contains z_ini:", region.contains(z, 1e-9))

samples = sample_region(region, 50, rng, radius=1.0)
err = max(np.max(np.abs(region.evaluate(s) - ctrl.solve(InitialWindow(s)).g)) for s in samples)
print(f"law vs solver on {len(samples)} samples: {err:.2e}")

if np.all(cert.sign_pattern != ZERO):
    cf = closed_form_selector(cert, data, problem, z)
    print(f"dense closed form vs law: {np.max(np.abs(cf - region.evaluate(z))):.2e}")

# %% Neighbouring pieces of the piecewise-affine map.
regions = enumerate_regions(data, problem, z, radius=0.5, max_regions=20)
print(f"explored {len(regions)} regions within 0.5 of z_ini; nonzeros per region:",
      [int(np.sum(r.certificate.sign_pattern != ZERO)) for r in regions])
