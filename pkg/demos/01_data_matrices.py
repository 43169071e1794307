"""Data matrices with operating-point labels.

Collects data from the unbalanced disk around two operating points and builds
the four column layouts the controller can use: a plain Hankel matrix, the
explainable Hankel matrix, the Mosaic matrix and the Page matrix. Every
column carries the label of the operating point its window was recorded at
(label 0 marks windows that straddle a switch).

Run with ``python3 demos/01_data_matrices.py``.
"""

import numpy as np

from lassodeepc.plant import Regime, collect_regime
from lassodeepc.signal_data import (build_explainable_hankel, build_hankel_blocks, build_mosaic,
                                    build_page, check_pe, label_by_nearest_op)

RHO, L = 6, 10

# %% Collect 600 samples: 300 near 0.17 rad, then 300 near 1.57 rad.
traj, partition = collect_regime(Regime.TWO_OP_SINGLE_TRANSITION, (0.17, 1.57), T_d=600, seed=0)
print("trajectory:", traj.length, "samples; commanded ranges:", partition.ranges)

# %% Is the input rich enough? Persistency of excitation of order rho + L + 2.
rank, ok = check_pe(traj.u, RHO + L + 2)
print(f"PE of order {RHO + L + 2}: rank {rank}, persistently exciting: {ok}")

# %% The same data in four layouts.
layouts = {
    "Hankel": build_hankel_blocks(traj, RHO, L),
    "explainable Hankel": build_explainable_hankel(traj, partition, RHO, L),
    "Mosaic": build_mosaic(traj, partition, RHO, L),
    "Page": build_page(traj, RHO, L, partition),
}
for name, data in layouts.items():
    labels, counts = np.unique(data.column_groups, return_counts=True)
    print(f"{name:>20}: Z_P {data.z_p.shape}, columns per label "
          f"{dict(zip(labels.tolist(), counts.tolist()))}")

# %% Labels can also come from the measured output instead of the command.
measured = label_by_nearest_op(traj, [0.17, 1.57])
print("ranges labelled by nearest operating point:", len(measured), "ranges")
