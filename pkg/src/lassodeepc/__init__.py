"""Lasso-regularized DeePC with explainable data matrices and its explicit solution.

Submodules: :mod:`~lassodeepc.signal_data` (data matrices), :mod:`~lassodeepc.qp`
(QP solver), :mod:`~lassodeepc.deepc` (controller), :mod:`~lassodeepc.explicit`
(piecewise-affine law), :mod:`~lassodeepc.plant` (unbalanced disk),
:mod:`~lassodeepc.closed_loop` (simulation and sweeps) and :mod:`~lassodeepc.cli`.
"""

__version__ = "0.1.0"
