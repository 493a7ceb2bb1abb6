"""Numerical laboratory for nonlocal reaction-diffusion dynamics.

Discretizes u_t = Ku - hu + f(x,u) on finite metric measure spaces
(intervals, weighted graphs, unions), computes spectral quantities of
the linear part, evolves the dynamics with order-preserving and
high-order schemes, constructs extremal and piecewise-constant
equilibria, and exposes randomized property suites for the comparison
and maximum principles.
"""

from nonlocalrd.space import (
    MeasureSpace,
    ConnectivityCertificate,
    build_interval,
    build_graph,
    merge_spaces,
    is_r_connected,
)
from nonlocalrd.kernel import (
    Kernel,
    NonlocalOperator,
    assemble_kernel,
    apply_K,
    compute_h0,
    build_operator,
)

__version__ = "0.1.0"
