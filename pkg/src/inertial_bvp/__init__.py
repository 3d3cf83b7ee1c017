"""Householder-frame decoupling of dissipative ODEs and inertial-manifold BVPs."""
__version__ = "0.1.0"

from .bounds import GapData, estimate_gapdata, t_lower_bound, truncation_bound
from .householder import (BlockD, DecoupledState, ReflectorStack, assemble_D, assemble_Q,
                          from_rotated, needs_reembed, reembed, to_rotated, update_C,
                          v_from_what, what_rhs)
from .linalg import eig_real_parts, householder_apply, qr_oracle
from .manifold import (ManifoldPoint, ManifoldQuery, decouple, manifold_point,
                       manifold_trajectory, pullback_defect, sweep_T)
from .problems import kse_galerkin, linear_benchmark, make_problem, rotating_2d, two_layer_lorenz
