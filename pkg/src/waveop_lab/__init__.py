"""Desk-scale laboratory for the low-frequency wave operator Omega_+ beta(|P| <= M) in R^3."""

from .grid import (ComplexField, CutoffProfile, Grid3, beta, lowpass_filter, lp_norm, make_grid,
                   weighted_lp_norm)
from .potential import Potential, kato_norm, sample_potential, zero_potential
from .resolvent import (ResolventContext, apply_free_resolvent, apply_perturbed_resolvent,
                        apply_R1, build_resolvent_context, compute_bound_states,
                        continuous_projection, resolvent_derivative_probe)
from .oscillatory import (MajorantParams, Symbol1D, c_of_f, eval_F_kernel, eval_I,
                          i_bound_majorant, osi_majorant, sphere_integral)
from .waveop import (Scenario, WaveOpRoute, commutator_x, waveop_kernel_split, waveop_stationary,
                     waveop_time_limit)
from .probes import (ProbeEnsemble, ProbeReport, adjoint_probe, fit_constant, lp_ratio_probe,
                     route_agreement)

__version__ = "0.1.0"
