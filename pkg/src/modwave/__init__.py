"""Pointwise modulational stability of periodic traveling waves.

Numerical machinery for reaction-diffusion systems u_t = u_xx + c u_x + f(u):
periodic wave profiles, Bloch spectra and diffusive stability certificates,
per-frequency linear propagators on multi-cell boxes, pointwise Green-function
envelopes, nonlinear evolution of phase-offset (nonlocalized) perturbations,
and extraction of the modulation phase with quantitative checks of the
stability conclusion.
"""

from .bloch import (BlochOperator, CriticalBranch, EigenPair,
                    StabilityCertificate, assemble_bloch,
                    bisect_stability_boundary, check_diffusive_stability,
                    critical_branch, eigenfunctions, spectrum)
from .errors import (AnsatzBreakdown, BlowupDetected, BranchLoss,
                     DegenerateEigenvalue, DeltaUnresolved,
                     EigensolverFailure, GridTooCoarse, InversionFailure,
                     ModwaveError, NonConvergence, NonpositiveTime,
                     QuadratureNonConvergence, ShapeMismatch,
                     SingularJacobian, StepSizeRejected)
from .evolve import (InitialData, InitialDataSpec, Trajectory,
                     build_initial_data, convergence_check, evolve_pde)
from .kernels import (DecayEnvelope, EKernel, FrequencyCutoff,
                      GaussianKernel, TimeCutoff, check_convolution_lemma,
                      gaussian_convolve, smooth_step)
from .models import (ReactionModel, jacobian_error, linear_model,
                     model_from_config, rgl_model)
from .modulation import (ModulationProjector, ModulationTrace,
                         NonlinearTerms, check_main_theorem, extract_psi,
                         perturbation_identity_residual, psi_consistency,
                         zeta)
from .pipeline import ExperimentConfig, Workspace, run_command
from .profiles import (WaveProfile, constant_profile, load_profile,
                       profile_residual, rgl_wave, save_profile,
                       solve_profile)
from .semigroup import (BlochField, MultiCellGrid, PropagatorTable,
                        apply_semigroup_bloch, apply_semigroup_direct,
                        bloch_inverse, bloch_transform, build_propagator,
                        green_sample, sp_star, tilde_S_star,
                        verify_linear_envelope)

__version__ = "0.1.0"
