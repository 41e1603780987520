"""Non-Abelian X-ray transforms on conformal disc metrics.

Forward transport solvers, fiberwise loop factorization and
identity-verification experiments; see README.md for the tour.
"""

from .metrics import (ConformalMetric, DomainError, bump_metric,
                      euclidean_metric, eval_metric, hyperbolic_metric,
                      metric_from_json, spherical_metric)
from .geometry import (BoundaryCoordinate, GlancingError, NonTrappingError,
                       PhasePoint, SimplicityReport, exit_time, geodesic_flow,
                       influx_grid, scattering_relation, validate_simplicity)
from .fiber import (FiberFunction, FiberGrid, ModeSpectrum, apply_V, apply_X,
                    apply_Xperp, check_structure_equations, eta_minus,
                    eta_plus, holomorphicity_ratio, inner_product,
                    project_mode)
from .transport import (AttenuationField, PairAttenuation, ScatteringData,
                        ZeroAttenuation, attenuated_transform,
                        fundamental_solution, integral_formula_check,
                        integrating_factor, scattering_data,
                        scattering_minus_check, solve_cocycle)
from .factorization import (FactorizationResult, MatrixLoop, anti_factorize,
                            bauer_spectral_factor, factorize, factorize_fiber,
                            mode_equation_residuals, spectral_factor,
                            transform_attenuation)
from .gauge import (GaugeElement, gauge_apply, gauge_invariance_check,
                    plant_linear_kernel, pseudo_linearization_residual,
                    reconstruct_gauge, subgroup_preservation,
                    unitarity_criterion)

__version__ = "0.1.0"
