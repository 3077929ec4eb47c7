"""mongelab: a numerical laboratory for regularized Monge transport.

Implements the map T_eps for the cost sqrt(eps^2 + |x-y|^2) on discrete
instances, Jacobian/eigenvalue diagnostics of its regularity, an exact
planar instance whose monotone optimal map is only Hoelder-2/3 at an
interior point, and the transport density via Beckmann flows and ray
formulas.
"""

from .core import (
    DiscreteMeasure,
    Grid2,
    ScalarField,
    VectorField,
    build_grid,
    cost_eps,
    discretize,
)
from .counterexample import (
    RayCoord,
    TriangleSpec,
    a_of_y,
    densities,
    eta,
    eta_ode_coeffs,
    monotone_ray_map,
    potential_u,
    ray_direction,
    ray_of_point,
    strip_mass_check,
    t0_map,
)
from .diagnostics import (
    DiagnosticsReport,
    JacobianField,
    eigs2,
    eps_sweep,
    holder_fit,
    jacobian_field,
    lipschitz_modulus,
    matrices_Aw,
    ray_components,
    trace_W,
)
from .ot_solver import (
    CostMatrix,
    DualPotentials,
    MapField,
    TransportPlan,
    barycentric_map,
    map_from_potential,
    solve_entropic,
    solve_exact,
)
from .transport_density import (
    FlowField,
    beckmann_flow,
    density_from_flow,
    mk_residual,
    ray_density,
)

__version__ = "0.1.0"
