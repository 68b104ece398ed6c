"""Heat semigroup of a charged particle in a monopole field, computed spectrally
and by Monte Carlo stochastic parallel transport."""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    MINUS,
    PLUS,
    ChartAtlas,
    ChartError,
    ChartId,
    FiberValue,
    azimuth,
    chart_contains,
    connection_form,
    loop_holonomy,
    parallel_transport_polyline,
    transition_phase,
)
from .special import bessel_j, gauss_legendre, jacobi_polynomial, scaled_bessel  # noqa: E402
from .spectral import (  # noqa: E402
    AngularMode,
    RadialProfile,
    SectionInD,
    hamiltonian_apply,
    harmonic_eval,
    harmonic_table,
    mu_of,
    section_eval,
    semigroup_apply,
)
from .stochastic import (  # noqa: E402
    BrownianPath,
    FkEstimate,
    PathConfig,
    TransportState,
    fk_estimate,
    sample_brownian_path,
    stochastic_transport,
    transport_inverse_apply,
)
