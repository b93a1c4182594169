"""Exception types raised across the package."""


class DegenlabError(Exception):
    """Base class for all package errors."""


class NonPositiveExtent(DegenlabError):
    """A box axis was given a non-positive length."""


class TooFewCells(DegenlabError):
    """Fewer than two cells were requested along an axis."""


class UnknownTag(DegenlabError):
    """A boundary facet carries a tag outside {Sigma1, Sigma2, Rest}."""


class MagneticWithDegenerateWeight(DegenlabError):
    """Magnetic potentials are assembled only for s = 1/2."""


class InvalidPotential(DegenlabError):
    """Potential data violates its contract (e.g. nonzero normal trace of A)."""


class ZeroIsEigenvalue(DegenlabError):
    """The spectral shift sits on (or too close to) a discrete eigenvalue."""


class SolverBreakdown(DegenlabError):
    """Direct and fallback linear solvers both failed to reach tolerance."""


class SolverFailure(SolverBreakdown):
    """Alias kept for the trace-extension contract."""


class EigsolverNoConvergence(DegenlabError):
    """Shift-invert eigenvalue iteration did not converge."""


class DimensionTooSmall(DegenlabError):
    """No admissible complex frequency exists for the requested (k, s, dim)."""


class UnresolvedOscillation(DegenlabError):
    """Mesh too coarse for the requested frequency (cells-per-wavelength guard)."""


class CutoffViolation(DegenlabError):
    """A Carleman test field does not vanish to second order near Sigma2."""


class SubdomainTouchesBoundary(DegenlabError):
    """An interior-subdomain operation received a subdomain touching the boundary."""


class GridTooCoarse(DegenlabError):
    """Frequency grid fails the Nyquist check against the declared bandwidth."""


class BandTooNarrow(DegenlabError):
    """Bulk leakage into the boundary-potential estimator band is above threshold."""


class ConfigInvalid(DegenlabError):
    """An experiment configuration failed validation (field + reason in message)."""


class NearSingular(UserWarning):
    """Warning: a remainder system is close to singular (condition estimate attached)."""


class IllConditioned(UserWarning):
    """Warning: a least-squares fit is ill-conditioned (reported, not fatal)."""
