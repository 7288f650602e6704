"""
Things shared by all riskconv modules: the exception hierarchy,
the tolerance configuration and a few small numeric helpers.
"""

import os
import logging
import numpy as np


logger = logging.getLogger(__name__)


class RiskConvError(Exception):
    pass


class DomainError(RiskConvError, ValueError):
    pass


class StructuralError(RiskConvError):
    pass


class UnsupportedMeasureError(RiskConvError):
    pass


class SizeError(RiskConvError):
    pass


class ValidationError(RiskConvError, ValueError):
    pass


class SolverError(RiskConvError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class InfeasibleProblem(SolverError):
    pass


class UnboundedProblem(SolverError):
    pass


class InconsistencyError(RiskConvError):
    pass


class NumericalError(RiskConvError):
    def __init__(self, message, best_bound=None):
        super().__init__(message)
        self.best_bound = best_bound


class PreconditionError(RiskConvError):
    pass


class TheoremViolation(RiskConvError):
    def __init__(self, message, system=None):
        super().__init__(message)
        self.system = system


class ScenarioError(RiskConvError):
    def __init__(self, message, field=None):
        if field:
            message = "{:s}: {:s}".format(field, message)
        super().__init__(message)
        self.field = field


class NameResolutionError(RiskConvError):
    pass


class Tolerances:
    """
    Named numeric tolerances. The class attributes are the defaults;
    an instance can scale the solver-facing ones (see from_environment).
    """
    probability = 1e-12
    lp_pivot = 1e-10
    stationarity = 1e-10
    oracle = 1e-6
    certificate = 1e-6
    comonotone = 1e-9
    strict = 1e-12
    jump = 1e-10
    divergence = 1e6
    scaled = ("lp_pivot", "stationarity", "oracle", "certificate", "comonotone")

    def __init__(self, scale=1.0):
        self.scale = scale
        for name in self.scaled:
            setattr(self, name, getattr(Tolerances, name) * scale)

    @classmethod
    def from_environment(cls, environ=None):
        environ = os.environ if environ is None else environ
        raw = environ.get("RISKCONV_TOLERANCE_OVERRIDE")
        if not raw:
            return cls()
        try:
            scale = float(raw)
        except ValueError:
            logger.warning("ignoring RISKCONV_TOLERANCE_OVERRIDE=%r: not a number", raw)
            return cls()
        if not np.isfinite(scale) or scale <= 0:
            logger.warning("ignoring RISKCONV_TOLERANCE_OVERRIDE=%r: must be positive", raw)
            return cls()
        logger.debug("solver tolerances scaled by %g", scale)
        return cls(scale)

    def __repr__(self):
        return "<Tolerances scale={:g}>".format(self.scale)


TOLERANCES = Tolerances.from_environment()


def as_float_array(values, name="values"):
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise StructuralError("{:s} must be one-dimensional".format(name))
    if not np.all(np.isfinite(array)):
        raise DomainError("{:s} must be finite".format(name))
    return array


def fmt_float(value, digits=12):
    # stable textual form used by reports; infinities stay symbolic
    if value is None:
        return None
    value = float(value)
    if np.isnan(value):
        return "nan"
    if np.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float("{:.{}g}".format(value, digits))
