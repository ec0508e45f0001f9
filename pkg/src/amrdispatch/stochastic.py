"""Gaussian time arithmetic used by route propagation.

Every time quantity in a plan (arrival, departure, service, travel) is carried
as a normal approximation ``(mean, var)``.  The only nonlinear operation the
planner needs is the maximum of a normal variable and a constant (waiting for a
window to open), whose first two moments have closed forms.

The scalar helpers prefixed with ``_`` work on plain floats and are what the
hot loops in :mod:`amrdispatch.routing` call; the public functions wrap them
around :class:`GaussianTime`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# beyond this many standard deviations the tail mass is below 1e-19
_TAIL = 9.0


@dataclass(frozen=True)
class GaussianTime:
    """A normally distributed time, ``N(mean, var)``; ``var == 0`` is deterministic."""

    mean: float
    var: float = 0.0

    def __post_init__(self):
        if self.var < 0:
            raise ValueError(f"variance must be non-negative, got {self.var}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    def __add__(self, other: "GaussianTime") -> "GaussianTime":
        return gauss_sum(self, other)


def norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def norm_pdf(z: float) -> float:
    return _INV_SQRT2PI * math.exp(-0.5 * z * z)


def _max_const(mean: float, var: float, c: float) -> tuple[float, float]:
    """Moments of ``max{X, c}`` for ``X ~ N(mean, var)``.

    Written around ``c`` (``mean = c + s*(phi(a) + a*Phi(a))``) which is the
    usual closed form rearranged to avoid cancellation when ``c`` is large.
    """
    if var <= 0.0:
        return (mean if mean > c else c), 0.0
    s = math.sqrt(var)
    a = (mean - c) / s
    if a > _TAIL:
        return mean, var
    if a < -_TAIL:
        return c, 0.0
    big_phi = 0.5 * math.erfc(-a / _SQRT2)
    small_phi = _INV_SQRT2PI * math.exp(-0.5 * a * a)
    excess = s * (small_phi + a * big_phi)
    second = var * ((a * a + 1.0) * big_phi + a * small_phi)
    v = second - excess * excess
    return c + excess, (v if v > 0.0 else 0.0)


def _lateness(mean: float, var: float, due: float) -> float:
    """``E(A - due)^+`` for ``A ~ N(mean, var)``."""
    if var <= 0.0:
        return mean - due if mean > due else 0.0
    s = math.sqrt(var)
    z = (mean - due) / s
    if z > _TAIL:
        return mean - due
    if z < -_TAIL:
        return 0.0
    big_phi = 0.5 * math.erfc(-z / _SQRT2)
    small_phi = _INV_SQRT2PI * math.exp(-0.5 * z * z)
    out = s * (small_phi + z * big_phi)
    return out if out > 0.0 else 0.0


def _prob_before(mean: float, var: float, deadline: float) -> float:
    if var <= 0.0:
        return 1.0 if mean < deadline else 0.0
    return 0.5 * math.erfc((mean - deadline) / (math.sqrt(var) * _SQRT2))


def gauss_sum(a: GaussianTime, b: GaussianTime) -> GaussianTime:
    """Sum of two independent normal times."""
    return GaussianTime(a.mean + b.mean, a.var + b.var)


def max_with_constant(x: GaussianTime, e: float) -> GaussianTime:
    """Normal approximation of ``max{x, e}`` (exact first two moments).

    >>> max_with_constant(GaussianTime(5.0, 0.0), 3.0)
    GaussianTime(mean=5.0, var=0.0)
    """
    m, v = _max_const(x.mean, x.var, e)
    return GaussianTime(m, v)


def expected_lateness(arrival: GaussianTime, h: float) -> float:
    """Expected time past the due date, ``E(max{h, A}) - h``."""
    return _lateness(arrival.mean, arrival.var, h)


def prob_before(x: GaussianTime, deadline: float) -> float:
    """``P{x < deadline}``; a deterministic time exactly at the deadline counts as late."""
    return _prob_before(x.mean, x.var, deadline)


def joint_on_time(x: GaussianTime, deadline: float, received: float, departure: GaussianTime) -> float:
    """Probability used to screen an insertion point.

    The arrival-feasibility event is scored with :func:`prob_before`; the
    "request received before the vehicle leaves" event is treated as the
    deterministic comparison ``received < departure.mean``.
    """
    if not received < departure.mean:
        return 0.0
    return prob_before(x, deadline)
