"""Growth-law definitions and the exact affine solution.

Two scalar growth laws are supported.  The affine law ``dY/dt = beta0 -
beta1 * Y`` is linear in the current size and has a closed-form solution,
used both for data generation and as an exact integration backend.  The
hump-shaped law ``dY/dt = g_max * exp(-0.5 * (ln(Y / y_max) / k)**2)``
peaks at ``Y = y_max`` and has no closed form; it is only ever integrated
numerically and its gradient is undefined for non-positive sizes.

Affine parameters can be re-expressed relative to a reference size
``y_bar`` (usually the mean observed size) so that samplers work with a
better-conditioned intercept ``beta_c = beta0 - beta1 * y_bar``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

AFFINE = "affine"
CANHAM = "canham"


class DomainError(ValueError):
    """Gradient evaluated outside the growth law's domain.

    Raised by the hump-shaped law for sizes <= 0, where the log term is
    undefined.  Integrators trap and re-raise this with step context
    attached so callers can tell which sub-step left the domain.
    """

    def __init__(self, message: str, y: float | None = None):
        super().__init__(message)
        self.y = y
        self.trace = None  # integrators attach the partial step trace


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class AffineParams:
    """Parameters of the affine law ``dY/dt = beta0 - beta1 * Y``."""

    beta0: float
    beta1: float

    def __post_init__(self):
        _require_finite("beta0", self.beta0)
        _require_finite("beta1", self.beta1)

    @property
    def alpha(self) -> float:
        """Asymptotic size ``beta0 / beta1``; undefined for beta1 == 0."""
        if self.beta1 == 0.0:
            raise ValueError("asymptote undefined for beta1 == 0")
        return self.beta0 / self.beta1


@dataclass(frozen=True)
class ShiftedAffineParams:
    """Affine parameters relative to a reference size ``y_bar``.

    ``beta_c = beta0 - beta1 * y_bar`` is the gradient at the reference
    size, typically O(1) when the reference is the mean observed size.
    """

    beta_c: float
    beta1: float
    y_bar: float

    def __post_init__(self):
        _require_finite("beta_c", self.beta_c)
        _require_finite("beta1", self.beta1)
        _require_finite("y_bar", self.y_bar)


@dataclass(frozen=True)
class CanhamParams:
    """Parameters of the hump-shaped law.

    ``g_max`` is the peak gradient, attained at size ``y_max``; ``k``
    controls the width of the hump on the log-size axis.  All three must
    be strictly positive.
    """

    g_max: float
    y_max: float
    k: float

    def __post_init__(self):
        for name in ("g_max", "y_max", "k"):
            value = getattr(self, name)
            _require_finite(name, value)
            if value <= 0.0:
                raise ValueError(f"{name} must be > 0, got {value!r}")


@dataclass(frozen=True)
class OdeModel:
    """A growth law tagged with its kind.

    ``kind`` is one of ``"affine"`` or ``"canham"``; ``params`` the
    matching parameter set.
    """

    kind: str
    params: AffineParams | CanhamParams

    def __post_init__(self):
        if self.kind == AFFINE:
            if not isinstance(self.params, AffineParams):
                raise TypeError("affine model requires AffineParams")
        elif self.kind == CANHAM:
            if not isinstance(self.params, CanhamParams):
                raise TypeError("canham model requires CanhamParams")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")

    def gradient(self, y: float) -> float:
        """Growth gradient dY/dt at size ``y``."""
        return self.gradient_fn()(y)

    def gradient_fn(self):
        """Return a plain-float callable ``y -> dY/dt``.

        The returned closure captures the parameters as locals so that
        integrator inner loops avoid repeated attribute lookups.
        """
        if self.kind == AFFINE:
            beta0 = self.params.beta0
            beta1 = self.params.beta1
            return lambda y: beta0 - beta1 * y

        g_max = self.params.g_max
        y_max = self.params.y_max
        k = self.params.k
        log = math.log
        exp = math.exp

        def grad(y: float) -> float:
            if y <= 0.0:
                raise DomainError(
                    f"hump-shaped gradient undefined for size {y!r} <= 0", y=y
                )
            z = log(y / y_max) / k
            return g_max * exp(-0.5 * z * z)

        return grad


def affine_model(beta0: float, beta1: float) -> OdeModel:
    return OdeModel(AFFINE, AffineParams(beta0, beta1))


def canham_model(g_max: float, y_max: float, k: float) -> OdeModel:
    return OdeModel(CANHAM, CanhamParams(g_max, y_max, k))


def analytic_affine(params: AffineParams, y0: float, t: float) -> float:
    """Exact affine solution at elapsed time ``t`` from initial size ``y0``.

    ``Y(t) = alpha + (y0 - alpha) * exp(-beta1 * t)`` with
    ``alpha = beta0 / beta1``.  Rejects ``beta1 == 0``, where no
    asymptote exists.
    """
    if params.beta1 == 0.0:
        raise ValueError("analytic affine solution requires beta1 != 0")
    alpha = params.beta0 / params.beta1
    return alpha + (y0 - alpha) * math.exp(-params.beta1 * t)


def shift(params: AffineParams, y_bar: float) -> ShiftedAffineParams:
    """Re-express affine parameters relative to reference size ``y_bar``."""
    return ShiftedAffineParams(params.beta0 - params.beta1 * y_bar, params.beta1, y_bar)


def unshift(params: ShiftedAffineParams) -> AffineParams:
    """Recover plain affine parameters from the shifted form."""
    return AffineParams(params.beta_c + params.beta1 * params.y_bar, params.beta1)


# Serialization uses fixed field names so files stay interchangeable
# between tools: beta0, beta1, beta_c, y_bar, g_max, y_max, k.

_PARAM_FIELDS = {
    AffineParams: ("beta0", "beta1"),
    ShiftedAffineParams: ("beta_c", "beta1", "y_bar"),
    CanhamParams: ("g_max", "y_max", "k"),
}


def params_to_dict(params) -> dict:
    """Flatten a parameter set to a ``{name: float}`` mapping."""
    fields = _PARAM_FIELDS.get(type(params))
    if fields is None:
        raise TypeError(f"not a parameter set: {params!r}")
    return {name: getattr(params, name) for name in fields}


def params_from_dict(data: dict):
    """Rebuild a parameter set from its flat mapping form."""
    keys = frozenset(data)
    for cls, fields in _PARAM_FIELDS.items():
        if keys == frozenset(fields):
            return cls(**{name: float(data[name]) for name in fields})
    raise ValueError(f"unrecognised parameter fields {sorted(keys)}")


def write_params(path, params) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_params(path):
    with open(path) as fh:
        return params_from_dict(json.load(fh))
