"""Single-state integrators with per-sub-step tracing.

Three backends cover the accuracy spectrum deliberately: a fixed-step
classical RK4 whose step size is part of the statistical model under
study, an adaptive 5(4) embedded Runge-Kutta pair (Dormand-Prince
coefficients) that holds the per-step error estimate below a tolerance,
and the closed-form affine solution, which is exact.

Every numerical step can record a :class:`StepTrace` with the stage
states and gradients, because mid-step excursions (for example negative
sizes visited by RK4 stages under implausible parameters) are themselves
diagnostics of interest, not just the end states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .models import AFFINE, DomainError, OdeModel, analytic_affine

RK4_FIXED = "rk4"
RK45_ADAPTIVE = "rk45"
ANALYTIC_AFFINE = "analytic"

_METHODS = (RK4_FIXED, RK45_ADAPTIVE, ANALYTIC_AFFINE)

# Adaptive controller constants: accepted-step growth is clamped so a
# run of easy steps cannot fling the step size past a feature, and a
# floor guards against stiffness-driven underflow.
SAFETY = 0.9
GROWTH_MIN = 0.2
GROWTH_MAX = 5.0
H_MIN = 1e-12


class IntegrationError(RuntimeError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


@dataclass(frozen=True)
class StepConfig:
    """How to advance the state between observation times.

    ``h`` is the fixed step for ``rk4`` and must evenly divide every
    observation gap (enforced where the gap is known, never silently
    rounded).  ``rel_tol``/``abs_tol`` bound the per-step error estimate
    for ``rk45``.  ``max_steps`` caps the work per interval for the
    adaptive method.
    """

    method: str
    h: float | None = None
    rel_tol: float = 1e-6
    abs_tol: float = 1e-6
    max_steps: int = 10_000

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown integration method {self.method!r}")
        if self.method == RK4_FIXED:
            if self.h is None or not self.h > 0.0:
                raise ValueError("rk4 requires a step size h > 0")
        if self.method == RK45_ADAPTIVE:
            if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
                raise ValueError("rk45 tolerances must be > 0")
            if self.max_steps < 1:
                raise ValueError("max_steps must be >= 1")


def rk4_config(h: float) -> StepConfig:
    return StepConfig(RK4_FIXED, h=h)


def rk45_config(
    rel_tol: float = 1e-6, abs_tol: float = 1e-6, max_steps: int = 10_000
) -> StepConfig:
    return StepConfig(RK45_ADAPTIVE, rel_tol=rel_tol, abs_tol=abs_tol, max_steps=max_steps)


def analytic_config() -> StepConfig:
    return StepConfig(ANALYTIC_AFFINE)


@dataclass(frozen=True)
class StepTrace:
    """One attempted step with its stage-level detail.

    ``stage_states``/``stage_grads`` hold the points where the gradient
    was evaluated, in stage order (4 for RK4, 7 for the embedded pair).
    ``err_est`` is the embedded error estimate (adaptive method only).
    Re-summing the stored stages reproduces ``y_end`` bit for bit for
    RK4: ``y_start + h/6 * (k1 + 2*k2 + 2*k3 + k4)``.
    """

    step_index: int
    t_start: float
    h: float
    y_start: float
    stage_states: tuple[float, ...]
    stage_grads: tuple[float, ...]
    y_end: float
    accepted: bool = True
    err_est: float | None = None
    stage_offsets: tuple[float, ...] = field(repr=False, default=())


_RK4_OFFSETS = (0.0, 0.5, 0.5, 1.0)


def rk4_step(model: OdeModel, y: float, h: float, t0: float = 0.0, step_index: int = 0):
    """One classical RK4 step; returns ``(y_end, StepTrace)``.

    Domain errors raised by the gradient mid-step are re-raised with the
    partial trace attached as ``exc.trace``.
    """
    f = model.gradient_fn()
    states: list[float] = []
    grads: list[float] = []
    try:
        k1 = f(y)
        states.append(y)
        grads.append(k1)
        y2 = y + 0.5 * h * k1
        k2 = f(y2)
        states.append(y2)
        grads.append(k2)
        y3 = y + 0.5 * h * k2
        k3 = f(y3)
        states.append(y3)
        grads.append(k3)
        y4 = y + h * k3
        k4 = f(y4)
        states.append(y4)
        grads.append(k4)
    except DomainError as exc:
        exc.trace = StepTrace(
            step_index, t0, h, y, tuple(states), tuple(grads), float("nan"),
            accepted=False, stage_offsets=_RK4_OFFSETS[: len(states)],
        )
        raise
    y_end = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    trace = StepTrace(
        step_index, t0, h, y, tuple(states), tuple(grads), y_end,
        stage_offsets=_RK4_OFFSETS,
    )
    return y_end, trace


def rk4_propagate(f, y: float, h: float, n_steps: int) -> float:
    """Advance ``n_steps`` RK4 steps without recording traces.

    ``f`` is a plain gradient callable; this is the hot path used inside
    likelihood evaluations.
    """
    sixth = h / 6.0
    half = 0.5 * h
    for _ in range(n_steps):
        k1 = f(y)
        k2 = f(y + half * k1)
        k3 = f(y + half * k2)
        k4 = f(y + h * k3)
        y = y + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


# Dormand-Prince 5(4) coefficients.  The fifth-order weights propagate
# the solution; the difference row E gives the embedded error estimate.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (
    9017 / 3168,
    -355 / 33,
    46732 / 5247,
    49 / 176,
    -5103 / 18656,
)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


def _dp45_attempt(f, y: float, h: float):
    """One embedded-pair attempt: returns (y5, err, states, grads)."""
    k1 = f(y)
    y2 = y + h * (_A21 * k1)
    k2 = f(y2)
    y3 = y + h * (_A31 * k1 + _A32 * k2)
    k3 = f(y3)
    y4 = y + h * (_A41 * k1 + _A42 * k2 + _A43 * k3)
    k4 = f(y4)
    y5 = y + h * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4)
    k5 = f(y5)
    y6 = y + h * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5)
    k6 = f(y6)
    y_new = y + h * (_B1 * k1 + _B3 * k3 + _B4 * k4 + _B5 * k5 + _B6 * k6)
    k7 = f(y_new)
    err = abs(
        h * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
    )
    return (
        y_new,
        err,
        (y, y2, y3, y4, y5, y6, y_new),
        (k1, k2, k3, k4, k5, k6, k7),
    )


def _rk45_loop(f, y0, t0, t1, rel_tol, abs_tol, max_steps, traces):
    """Shared adaptive control loop; records into ``traces`` when given."""
    t = t0
    y = y0
    h = (t1 - t0) / 10.0
    attempts = 0
    index = 0
    while t < t1:
        if h < H_MIN:
            raise StepUnderflow(f"step size underflow at t={t}")
        if t + h > t1:
            h = t1 - t
        if attempts >= max_steps:
            raise MaxStepsExceeded(f"more than {max_steps} step attempts")
        attempts += 1
        try:
            y_new, err, states, grads = _dp45_attempt(f, y, h)
        except DomainError as exc:
            if traces is not None:
                exc.trace = StepTrace(
                    index, t, h, y, (), (), float("nan"),
                    accepted=False, stage_offsets=(),
                )
            raise
        scale = abs_tol + rel_tol * max(abs(y), abs(y_new))
        accepted = err <= scale
        if traces is not None:
            traces.append(
                StepTrace(
                    index, t, h, y, states, grads, y_new,
                    accepted=accepted, err_est=err, stage_offsets=_C,
                )
            )
        if accepted:
            t += h
            y = y_new
            index += 1
            if err == 0.0:
                factor = GROWTH_MAX
            else:
                factor = min(GROWTH_MAX, max(GROWTH_MIN, SAFETY * (scale / err) ** 0.2))
            h *= factor
        else:
            h *= max(GROWTH_MIN, min(1.0, SAFETY * (scale / err) ** 0.2))
    return y


def rk45_propagate(
    f, y0: float, t0: float, t1: float,
    rel_tol: float, abs_tol: float, max_steps: int = 10_000,
) -> float:
    """Adaptive integration without trace recording (likelihood hot path)."""
    return _rk45_loop(f, y0, t0, t1, rel_tol, abs_tol, max_steps, None)


def rk45_steps(
    model: OdeModel,
    y0: float,
    t0: float,
    t1: float,
    cfg: StepConfig,
    keep_traces: bool = False,
):
    """Adaptive integration over ``[t0, t1]``; returns ``(y1, traces)``.

    The initial step is a tenth of the interval.  A step is accepted when
    the embedded error estimate is at most ``abs_tol + rel_tol * |y|``;
    the next step is scaled by ``SAFETY * (tolerance / error)**(1/5)``
    clamped to ``[GROWTH_MIN, GROWTH_MAX]``.  Rejected attempts are
    retried with the shrunken step and appear in the trace list flagged
    unaccepted.  Raises :class:`StepUnderflow` below ``H_MIN`` and
    :class:`MaxStepsExceeded` past ``cfg.max_steps`` attempts.
    """
    if not t1 > t0:
        raise ValueError("require t1 > t0")
    f = model.gradient_fn()
    traces: list[StepTrace] = [] if keep_traces else None
    y = _rk45_loop(f, y0, t0, t1, cfg.rel_tol, cfg.abs_tol, cfg.max_steps, traces)
    return y, traces if traces is not None else []


def integrate_interval(
    model: OdeModel,
    y0: float,
    t0: float,
    t1: float,
    cfg: StepConfig,
    keep_traces: bool = False,
):
    """Advance the state from ``t0`` to ``t1``; returns ``(y1, traces)``.

    For the fixed-step method the gap must be an integer multiple of
    ``cfg.h`` (a gap that is not is an error, never rounded).  The
    analytic backend is only defined for the affine law.
    """
    if not t1 > t0:
        raise ValueError("require t1 > t0")
    gap = t1 - t0

    if cfg.method == ANALYTIC_AFFINE:
        if model.kind != AFFINE:
            raise ValueError("analytic backend requires the affine law")
        y1 = analytic_affine(model.params, y0, gap)
        if keep_traces:
            return y1, [
                StepTrace(0, t0, gap, y0, (), (), y1, stage_offsets=())
            ]
        return y1, []

    if cfg.method == RK45_ADAPTIVE:
        return rk45_steps(model, y0, t0, t1, cfg, keep_traces=keep_traces)

    h = cfg.h
    n_float = gap / h
    n = round(n_float)
    if n < 1 or abs(n * h - gap) > 1e-9 * max(1.0, abs(gap)):
        raise ValueError(
            f"gap {gap!r} is not an integer multiple of the rk4 step {h!r}"
        )
    if keep_traces:
        traces = []
        y = y0
        for i in range(n):
            y, trace = rk4_step(model, y, h, t0=t0 + i * h, step_index=i)
            traces.append(trace)
        return y, traces
    return rk4_propagate(model.gradient_fn(), y0, h, n), []


TRACE_COLUMNS = ("step", "substep", "t", "state", "gradient")


def trace_rows(traces) -> list[tuple]:
    """Flatten accepted traces to (step, substep, t, state, gradient) rows."""
    rows = []
    for trace in traces:
        if not trace.accepted:
            continue
        for j, (state, grad) in enumerate(zip(trace.stage_states, trace.stage_grads)):
            offset = trace.stage_offsets[j] if trace.stage_offsets else 0.0
            rows.append((trace.step_index, j, trace.t_start + offset * trace.h, state, grad))
    return rows


def write_traces(path, traces) -> None:
    """Dump accepted step traces as delimited text, one row per sub-step."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for row in trace_rows(traces):
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
