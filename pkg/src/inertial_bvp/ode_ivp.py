"""Adaptive Dormand-Prince 5(4) integrator with an accepted-step rewrite hook.

The hook is called on every accepted state (and on the initial state) before
the next step's stages are evaluated. It may replace designated state
components, e.g. to switch a reflector to its other coordinate chart. A
rewrite is logged as an event and invalidates the first-same-as-last stage.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import EvaluationError, InputError, StepSizeError

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# continuous extension, 4th order (Shampine 1986 / Hairer-Wanner)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0
UNDERFLOW = 1e-14


@dataclass
class IvpSpec:
    rhs: Callable[[float, np.ndarray], np.ndarray]
    t0: float
    t1: float
    y0: np.ndarray
    rtol: float = 1e-6
    atol: float = 1e-9
    hook: Optional[Callable[[float, np.ndarray], tuple]] = None
    max_step: float = np.inf
    first_step: Optional[float] = None


@dataclass
class HookEvent:
    t: float
    info: Any
    before: np.ndarray
    after: np.ndarray


@dataclass
class IvpSolution:
    t: np.ndarray                 # accepted times, strictly monotone
    y: np.ndarray                 # (len(t), n), post-hook states
    dense: list                   # per step (n, 4) continuous-extension coefficients
    events: list = field(default_factory=list)
    nfev: int = 0
    n_rejected: int = 0

    @property
    def direction(self):
        return 1.0 if self.t[-1] >= self.t[0] else -1.0


def _rms(x):
    return np.sqrt(np.mean(x * x)) if x.size else 0.0


def _eval(rhs, t, y):
    f = np.asarray(rhs(t, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise EvaluationError(f"non-finite right-hand side at t={t!r}", t=t)
    return f


def _initial_step(rhs, t0, y0, f0, direction, rtol, atol, span):
    scale = atol + np.abs(y0) * rtol
    d0, d1 = _rms(y0 / scale), _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = _eval(rhs, t0 + direction * h0, y0 + direction * h0 * f0)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _apply_hook(hook, t, y, events):
    if hook is None:
        return y, False
    new, info = hook(t, y)
    if not info:
        return y, False
    new = np.asarray(new, dtype=float)
    events.append(HookEvent(t=t, info=info, before=y.copy(), after=new.copy()))
    return new, True


def integrate(spec: IvpSpec) -> IvpSolution:
    """Integrate ``spec.rhs`` from ``t0`` to ``t1`` (either direction)."""
    t0, t1 = float(spec.t0), float(spec.t1)
    if t0 == t1:
        raise InputError("t0 and t1 must differ")
    if spec.rtol <= 0 or spec.atol <= 0:
        raise InputError("rtol and atol must be positive")
    rtol, atol = spec.rtol, spec.atol
    direction = 1.0 if t1 > t0 else -1.0
    span = abs(t1 - t0)
    hmin = UNDERFLOW * span

    events = []
    y = np.array(spec.y0, dtype=float)
    y, _ = _apply_hook(spec.hook, t0, y, events)
    f = _eval(spec.rhs, t0, y)
    nfev = 1
    if spec.first_step is not None:
        h = abs(spec.first_step)
    else:
        h = _initial_step(spec.rhs, t0, y, f, direction, rtol, atol, span)
        nfev += 1
    h = min(h, spec.max_step)

    ts, ys, dense = [t0], [y.copy()], []
    t = t0
    n = y.size
    K = np.empty((7, n))
    n_rejected = 0
    while direction * (t1 - t) > 0:
        step_rejected = False
        while True:
            if h < hmin:
                raise StepSizeError(f"step size {h:.3e} underflow at t={t!r}")
            h = min(h, abs(t1 - t))
            t_new = t1 if abs(t1 - t) - h <= 1e-15 * span else t + direction * h
            hs = t_new - t
            K[0] = f
            for s in range(1, 6):
                dy = K[:s].T @ np.asarray(_A[s]) * hs
                K[s] = _eval(spec.rhs, t + _C[s] * hs, y + dy)
            y_new = y + hs * (K[:6].T @ _B)
            f_new = _eval(spec.rhs, t_new, y_new)
            K[6] = f_new
            nfev += 6
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err = _rms(hs * (K.T @ _E) / scale)
            if err < 1.0:
                factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
                if step_rejected:
                    factor = min(1.0, factor)
                h = min(abs(hs) * factor, spec.max_step)
                break
            h = abs(hs) * max(MIN_FACTOR, SAFETY * err ** -0.2)
            step_rejected = True
            n_rejected += 1
        dense.append(K.T @ _P * 1.0)
        t, y, f = t_new, y_new, f_new
        y, rewritten = _apply_hook(spec.hook, t, y, events)
        if rewritten:
            f = _eval(spec.rhs, t, y)
            nfev += 1
        ts.append(t)
        ys.append(y.copy())
    return IvpSolution(t=np.array(ts), y=np.array(ys), dense=dense, events=events,
                       nfev=nfev, n_rejected=n_rejected)


def dense_eval(sol: IvpSolution, t):
    """Evaluate the continuous extension at time ``t``.

    Mesh times return the stored (post-hook) state exactly. Inside a step the
    interpolant starts from the post-hook state at the step's left end.
    """
    ts = sol.t
    lo, hi = min(ts[0], ts[-1]), max(ts[0], ts[-1])
    if not lo <= t <= hi:
        raise InputError(f"t={t!r} outside integrated span [{lo}, {hi}]")
    d = sol.direction
    # index of the step containing t
    k = int(np.searchsorted(d * ts, d * t, side="right")) - 1
    if k >= 0 and ts[k] == t:
        return sol.y[k].copy()
    k = min(max(k, 0), len(ts) - 2)
    h = ts[k + 1] - ts[k]
    x = (t - ts[k]) / h
    powers = np.array([x, x * x, x ** 3, x ** 4])
    return sol.y[k] + h * (sol.dense[k] @ powers)


def step_index(sol: IvpSolution, t):
    """Index of the accepted point whose post-hook state seeds the value at ``t``."""
    d = sol.direction
    k = int(np.searchsorted(d * sol.t, d * t, side="right")) - 1
    return min(max(k, 0), len(sol.t) - 1)
