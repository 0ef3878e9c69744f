"""Gradient-flow integration with trajectory logging.

Solves d theta / dt = -grad L(theta) over [0, T] with a fixed-step Euler or
classical RK4 scheme, or an embedded RKF45 adaptive pair.  Euler with step h
reproduces a gradient-descent loop with learning rate h bit for bit, which is
the bridge between the continuous flow and its practical discretization; RK4
is the default because fourth order at small h makes the downstream envelope
checks meaningful.

At every logged time the integrator records the loss, stacked residual norm,
smallest NTK eigenvalue, squared gradient norm, and the running trapezoid
integral of the latter.  Piece-crossing events (a pre-activation moving to a
different polynomial piece) are detected at step granularity; with
``kink_refine`` the crossing times are bisected to 1e-9 without altering the
trajectory itself.

Divergent runs produce a truncated log with ``aborted`` set instead of
raising, so downstream checks can operate on the prefix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .networks import NonFiniteStateError, _forward_cache, loss, loss_gradient
from .spectral import min_eigenvalue, ntk_gram, residual

__all__ = [
    "FlowConfig",
    "TrajectoryLog",
    "PieceCrossing",
    "BoundReport",
    "integrate",
    "integrate_reverse",
    "blowup_bound_check",
    "loss_monotonicity_check",
    "save_trajectory_csv",
    "load_trajectory_csv",
    "save_thetas",
    "load_thetas",
    "SCHEME_ORDER",
]

SCHEME_ORDER = {"euler": 1, "rk4": 4, "rk45": 4}

MIN_ADAPTIVE_STEP = 1e-15
KINK_TIME_TOL = 1e-9


@dataclass(frozen=True)
class FlowConfig:
    """Integration plan for one flow run.

    ``log_stride`` is either an integer (log every that many accepted steps)
    or a float time interval.  ``horizon`` may be zero, in which case only
    the initial state is logged.
    """

    scheme: str = "rk4"
    step: float = 1e-3
    horizon: float = 0.1
    log_stride: int | float = 1
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    kink_refine: bool = False
    store_thetas: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEME_ORDER:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.step <= 0.0:
            raise ValueError("step must be positive")
        if self.horizon < 0.0:
            raise ValueError("horizon must be nonnegative")
        if self.horizon > 0.0 and self.step > self.horizon * (1 + 1e-12):
            raise ValueError("step must not exceed the horizon")
        if self.abs_tol <= 0.0 or self.rel_tol <= 0.0:
            raise ValueError("adaptive tolerances must be positive")
        if isinstance(self.log_stride, bool) or (
            isinstance(self.log_stride, int) and self.log_stride < 1
        ):
            raise ValueError("integer log_stride must be >= 1")
        if isinstance(self.log_stride, float) and self.log_stride <= 0.0:
            raise ValueError("time log_stride must be positive")


@dataclass(frozen=True)
class PieceCrossing:
    """A pre-activation moved to a different polynomial piece."""

    time: float
    layer: int
    unit: int
    example: int


@dataclass
class TrajectoryLog:
    times: np.ndarray
    losses: np.ndarray
    residual_norms: np.ndarray
    lambda_mins: np.ndarray
    grad_norm_sqs: np.ndarray
    grad_sq_integrals: np.ndarray
    thetas: list | None
    events: list
    aborted: bool
    abort_reason: str | None
    scheme: str
    step: float
    horizon: float
    coverage: str
    activation_label: str

    def __len__(self):
        return len(self.times)


def _rhs(net, data, sign):
    def f(theta):
        return sign * loss_gradient(net, theta, data)

    return f


def _euler_step(f, theta, h):
    return theta + h * f(theta)


def _rk4_step(f, theta, h):
    k1 = f(theta)
    k2 = f(theta + 0.5 * h * k1)
    k3 = f(theta + 0.5 * h * k2)
    k4 = f(theta + h * k3)
    return theta + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rkf45_step(f, theta, h):
    """One Runge-Kutta-Fehlberg step: 5th-order value and its error estimate."""
    k1 = f(theta)
    k2 = f(theta + h * 0.25 * k1)
    k3 = f(theta + h * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2))
    k4 = f(theta + h * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3))
    k5 = f(theta + h * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4))
    k6 = f(theta + h * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3
                        + 1859.0 / 4104.0 * k4 - 11.0 / 40.0 * k5))
    y5 = theta + h * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4
                      - 9.0 / 50.0 * k5 + 2.0 / 55.0 * k6)
    err = h * (1.0 / 360.0 * k1 - 128.0 / 4275.0 * k3 - 2197.0 / 75240.0 * k4
               + 1.0 / 50.0 * k5 + 2.0 / 55.0 * k6)
    return y5, err


class _PieceTracker:
    """Piece indices of every pre-activation that feeds the activation."""

    def __init__(self, net, data):
        self.net = net
        self.data = data
        self.active = (
            net.activation.pieces is not None
            and net.activation.breakpoints.size > 0
            and net.depth > 1
        )

    def snapshot(self, theta):
        if not self.active:
            return None
        bps = self.net.activation.breakpoints
        per_layer = []
        if self.net.is_gcn:
            _, _, preacts = _forward_cache(self.net, theta, self.data.inputs)
            for z in preacts[:-1]:
                per_layer.append(np.searchsorted(bps, z, side="right"))
        else:
            rows = []
            for x in self.data.inputs:
                _, _, preacts = _forward_cache(self.net, theta, x)
                rows.append([np.searchsorted(bps, z, side="right") for z in preacts[:-1]])
            for layer in range(self.net.depth - 1):
                per_layer.append(np.stack([r[layer] for r in rows]))
        return per_layer

    def preactivation(self, theta, layer, unit, example):
        if self.net.is_gcn:
            _, _, preacts = _forward_cache(self.net, theta, self.data.inputs)
            return preacts[layer][example, unit]
        _, _, preacts = _forward_cache(self.net, theta, self.data.inputs[example])
        return preacts[layer][unit]


def _refine_crossing(stepper, f, theta_prev, t_prev, h, tracker, layer, unit,
                     example, boundary):
    """Bisect the substep length at which the pre-activation crosses `boundary`.

    Event-time refinement only; the main trajectory is not altered.
    """
    z0 = tracker.preactivation(theta_prev, layer, unit, example)
    s0 = np.sign(z0 - boundary)
    lo, hi = 0.0, h
    while hi - lo > KINK_TIME_TOL:
        mid = 0.5 * (lo + hi)
        theta_mid = stepper(f, theta_prev, mid)
        z = tracker.preactivation(theta_mid, layer, unit, example)
        if np.sign(z - boundary) == s0:
            lo = mid
        else:
            hi = mid
    return t_prev + 0.5 * (lo + hi)


def _collect_events(stepper, f, cfg, tracker, prev_snap, new_snap, theta_prev,
                    t_prev, h, t_new):
    events = []
    bps = tracker.net.activation.breakpoints
    for layer, (old, new) in enumerate(zip(prev_snap, new_snap)):
        changed = np.argwhere(old != new)
        for example, unit in changed:
            example, unit = int(example), int(unit)
            lo_piece = min(int(old[example, unit]), int(new[example, unit]))
            boundary = float(bps[lo_piece])
            if cfg.kink_refine:
                t_ev = _refine_crossing(
                    stepper, f, theta_prev, t_prev, h, tracker, layer, unit,
                    example, boundary,
                )
            else:
                t_ev = t_new
            events.append(PieceCrossing(t_ev, layer, unit, example))
    events.sort(key=lambda e: e.time)
    return events


def integrate(net, theta0, data, cfg):
    """Solve d theta/dt = -grad L from theta0 over [0, horizon].

    Returns a TrajectoryLog with the initial state always logged, every
    ``log_stride`` thereafter, and the final time regardless of stride.
    Non-finite states or adaptive-step underflow truncate the log and set
    ``aborted`` rather than raising.
    """
    theta = np.array(theta0, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("initial parameters must be finite")
    f = _rhs(net, data, -1.0)
    tracker = _PieceTracker(net, data)

    times, losses, res_norms = [], [], []
    lams, gsqs, integrals = [], [], []
    thetas = [] if cfg.store_thetas else None
    events = []
    aborted = False
    abort_reason = None

    def record(t, th):
        """Append one logged row; returns False if any value is non-finite."""
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                l_val = loss(net, th, data)
                r = residual(net, th, data)
                lam = min_eigenvalue(ntk_gram(net, th, data))
                g = loss_gradient(net, th, data)
        except NonFiniteStateError:
            return False
        with np.errstate(over="ignore", invalid="ignore"):
            gs = float(g @ g)
            r_norm = float(np.linalg.norm(r))
        row = (l_val, r_norm, lam, gs)
        if not all(np.isfinite(v) for v in row):
            return False
        if times:
            integrals.append(integrals[-1] + 0.5 * (gs + gsqs[-1]) * (t - times[-1]))
        else:
            integrals.append(0.0)
        times.append(float(t))
        losses.append(l_val)
        res_norms.append(r_norm)
        lams.append(lam)
        gsqs.append(gs)
        if thetas is not None:
            thetas.append(th.copy())
        return True

    if not record(0.0, theta):
        raise ValueError("initial state produces non-finite logged values")
    snap = tracker.snapshot(theta)

    if cfg.scheme in ("euler", "rk4"):
        stepper = _euler_step if cfg.scheme == "euler" else _rk4_step
        n_full = int(np.floor(cfg.horizon / cfg.step + 1e-9))
        remainder = cfg.horizon - n_full * cfg.step
        if remainder < 1e-12 * max(cfg.horizon, 1.0):
            remainder = 0.0
        if isinstance(cfg.log_stride, int):
            stride_steps = cfg.log_stride
        else:
            stride_steps = max(1, int(round(cfg.log_stride / cfg.step)))
        total_steps = n_full + (1 if remainder else 0)
        for k in range(total_steps):
            h = cfg.step if k < n_full else remainder
            t_new = (k + 1) * cfg.step if k < n_full else cfg.horizon
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    theta_new = stepper(f, theta, h)
                if not np.all(np.isfinite(theta_new)):
                    raise NonFiniteStateError(-1, "parameter overflow")
                if tracker.active:
                    new_snap = tracker.snapshot(theta_new)
                    events.extend(
                        _collect_events(stepper, f, cfg, tracker, snap, new_snap,
                                        theta, k * cfg.step if k < n_full else t_new - h,
                                        h, t_new)
                    )
                    snap = new_snap
            except NonFiniteStateError as exc:
                aborted, abort_reason = True, f"non-finite state at t={t_new:g}: {exc}"
                break
            theta = theta_new
            if (k + 1) % stride_steps == 0 or k + 1 == total_steps:
                if not record(t_new, theta):
                    aborted = True
                    abort_reason = f"non-finite logged values at t={t_new:g}"
                    break
    else:  # rk45 adaptive
        t = 0.0
        h = min(cfg.step, cfg.horizon) if cfg.horizon > 0.0 else cfg.step
        if isinstance(cfg.log_stride, int):
            stride_steps, next_log = cfg.log_stride, None
        else:
            stride_steps, next_log = None, cfg.log_stride
        accepted = 0
        while t < cfg.horizon - 1e-15:
            h = min(h, cfg.horizon - t)
            if h < MIN_ADAPTIVE_STEP:
                aborted, abort_reason = True, f"adaptive step underflow at t={t:g}"
                break
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    theta_new, err = _rkf45_step(f, theta, h)
            except NonFiniteStateError as exc:
                aborted, abort_reason = True, f"gradient overflow near t={t:g}: {exc}"
                break
            finite = np.all(np.isfinite(theta_new)) and np.all(np.isfinite(err))
            if not finite:
                h *= 0.5
                continue
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(theta), np.abs(theta_new))
            ratio = float(np.max(np.abs(err) / scale))
            if ratio <= 1.0:
                t_new = t + h
                try:
                    if tracker.active:
                        new_snap = tracker.snapshot(theta_new)
                        events.extend(
                            _collect_events(_rk4_step, f, cfg, tracker, snap,
                                            new_snap, theta, t, h, t_new)
                        )
                        snap = new_snap
                except NonFiniteStateError as exc:
                    aborted, abort_reason = True, f"non-finite state at t={t_new:g}: {exc}"
                    break
                theta, t = theta_new, t_new
                accepted += 1
                due = (
                    accepted % stride_steps == 0
                    if stride_steps is not None
                    else t >= next_log - 1e-12
                )
                if due or t >= cfg.horizon - 1e-15:
                    if not record(t, theta):
                        aborted = True
                        abort_reason = f"non-finite logged values at t={t:g}"
                        break
                    if next_log is not None:
                        while next_log <= t + 1e-12:
                            next_log += cfg.log_stride
            factor = 0.9 * ratio ** -0.2 if ratio > 0.0 else 5.0
            h *= min(5.0, max(0.2, factor))

    return TrajectoryLog(
        times=np.asarray(times),
        losses=np.asarray(losses),
        residual_norms=np.asarray(res_norms),
        lambda_mins=np.asarray(lams),
        grad_norm_sqs=np.asarray(gsqs),
        grad_sq_integrals=np.asarray(integrals),
        thetas=thetas,
        events=events,
        aborted=aborted,
        abort_reason=abort_reason,
        scheme=cfg.scheme,
        step=cfg.step,
        horizon=cfg.horizon,
        coverage=net.activation.coverage,
        activation_label=net.activation.label,
    )


def integrate_reverse(net, theta_end, data, cfg):
    """Integrate d theta/dt = +grad L for the configured duration.

    Starting from a forward run's final state this recovers the initial
    point; the flow map is invertible away from critical points, and the
    round-trip error is a numerical health check.  Raises on divergence
    (there is no log to truncate).
    """
    theta = np.array(theta_end, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters must be finite")
    if cfg.horizon == 0.0:
        return theta
    f = _rhs(net, data, 1.0)
    if cfg.scheme in ("euler", "rk4"):
        stepper = _euler_step if cfg.scheme == "euler" else _rk4_step
        n_full = int(np.floor(cfg.horizon / cfg.step + 1e-9))
        remainder = cfg.horizon - n_full * cfg.step
        if remainder < 1e-12 * max(cfg.horizon, 1.0):
            remainder = 0.0
        steps = [cfg.step] * n_full + ([remainder] if remainder else [])
        for k, h in enumerate(steps):
            theta = stepper(f, theta, h)
            if not np.all(np.isfinite(theta)):
                raise NonFiniteStateError(-1, f"reverse flow diverged at step {k}")
        return theta
    t, h = 0.0, min(cfg.step, cfg.horizon)
    while t < cfg.horizon - 1e-15:
        h = min(h, cfg.horizon - t)
        if h < MIN_ADAPTIVE_STEP:
            raise NonFiniteStateError(-1, f"adaptive step underflow at t={t:g}")
        theta_new, err = _rkf45_step(f, theta, h)
        if not (np.all(np.isfinite(theta_new)) and np.all(np.isfinite(err))):
            h *= 0.5
            continue
        scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(theta), np.abs(theta_new))
        ratio = float(np.max(np.abs(err) / scale))
        if ratio <= 1.0:
            theta, t = theta_new, t + h
        factor = 0.9 * ratio ** -0.2 if ratio > 0.0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return theta


@dataclass
class BoundReport:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: bool
    worst_excess: float  # max of lhs - allowed slack; <= 0 when passing


def blowup_bound_check(log):
    """Verify the displacement bound |theta(s)-theta(0)|^2 <= s * int |grad L|^2.

    Both sides are evaluated at every logged s, the integral by the running
    trapezoid rule.  A pass requires lhs <= rhs*(1+1e-6)+1e-12 throughout;
    on any valid desk-scale run the inequality holds with slack, which is
    what rules out finite-time blowup of the flow.
    """
    if log.thetas is None:
        raise ValueError("log lacks parameter snapshots")
    if len(log) < 2:
        raise ValueError("need at least two logged points")
    base = log.thetas[0]
    lhs = np.array([float(np.sum((th - base) ** 2)) for th in log.thetas])
    rhs = log.times * log.grad_sq_integrals
    allowed = rhs * (1.0 + 1e-6) + 1e-12
    excess = lhs - allowed
    return BoundReport(
        times=log.times,
        lhs=lhs,
        rhs=rhs,
        passed=bool(np.all(excess <= 0.0)),
        worst_excess=float(np.max(excess)),
    )


@dataclass
class MonotonicityReport:
    passed: bool
    worst_violation: float  # max increase beyond the integrator slack
    slack: float


def loss_monotonicity_check(log, slack_coeff=1.0):
    """Check that logged losses never increase beyond integrator error.

    The flow decreases the loss at rate |grad L|^2; a discrete scheme of
    order p may wobble by O(h^p) between logs, so the allowance is
    losses[i]*(1+1e-9) + slack_coeff*h^p.
    """
    if len(log) < 2:
        raise ValueError("need at least two logged points")
    order = SCHEME_ORDER[log.scheme]
    slack = slack_coeff * log.step ** order
    allowed = log.losses[:-1] * (1.0 + 1e-9) + slack
    viol = log.losses[1:] - allowed
    return MonotonicityReport(
        passed=bool(np.all(viol <= 0.0)),
        worst_violation=float(np.max(viol)),
        slack=slack,
    )


_CSV_COLUMNS = "t,loss,residual_norm,lambda_min,grad_norm_sq,cumulative_integral"


def save_trajectory_csv(log, path):
    """Serialize the logged series; metadata rides in '# key=value' comments."""
    lines = [
        f"# scheme={log.scheme}",
        f"# step={repr(log.step)}",
        f"# horizon={repr(log.horizon)}",
        f"# coverage={log.coverage}",
        f"# activation={log.activation_label}",
        f"# aborted={int(log.aborted)}",
    ]
    if log.abort_reason:
        lines.append(f"# abort_reason={log.abort_reason}")
    lines.append(_CSV_COLUMNS)
    for i in range(len(log)):
        lines.append(",".join(repr(float(v)) for v in (
            log.times[i], log.losses[i], log.residual_norms[i],
            log.lambda_mins[i], log.grad_norm_sqs[i], log.grad_sq_integrals[i],
        )))
    Path(path).write_text("\n".join(lines) + "\n")


def load_trajectory_csv(path):
    """Rebuild a TrajectoryLog from its CSV (snapshots and events not stored)."""
    meta = {}
    rows = []
    header_seen = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            if line.strip() != _CSV_COLUMNS:
                raise ValueError(f"{path}: line {lineno}: unexpected header {line!r}")
            header_seen = True
            continue
        vals = line.split(",")
        if len(vals) != 6:
            raise ValueError(f"{path}: line {lineno}: expected 6 columns, got {len(vals)}")
        rows.append([float(v) for v in vals])
    if not header_seen:
        raise ValueError(f"{path}: missing column header")
    arr = np.asarray(rows) if rows else np.empty((0, 6))
    return TrajectoryLog(
        times=arr[:, 0],
        losses=arr[:, 1],
        residual_norms=arr[:, 2],
        lambda_mins=arr[:, 3],
        grad_norm_sqs=arr[:, 4],
        grad_sq_integrals=arr[:, 5],
        thetas=None,
        events=[],
        aborted=bool(int(meta.get("aborted", "0"))),
        abort_reason=meta.get("abort_reason"),
        scheme=meta.get("scheme", "rk4"),
        step=float(meta.get("step", "0") or 0.0),
        horizon=float(meta.get("horizon", "0") or 0.0),
        coverage=meta.get("coverage", "theorem2"),
        activation_label=meta.get("activation", ""),
    )


def save_thetas(log, path):
    """Sidecar text dump of the parameter snapshots, one vector per line."""
    if log.thetas is None:
        raise ValueError("log lacks parameter snapshots")
    lines = [" ".join(repr(float(v)) for v in th) for th in log.thetas]
    Path(path).write_text("\n".join(lines) + "\n")


def load_thetas(path):
    return [
        np.array([float(v) for v in line.split()])
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
