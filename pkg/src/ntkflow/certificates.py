"""Exponential-decay certificates for logged gradient-flow trajectories.

A certificate pins the decay rate lambda0 (the minimum over logged times of
the smallest NTK eigenvalue) and verifies the residual envelope
``|y - F_t| <= e^{-lambda0 t} |y - F_0|`` pointwise over the log, which is
the same statement as ``loss(t) <= e^{-2 lambda0 t} loss(0)``.

lambda0 is a discrete lower-sampling of a continuous minimum, and the
integrator contributes its own truncation error, so checks carry a relative
tolerance (default 1e-3) plus a fixed roundoff allowance.  Certificates are
refused rather than issued with a numerically-zero rate: if the smallest
logged eigenvalue is below 1e-10 of the largest, the run is reported
singular, which is exactly what under-parametrization (P < nM) forces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import ntk_gram, stacked_labels, stacked_outputs

__all__ = [
    "ConvergenceCertificate",
    "EnvelopePoint",
    "certificate",
    "check_envelope",
    "dynamics_residual_check",
    "render_certificate",
    "parse_certificate",
    "SINGULAR_RATIO",
    "DEFAULT_TOL_REL",
]

SINGULAR_RATIO = 1e-10
DEFAULT_TOL_REL = 1e-3

# Fixed allowance for float roundoff in the pointwise comparisons, on top of
# the user tolerance: relative slack plus a tiny absolute floor.
ROUNDOFF_REL = 1e-10
ROUNDOFF_ABS = 1e-12

STATUS_CERTIFIED = "certified"
STATUS_SINGULAR = "refused_singular"
STATUS_VIOLATION = "refused_violation"
STATUS_ABORTED = "refused_aborted"


def _within(lhs, rhs, tol_rel):
    return lhs <= rhs * (1.0 + tol_rel + ROUNDOFF_REL) + ROUNDOFF_ABS


@dataclass(frozen=True)
class EnvelopePoint:
    t: float
    lhs: float  # |y - F_t|
    rhs: float  # e^{-lambda0 t} |y - F_0|
    passed: bool


@dataclass
class ConvergenceCertificate:
    lambda0: float
    horizon: float
    init_residual: float
    tol_rel: float
    coverage_tag: str
    status: str
    points: list  # EnvelopePoint per logged time; empty when refused early
    provenance: dict = field(default_factory=dict)

    @property
    def certified(self):
        return self.status == STATUS_CERTIFIED


def certificate(log, tol_rel=DEFAULT_TOL_REL, provenance=None):
    """Derive a certificate from a trajectory log.

    Refusal ladder: aborted or empty logs are refused outright; a smallest
    logged eigenvalue at or below 1e-10 of the largest is refused as
    singular; otherwise the envelope is checked at every logged time and
    any failure refuses the certificate.  Never certifies past a failing
    pointwise check.
    """
    if tol_rel < 0.0:
        raise ValueError("tol_rel must be nonnegative")
    provenance = dict(provenance or {})
    base = dict(
        horizon=float(log.horizon),
        tol_rel=float(tol_rel),
        coverage_tag=log.coverage,
        provenance=provenance,
    )
    if log.aborted or len(log) == 0:
        return ConvergenceCertificate(
            lambda0=float("nan"), init_residual=float("nan"),
            status=STATUS_ABORTED, points=[], **base,
        )
    lambda0 = float(np.min(log.lambda_mins))
    lam_max = float(np.max(log.lambda_mins))
    init_residual = float(log.residual_norms[0])
    if lambda0 <= SINGULAR_RATIO * max(lam_max, 0.0) or lambda0 <= 0.0:
        return ConvergenceCertificate(
            lambda0=lambda0, init_residual=init_residual,
            status=STATUS_SINGULAR, points=[], **base,
        )
    points = []
    all_pass = True
    for t, lhs in zip(log.times, log.residual_norms):
        rhs = float(np.exp(-lambda0 * t) * init_residual)
        ok = bool(_within(lhs, rhs, tol_rel))
        all_pass &= ok
        points.append(EnvelopePoint(float(t), float(lhs), rhs, ok))
    return ConvergenceCertificate(
        lambda0=lambda0, init_residual=init_residual,
        status=STATUS_CERTIFIED if all_pass else STATUS_VIOLATION,
        points=points, **base,
    )


@dataclass
class WeightedMonotoneReport:
    times: np.ndarray
    weighted: np.ndarray  # e^{2 lambda0 t} |y - F_t|^2
    passed: bool
    worst_ratio: float  # max consecutive growth factor


def check_envelope(log, lambda0, tol_rel=DEFAULT_TOL_REL):
    """Rearranged envelope: e^{2 lambda0 t} |y-F_t|^2 must be non-increasing.

    An over-claimed rate shows up as growth of the weighted quantity, so
    this is the sharper diagnostic; lambda0 = 0 degenerates to plain loss
    monotonicity.
    """
    if lambda0 < 0.0:
        raise ValueError("lambda0 must be nonnegative")
    w = np.exp(2.0 * lambda0 * log.times) * log.residual_norms ** 2
    ok = True
    worst = 0.0
    for i in range(len(w) - 1):
        ok &= bool(_within(w[i + 1], w[i], tol_rel))
        if w[i] > 0.0:
            worst = max(worst, w[i + 1] / w[i])
    return WeightedMonotoneReport(times=log.times, weighted=w, passed=ok,
                                  worst_ratio=worst)


@dataclass
class DynamicsReport:
    times: np.ndarray
    deviations: np.ndarray
    max_deviation: float


def dynamics_residual_check(net, log, data, stride):
    """Compare d F_t / dt against G(t) (y - F_t) along the log.

    Checked times are thinned to roughly `stride` apart (forming the Gram
    matrix is the expensive part); at each one the time derivative of the
    stacked predictions is taken as a centered difference over the
    *adjacent logged* points, so the truncation error scales with the
    square of the log spacing.  The reported deviation is
    ||fd - G r|| / ||G r|| per checked time.  Needs parameter snapshots.
    """
    if log.thetas is None:
        raise ValueError("log lacks parameter snapshots")
    if len(log) < 3:
        raise ValueError("need at least three logged points")
    dt = float(np.median(np.diff(log.times)))
    step = max(1, int(round(stride / dt)))
    check_idx = [i for i in range(step, len(log) - 1, step)]
    if not check_idx:
        raise ValueError("stride leaves no interior points to check")
    y = stacked_labels(data)
    need = sorted({j for i in check_idx for j in (i - 1, i, i + 1)})
    outputs = {i: stacked_outputs(net, log.thetas[i], data) for i in need}
    times, devs = [], []
    for i in check_idx:
        fd = (outputs[i + 1] - outputs[i - 1]) / (log.times[i + 1] - log.times[i - 1])
        gram = ntk_gram(net, log.thetas[i], data)
        rhs = gram @ (y - outputs[i])
        scale = float(np.linalg.norm(rhs))
        gap = float(np.linalg.norm(fd - rhs))
        if scale > 0.0:
            dev = gap / scale
        else:
            dev = 0.0 if gap == 0.0 else float("inf")
        times.append(float(log.times[i]))
        devs.append(dev)
    devs = np.asarray(devs)
    return DynamicsReport(times=np.asarray(times), deviations=devs,
                          max_deviation=float(np.max(devs)))


def render_certificate(cert):
    """Deterministic text form: key-value lines, then the pointwise table."""
    lines = [
        f"status = {cert.status}",
        f"coverage = {cert.coverage_tag}",
        f"lambda0 = {repr(cert.lambda0)}",
        f"T = {repr(cert.horizon)}",
        f"init_residual = {repr(cert.init_residual)}",
        f"tol_rel = {repr(cert.tol_rel)}",
        f"points = {len(cert.points)}",
    ]
    for key in sorted(cert.provenance):
        lines.append(f"{key} = {cert.provenance[key]}")
    lines.append("t,lhs,rhs,pass")
    for p in cert.points:
        lines.append(f"{repr(p.t)},{repr(p.lhs)},{repr(p.rhs)},{int(p.passed)}")
    return "\n".join(lines) + "\n"


def parse_certificate(text):
    """Read back the key-value header of a rendered certificate."""
    fields = {}
    for line in text.splitlines():
        if line == "t,lhs,rhs,pass":
            break
        key, _, value = line.partition(" = ")
        if key:
            fields[key.strip()] = value.strip()
    out = dict(fields)
    for key in ("lambda0", "T", "init_residual", "tol_rel"):
        if key in out:
            out[key] = float(out[key])
    if "points" in out:
        out["points"] = int(out["points"])
    return out
