"""Piecewise polynomial scalar activations and sigmoid approximants."""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from numpy.polynomial import polynomial as _poly
from scipy.special import expit

__all__ = [
    "ActivationSpec",
    "builtin",
    "approximate_sigmoid",
    "sup_error",
    "CONTINUITY_TOL",
    "COVERAGE_FULL",
    "COVERAGE_RELU",
    "COVERAGE_SIGMOID",
]

CONTINUITY_TOL = 1e-12

# Guarantee regime stamped on each activation and copied into certificates.
# COVERAGE_FULL marks members of the piecewise nonzero-polynomial class that
# the decay guarantee targets directly; relu (its left piece is identically
# zero) and exact sigmoid (not polynomial at all) are covered only as limit
# cases and carry their own tags.
COVERAGE_FULL = "theorem2"
COVERAGE_RELU = "corollary1_relu"
COVERAGE_SIGMOID = "corollary2_sigmoid"


def _as_finite_array(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("activation input must be finite")
    return arr


class ActivationSpec:
    """Continuous scalar activation applied component-wise.

    The piecewise polynomial form keeps ``breakpoints`` (strictly increasing)
    and ``pieces``, one ascending-power coefficient vector per interval, with
    ``len(pieces) == len(breakpoints) + 1``.  At a breakpoint the right-hand
    piece is used for both values and derivatives; continuity makes the value
    choice immaterial, and the derivative convention is fixed so runs are
    deterministic.

    Exact sigmoid bypasses the piece machinery: ``pieces`` is None and a
    transcendental evaluator pair is installed instead.

    Instances are immutable after construction and safe to evaluate from any
    number of threads.
    """

    def __init__(self, label, breakpoints, pieces, *, coverage=COVERAGE_FULL,
                 init_alpha=None, exact=None, allow_zero_piece=False):
        self.label = str(label)
        self.coverage = coverage
        self.init_alpha = init_alpha
        bps = np.asarray(breakpoints, dtype=float)
        if bps.ndim != 1:
            raise ValueError("breakpoints must be a 1-d sequence")
        if bps.size and not np.all(np.isfinite(bps)):
            raise ValueError("breakpoints must be finite")
        if bps.size > 1 and np.any(np.diff(bps) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        self.breakpoints = bps

        if exact is not None:
            if pieces is not None:
                raise ValueError("exact evaluator and pieces are mutually exclusive")
            self.pieces = None
            self._fn, self._dfn = exact
            self._derivs = None
            return

        coefs = tuple(np.atleast_1d(np.asarray(c, dtype=float)) for c in pieces)
        if len(coefs) != bps.size + 1:
            raise ValueError(
                f"need {bps.size + 1} pieces for {bps.size} breakpoints, got {len(coefs)}"
            )
        if not allow_zero_piece:
            for i, c in enumerate(coefs):
                if np.all(c == 0.0):
                    raise ValueError(f"piece {i} is identically zero")
        for i, b in enumerate(bps):
            left = _poly.polyval(b, coefs[i])
            right = _poly.polyval(b, coefs[i + 1])
            if abs(left - right) > CONTINUITY_TOL:
                raise ValueError(
                    f"pieces {i} and {i + 1} disagree at x={b}: {left!r} vs {right!r}"
                )
        self.pieces = coefs
        self._derivs = tuple(_poly.polyder(c) for c in coefs)
        self._fn = None
        self._dfn = None

    @property
    def is_polynomial(self):
        return self.pieces is not None

    def _piecewise(self, arr, table):
        idx = np.searchsorted(self.breakpoints, arr, side="right")
        out = np.empty_like(arr)
        for i, coef in enumerate(table):
            mask = idx == i
            if np.any(mask):
                out[mask] = _poly.polyval(arr[mask], coef)
        return out

    def eval(self, x):
        """Value of the piece containing x (right-hand piece at breakpoints)."""
        arr = _as_finite_array(x)
        scalar = arr.ndim == 0
        flat = np.atleast_1d(arr)
        out = self._fn(flat) if self.pieces is None else self._piecewise(flat, self.pieces)
        return float(out[0]) if scalar else out

    def deriv(self, x):
        """Derivative of the containing piece; right-hand value at breakpoints."""
        arr = _as_finite_array(x)
        scalar = arr.ndim == 0
        flat = np.atleast_1d(arr)
        out = self._dfn(flat) if self.pieces is None else self._piecewise(flat, self._derivs)
        return float(out[0]) if scalar else out

    def __repr__(self):
        return f"ActivationSpec({self.label!r})"


def builtin(name, params=()):
    """Construct a named activation.

    Known names: ``leaky_relu(alpha)``, ``prelu(alpha)``, ``relu``,
    ``sigmoid``, ``identity``, ``abs_shift(center)``.  relu keeps an
    identically-zero left piece as an explicit special case and is tagged
    for the relu limit regime; sigmoid is evaluated exactly and tagged for
    the sigmoid regime.
    """
    params = tuple(float(p) for p in params)
    if name in ("leaky_relu", "prelu"):
        if len(params) != 1:
            raise ValueError(f"{name} takes exactly one slope parameter")
        alpha = params[0]
        if alpha <= 0.0:
            raise ValueError(f"{name} slope must be positive, got {alpha}")
        return ActivationSpec(
            f"{name}({alpha:g})", [0.0], ([0.0, alpha], [0.0, 1.0]), init_alpha=alpha
        )
    if name == "relu":
        if params:
            raise ValueError("relu takes no parameters")
        return ActivationSpec(
            "relu", [0.0], ([0.0], [0.0, 1.0]),
            coverage=COVERAGE_RELU, init_alpha=0.0, allow_zero_piece=True,
        )
    if name == "sigmoid":
        if params:
            raise ValueError("sigmoid takes no parameters")
        return ActivationSpec(
            "sigmoid", [], None, coverage=COVERAGE_SIGMOID,
            exact=(expit, lambda x: expit(x) * (1.0 - expit(x))),
        )
    if name == "identity":
        if params:
            raise ValueError("identity takes no parameters")
        return ActivationSpec("identity", [], ([0.0, 1.0],))
    if name == "abs_shift":
        c = params[0] if params else 0.0
        return ActivationSpec(f"abs_shift({c:g})", [c], ([c, -1.0], [-c, 1.0]))
    raise ValueError(f"unknown activation {name!r}")


def approximate_sigmoid(degree, cap=6.0):
    """Polynomial surrogate for sigmoid: interpolant inside, constants outside.

    Builds the degree-`degree` Chebyshev interpolant of sigmoid on
    [-cap, cap] using the endpoint-including (Lobatto) node family, then
    clamps to the interpolant's endpoint values beyond the cap.  Endpoint
    interpolation makes the tail junctions continuous to roundoff, and the
    tails sit within interpolation error of the true asymptote-side values.
    The default cap 6 keeps sigmoid(-cap) below 2.5e-3.
    """
    degree = int(degree)
    if degree < 1:
        raise ValueError("degree must be at least 1")
    cap = float(cap)
    if cap <= 0.0:
        raise ValueError("cap must be positive")
    nodes_u = np.cos(np.arange(degree + 1) * np.pi / degree)
    values = expit(cap * nodes_u)
    cheb_coef = _cheb.chebfit(nodes_u, values, degree)
    pow_u = _cheb.cheb2poly(cheb_coef)
    pow_x = pow_u / cap ** np.arange(pow_u.size)
    lo = float(_poly.polyval(-cap, pow_x))
    hi = float(_poly.polyval(cap, pow_x))
    return ActivationSpec(
        f"sigmoid_cheb{degree}", [-cap, cap], ([lo], pow_x, [hi])
    )


def sup_error(a, b, interval, grid_points=10_000):
    """max |a(x) - b(x)| over a uniform grid spanning the interval."""
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"interval must satisfy lo < hi, got [{lo}, {hi}]")
    grid_points = int(grid_points)
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    grid = np.linspace(lo, hi, grid_points)
    return float(np.max(np.abs(a.eval(grid) - b.eval(grid))))
