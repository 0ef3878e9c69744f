"""Stacked residuals, the NTK Gram matrix, and its smallest eigenvalue."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .networks import forward, param_jacobian

__all__ = [
    "stacked_outputs",
    "stacked_labels",
    "residual",
    "stacked_jacobian",
    "ntk_gram",
    "min_eigenvalue",
    "save_gram_csv",
    "GRAM_ASYMMETRY_TOL",
]

GRAM_ASYMMETRY_TOL = 1e-10


def stacked_outputs(net, theta, data):
    """All predictions as one vector, example-major then output-component."""
    if net.is_gcn:
        return forward(net, theta, data.inputs).ravel()
    return np.concatenate([forward(net, theta, x) for x in data.inputs])


def stacked_labels(data):
    return data.labels.ravel()


def residual(net, theta, data):
    """y - F in the stacked ordering; its squared norm is exactly 2 * loss."""
    return stacked_labels(data) - stacked_outputs(net, theta, data)


def stacked_jacobian(net, theta, data):
    """(P, nM) matrix whose columns are per-example per-component gradients."""
    if net.is_gcn:
        return param_jacobian(net, theta, data.inputs)
    cols = [param_jacobian(net, theta, x) for x in data.inputs]
    return np.concatenate(cols, axis=1)


def ntk_gram(net, theta, data):
    """J^T J for the stacked Jacobian J; symmetrized to kill roundoff skew."""
    j = stacked_jacobian(net, theta, data)
    g = j.T @ j
    return 0.5 * (g + g.T)


def min_eigenvalue(gram):
    """Smallest eigenvalue of a symmetric matrix (deterministic LAPACK path)."""
    g = np.asarray(gram, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("gram matrix must be square")
    scale = float(np.max(np.abs(g))) if g.size else 0.0
    skew = float(np.max(np.abs(g - g.T))) if g.size else 0.0
    if skew > GRAM_ASYMMETRY_TOL * max(scale, 1.0):
        raise ValueError(f"matrix asymmetry {skew:g} beyond tolerance")
    return float(np.linalg.eigvalsh(0.5 * (g + g.T))[0])


def save_gram_csv(gram, path, n, out_dim, param_count, t):
    """Dump a Gram snapshot row-major with its dimensions in the header."""
    g = np.asarray(gram, dtype=float)
    lines = [f"# n={n},M={out_dim},P={param_count},t={repr(float(t))}"]
    for row in g:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
