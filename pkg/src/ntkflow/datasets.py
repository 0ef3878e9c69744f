"""Synthetic datasets, kNN graphs, and exact CSV persistence."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "Graph",
    "gen_synthetic",
    "knn_graph",
    "save_dataset",
    "load_dataset",
    "save_graph",
    "load_graph",
    "graph_path_for",
]


class Graph:
    """Undirected simple graph with the self-loop normalization cached.

    ``adjacency`` is a 0/1 symmetric matrix with zero diagonal.  ``a_hat``
    adds self loops, ``d_hat`` holds the a_hat row sums (always >= 1, so the
    normalization is invertible), and ``norm_adjacency`` is
    ``d_hat^{-1/2} a_hat d_hat^{-1/2}``, whose spectrum lies in [-1, 1].
    """

    def __init__(self, adjacency):
        a = np.asarray(adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0.0):
            raise ValueError("adjacency must have a zero diagonal")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("adjacency entries must be 0 or 1")
        self.adjacency = a
        self.m = a.shape[0]
        self.a_hat = a + np.eye(self.m)
        self.d_hat = self.a_hat.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(self.d_hat)
        self.norm_adjacency = self.a_hat * inv_sqrt[:, None] * inv_sqrt[None, :]

    def edges(self):
        """Edge list as (i, j) pairs with i < j."""
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class Dataset:
    """Training pairs; optionally a graph coupling the rows (gcn chains)."""

    inputs: np.ndarray  # (n, N)
    labels: np.ndarray  # (n, M)
    graph: Graph | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("inputs and labels must be 2-d arrays")
        if x.shape[0] != y.shape[0]:
            raise ValueError("inputs and labels must have the same row count")
        if x.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        if self.graph is not None and self.graph.m != x.shape[0]:
            raise ValueError("graph vertex count must equal the number of rows")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def N(self):
        return self.inputs.shape[1]

    @property
    def M(self):
        return self.labels.shape[1]


def gen_synthetic(n, N, M, radius=1.0, label_std=1.0, seed=0):
    """Inputs uniform on the radius-`radius` ball in R^N, labels iid normal.

    Ball sampling uses a normalized Gaussian direction scaled by
    radius * U^(1/N), which is the exact uniform radial law.  The draw
    order is fixed (directions, then radii, then labels) so a seed fully
    determines the dataset.
    """
    if n < 1 or N < 1 or M < 1:
        raise ValueError("n, N, M must all be at least 1")
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    if label_std <= 0.0:
        raise ValueError("label_std must be positive")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n, N))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # probability-zero draw, guarded anyway
    u = rng.random((n, 1))
    inputs = dirs / norms * (radius * u ** (1.0 / N))
    labels = rng.normal(0.0, label_std, size=(n, M))
    return Dataset(inputs, labels)


def knn_graph(inputs, k):
    """Symmetrized k-nearest-neighbour graph under the Euclidean metric.

    An edge {i, j} is present iff j is among i's k nearest or i among j's.
    Distance ties are broken toward the lower index.  Self edges never
    appear in the adjacency.
    """
    x = np.asarray(inputs, dtype=float)
    n = x.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n, got k={k} with n={n}")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    a = np.zeros((n, n))
    for i in range(n):
        order = np.argsort(d2[i], kind="stable")
        for j in order[:k]:
            a[i, j] = 1.0
            a[j, i] = 1.0
    return Graph(a)


def graph_path_for(path):
    """Sidecar edge-list path for a dataset CSV path."""
    path = Path(path)
    return path.parent / (path.stem + ".graph.csv")


def save_dataset(data, path):
    """Write `n,N,M` header plus one row of N+M full-precision decimals each.

    Floats are written with repr (shortest round trip), so load(save(d))
    reproduces the arrays bit for bit and repeated saves are byte-identical.
    A coupled graph goes to the `.graph.csv` sidecar.
    """
    path = Path(path)
    lines = [f"{data.n},{data.N},{data.M}"]
    for row_x, row_y in zip(data.inputs, data.labels):
        vals = [repr(float(v)) for v in row_x]
        vals += [repr(float(v)) for v in row_y]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    if data.graph is not None:
        save_graph(data.graph, graph_path_for(path))


def load_dataset(path):
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = lines[0].split(",")
    if len(header) != 3:
        raise ValueError(f"{path}: header must be 'n,N,M', got {lines[0]!r}")
    try:
        n, N, M = (int(v) for v in header)
    except ValueError:
        raise ValueError(f"{path}: non-integer dimensions in header {lines[0]!r}") from None
    rows = lines[1:]
    if len(rows) != n:
        raise ValueError(f"{path}: header promises {n} rows, file has {len(rows)}")
    inputs = np.empty((n, N))
    labels = np.empty((n, M))
    for i, row in enumerate(rows):
        vals = row.split(",")
        if len(vals) != N + M:
            raise ValueError(
                f"{path}: row {i + 1} has {len(vals)} values, expected {N + M}"
            )
        parsed = [float(v) for v in vals]
        inputs[i] = parsed[:N]
        labels[i] = parsed[N:]
    graph = None
    gpath = graph_path_for(path)
    if gpath.exists():
        graph = load_graph(gpath, n)
    return Dataset(inputs, labels, graph)


def save_graph(graph, path):
    lines = [f"{i},{j}" for i, j in graph.edges()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_graph(path, m):
    a = np.zeros((m, m))
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno} is not an 'i,j' edge")
        i, j = int(parts[0]), int(parts[1])
        if not (0 <= i < m and 0 <= j < m):
            raise ValueError(f"{path}: line {lineno} references a vertex >= m={m}")
        a[i, j] = 1.0
        a[j, i] = 1.0
    return Graph(a)
