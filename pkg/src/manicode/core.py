"""Shared numeric plumbing: dense float64 matrices, seeded RNG streams, kNN selection.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Data is stored
column-wise: a batch of ``N`` feature vectors in ``R^d`` is a ``d x N`` array,
and a dictionary of ``k`` atoms is a ``d x k`` array.
"""

import os

import numpy as np

DTYPE = np.float64


def as_matrix(a, name="matrix"):
    """Return ``a`` as a 2-D float64 array, raising on non-finite entries."""
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def make_rng(seed=0):
    """Counter-based generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(int(seed)))


def split_rng(rng, n):
    """Derive ``n`` independent child streams from ``rng`` deterministically."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def worker_count():
    """Worker cap from ``MANICODE_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("MANICODE_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError("MANICODE_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matmul produced non-finite entries")
    return out


def pairwise_sq_dists(x, m):
    """Squared Euclidean distances between columns: entry (n, j) = ||x_n - m_j||^2.

    Uses the expansion ||x||^2 + ||m||^2 - 2 m^T x and clamps round-off
    negatives to zero.  Returns an ``N x k`` array.
    """
    x = np.asarray(x, dtype=DTYPE)
    m = np.asarray(m, dtype=DTYPE)
    if x.ndim == 1:
        x = x[:, None]
    if m.ndim == 1:
        m = m[:, None]
    if x.shape[0] != m.shape[0]:
        raise ValueError(f"dimension mismatch: x has d={x.shape[0]}, m has d={m.shape[0]}")
    xx = np.einsum("dn,dn->n", x, x)
    mm = np.einsum("dk,dk->k", m, m)
    d2 = xx[:, None] + mm[None, :] - 2.0 * (x.T @ m)
    np.maximum(d2, 0.0, out=d2)
    return d2


def knn_mask(dists, kprime):
    """Boolean ``N x k`` mask of each row's ``kprime`` smallest entries plus the partitioned rows.

    Ties at the selection threshold go to the lowest index.  The partition
    places the k'-th and (k'+1)-th order statistics at columns ``kprime - 1``
    and ``kprime`` (the latter only when ``kprime < k``).
    """
    d = np.asarray(dists, dtype=DTYPE)
    if d.ndim == 1:
        d = d[None, :]
    n, k = d.shape
    if kprime < 1:
        raise ValueError("kprime must be >= 1")
    if kprime > k:
        raise ValueError(f"kprime={kprime} exceeds number of atoms k={k}")
    if kprime == k:
        return np.ones((n, k), dtype=bool), np.sort(d, axis=1)
    part = np.partition(d, (kprime - 1, kprime), axis=1)
    thr = part[:, kprime - 1 : kprime]
    take = d <= thr
    if np.count_nonzero(take) != n * kprime:
        less = d < thr
        eq = d == thr
        need = kprime - less.sum(axis=1, keepdims=True)
        take = less | (eq & (np.cumsum(eq, axis=1) <= need))
    return take, part


def knn_indices(dists, kprime):
    """Indices of the ``kprime`` smallest entries of each row, sorted ascending by index.

    Ties at the selection threshold go to the lowest index.  ``dists`` is
    ``N x k``; the result is an ``N x kprime`` int array.
    """
    take, _ = knn_mask(dists, kprime)
    return np.nonzero(take)[1].reshape(take.shape[0], kprime)


def partial_sort_knn(dists, kprime):
    """Support set (sorted atom indices) of the ``kprime`` nearest atoms for one row."""
    row = np.asarray(dists, dtype=DTYPE).ravel()
    return knn_indices(row[None, :], kprime)[0]


def sorted_dists(dists):
    """Row-wise ascending sort (stable), used for margins and nearest-atom lookups."""
    return np.sort(np.asarray(dists, dtype=DTYPE), axis=1)
