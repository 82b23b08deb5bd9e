"""Feature coders alpha(x) over a dictionary and the manifold view h(x) = M alpha(x).

Every encoder takes a ``d x N`` batch and a dictionary (a
:class:`~manicode.dictionary.Dictionary` or a raw ``d x k`` array) and returns
:class:`Codes` holding the ``k x N`` coefficient matrix.
"""

from dataclasses import dataclass

import numpy as np

from .core import DTYPE, as_matrix, knn_indices, knn_mask, make_rng, pairwise_sq_dists
from .dictionary import atoms_of

KINDS = ("HA", "SC", "SCPlus", "OMP", "LLC", "SA", "LCSA", "DAE")
SOFT_KINDS = ("SA", "LCSA")
BOUNDARY_TOL = 1e-7
OMP_RIDGE = 1e-10


class CoderError(ValueError):
    """Coder failure; ``column`` and ``block`` locate it when known."""

    def __init__(self, msg, column=None, block=None):
        super().__init__(msg)
        self.column = column
        self.block = block

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.block is not None:
            where.append(f"block {self.block}")
        if self.column is not None:
            where.append(f"column {self.column}")
        return f"{msg} ({', '.join(where)})" if where else msg


class BoundaryError(CoderError):
    """Point lies on (or within tolerance of) a Voronoi facet."""


@dataclass(frozen=True)
class CoderConfig:
    kind: str = "LCSA"
    sigma: float = 1.2
    kprime: int = 8
    kappa: float = 0.1
    tau: int = 3
    rho: float = 1e-6
    iters: int = 5
    lr: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown coder kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in SOFT_KINDS and not self.sigma > 0:
            raise ValueError("sigma must be > 0 for SA/LCSA (use kind HA for the sigma -> 0 limit)")
        if self.kprime < 1 or self.tau < 1 or self.iters < 1:
            raise ValueError("kprime, tau and iters must be >= 1")
        if self.kappa < 0 or self.rho < 0:
            raise ValueError("kappa and rho must be >= 0")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be > 0")


@dataclass(frozen=True, eq=False)
class Codes:
    """Coefficients ``alpha`` (k x N).

    ``supports`` holds per-column sorted atom indices: an ``N x k'`` int array
    for the locality-constrained coders, a list of arrays for OMP.
    ``margins`` is the distance gap between the k'-th and (k'+1)-th nearest
    atom per column, ``flags`` marks OMP columns refit with a ridge.
    """

    alpha: np.ndarray
    supports: object = None
    margins: np.ndarray | None = None
    flags: np.ndarray | None = None

    @property
    def k(self):
        return self.alpha.shape[0]

    @property
    def n(self):
        return self.alpha.shape[1]

    def support_weights(self):
        """Coefficients gathered on ``supports`` as an ``N x k'`` array."""
        return np.take_along_axis(self.alpha.T, self.supports, axis=1)


def _prepare(x, m):
    x = as_matrix(x, "x")
    atoms = atoms_of(m)
    if atoms.shape[1] == 0:
        raise CoderError("empty dictionary")
    if x.shape[0] != atoms.shape[0]:
        raise ValueError(f"dimension mismatch: x has d={x.shape[0]}, dictionary has d={atoms.shape[0]}")
    return x, atoms


def knn_margins(d2, kprime, part=None):
    """Gap between the (k'+1)-th and k'-th smallest Euclidean distance per row."""
    k = d2.shape[1]
    if kprime >= k:
        return np.full(d2.shape[0], np.inf)
    if part is None:
        part = np.partition(d2, (kprime - 1, kprime), axis=1)
    return np.sqrt(part[:, kprime]) - np.sqrt(part[:, kprime - 1])


def _scatter(weights, idx, k):
    n = idx.shape[0]
    alpha = np.zeros((k, n), dtype=DTYPE)
    alpha[idx.T, np.arange(n)[None, :]] = weights.T
    return alpha


def _softmax_neg(sq, sigma):
    # subtract the row minimum so the largest exponent is exactly 0
    z = -(sq - sq.min(axis=1, keepdims=True)) / (2.0 * sigma * sigma)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    return w


def encode_ha(x, m):
    """One-hot code on the nearest atom; ties go to the lowest index."""
    x, atoms = _prepare(x, m)
    d2 = pairwise_sq_dists(x, atoms)
    idx = np.argmin(d2, axis=1)[:, None]
    alpha = _scatter(np.ones_like(idx, dtype=DTYPE), idx, atoms.shape[1])
    return Codes(alpha, supports=idx, margins=knn_margins(d2, 1))


def encode_sa(x, m, sigma):
    """Gaussian membership probabilities over all atoms (equal weights, equal variance)."""
    if not sigma > 0:
        raise CoderError("sigma must be > 0")
    x, atoms = _prepare(x, m)
    d2 = pairwise_sq_dists(x, atoms)
    k = atoms.shape[1]
    idx = np.broadcast_to(np.arange(k), d2.shape).copy()
    return Codes(_softmax_neg(d2, sigma).T.copy(), supports=idx, margins=np.full(d2.shape[0], np.inf))


def encode_lcsa(x, m, sigma, kprime):
    """Soft assignment restricted to the ``kprime`` nearest atoms, zeros elsewhere."""
    if not sigma > 0:
        raise CoderError("sigma must be > 0")
    x, atoms = _prepare(x, m)
    k = atoms.shape[1]
    if kprime > k:
        raise CoderError(f"kprime={kprime} exceeds k={k}")
    d2 = pairwise_sq_dists(x, atoms)
    take, part = knn_mask(d2, kprime)
    idx = np.nonzero(take)[1].reshape(take.shape[0], kprime)
    # softmax over the selected atoms only; unselected entries get weight exactly 0
    w = np.exp((d2.min(axis=1, keepdims=True) - d2) * (0.5 / (sigma * sigma)))
    w *= take
    w /= w.sum(axis=1, keepdims=True)
    return Codes(w.T.copy(), supports=idx, margins=knn_margins(d2, kprime, part))


def encode_llc(x, m, kprime, rho=1e-6):
    """Affine (sum-to-one) code on the k' nearest atoms via a regularised covariance solve."""
    x, atoms = _prepare(x, m)
    k = atoms.shape[1]
    if kprime > k:
        raise CoderError(f"kprime={kprime} exceeds k={k}")
    d2 = pairwise_sq_dists(x, atoms)
    idx = knn_indices(d2, kprime)
    z = atoms.T[idx] - x.T[:, None, :]  # N x k' x d
    c = z @ z.transpose(0, 2, 1)
    c = c + rho * np.eye(kprime)
    ones = np.ones((len(idx), kprime, 1))
    try:
        beta = np.linalg.solve(c, ones)[:, :, 0]
    except np.linalg.LinAlgError:
        for n in range(len(idx)):
            try:
                np.linalg.solve(c[n], ones[n])
            except np.linalg.LinAlgError:
                raise CoderError("singular LLC system", column=n) from None
        raise
    s = beta.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(beta).all(axis=1) | (np.abs(s[:, 0]) < 1e-300)
    if np.any(bad):
        raise CoderError("singular LLC system", column=int(np.argmax(bad)))
    w = beta / s
    return Codes(_scatter(w, idx, k), supports=idx, margins=knn_margins(d2, kprime))


def encode_omp(x, m, tau):
    """Greedy pursuit: pick the atom most correlated with the residual, refit, repeat.

    A column stops early once its residual has no correlation left to explain
    (or the best atom is already active).  Columns whose active Gram matrix is
    numerically singular are refit with a tiny ridge and flagged.
    """
    x, atoms = _prepare(x, m)
    d, k = atoms.shape
    if tau < 1:
        raise CoderError("tau must be >= 1")
    if tau > k:
        raise CoderError(f"tau={tau} exceeds k={k}")
    if np.any(np.linalg.norm(atoms, axis=0) == 0):
        raise CoderError("OMP requires nonzero atoms")
    n = x.shape[1]
    active = np.zeros((n, tau), dtype=int)
    coef = np.zeros((n, tau))
    count = np.zeros(n, dtype=int)
    live = np.ones(n, dtype=bool)
    flags = np.zeros(n, dtype=bool)
    resid = x.copy()
    xnorm = np.linalg.norm(x, axis=0)
    for i in range(tau):
        p = np.abs(atoms.T @ resid)
        j = np.argmax(p, axis=0)
        pmax = p[j, np.arange(n)]
        dup = (active[:, :i] == j[:, None]).any(axis=1) if i else np.zeros(n, dtype=bool)
        live &= ~dup & (pmax > 1e-12 * np.maximum(xnorm, 1e-300))
        cols = np.nonzero(live)[0]
        if cols.size == 0:
            break
        active[cols, i] = j[cols]
        count[cols] = i + 1
        sel = atoms.T[active[cols, : i + 1]]  # c x (i+1) x d
        gram = sel @ sel.transpose(0, 2, 1)
        rhs = sel @ x.T[cols][:, :, None]
        cond = np.linalg.cond(gram)
        sing = ~np.isfinite(cond) | (cond > 1e12)
        if np.any(sing):
            gram[sing] += OMP_RIDGE * np.eye(i + 1)
            flags[cols[sing]] = True
        a = np.linalg.solve(gram, rhs)[:, :, 0]
        coef[cols, : i + 1] = a
        resid[:, cols] = x[:, cols] - np.einsum("cid,ci->dc", sel, a)
    alpha = np.zeros((k, n))
    supports = []
    for c in range(n):
        act = active[c, : count[c]]
        alpha[act, c] = coef[c, : count[c]]
        supports.append(np.sort(act))
    return Codes(alpha, supports=supports, flags=flags)


def default_sc_lr(atoms):
    """Safe inner step 1/(4 ||M||_2^2); below the split problem's inverse Lipschitz constant."""
    s = np.linalg.norm(atoms, 2)
    return 1.0 / (4.0 * s * s) if s > 0 else 1.0


def sc_objective(x, atoms, alpha, kappa):
    """Per-column ||x - M a||^2 + kappa ||a||_1."""
    r = x - atoms @ alpha
    return np.einsum("dn,dn->n", r, r) + kappa * np.abs(alpha).sum(axis=0)


def sc_split_objective(x, atoms, apos, aneg, kappa):
    """Per-column objective of the positive/negative split: equals ``sc_objective`` when supports are disjoint."""
    r = x - atoms @ (apos - aneg)
    return np.einsum("dn,dn->n", r, r) + kappa * (apos.sum(axis=0) + aneg.sum(axis=0))


def encode_sc_plus(x, m, kappa, iters=5, lr=None, rng=None, trace=False):
    """Non-negative sparse code by projected gradient steps with rate lr/(1+i)^0.3.

    With ``trace=True`` also returns the per-column objective after the
    initialisation and after each iteration, shape ``(iters + 1) x N``.
    """
    x, atoms = _prepare(x, m)
    rng = make_rng(0) if rng is None else rng
    lr = default_sc_lr(atoms) if lr is None else lr
    k, n = atoms.shape[1], x.shape[1]
    a = rng.uniform(1e-6, 1.0, size=(k, n))
    a = a / (np.abs(a).sum(axis=0, keepdims=True) + 1e-6)
    hist = [sc_objective(x, atoms, a, kappa)] if trace else None
    for i in range(1, iters + 1):
        grad = -2.0 * atoms.T @ (x - atoms @ a) + kappa
        a = np.maximum(a - lr / (1.0 + i) ** 0.3 * grad, 0.0)
        if trace:
            hist.append(sc_objective(x, atoms, a, kappa))
    codes = Codes(a)
    return (codes, np.array(hist)) if trace else codes


def encode_sc(x, m, kappa, iters=5, lr=None, rng=None, trace=False):
    """Sparse code via projected descent on a positive/negative split of alpha.

    With ``trace=True`` also returns ``(split_objective, l1_objective)``
    histories, each ``(iters + 1) x N``.
    """
    x, atoms = _prepare(x, m)
    rng = make_rng(0) if rng is None else rng
    lr = default_sc_lr(atoms) if lr is None else lr
    k, n = atoms.shape[1], x.shape[1]
    a = rng.uniform(-1.0, 1.0, size=(k, n))
    ap = np.maximum(a, 0.0) + 1e-6
    an = np.maximum(-a, 0.0) + 1e-6
    ap = ap / (ap.sum(axis=0, keepdims=True) + 1e-6)
    an = an / (an.sum(axis=0, keepdims=True) + 1e-6)
    if trace:
        split_hist = [sc_split_objective(x, atoms, ap, an, kappa)]
        l1_hist = [sc_objective(x, atoms, ap - an, kappa)]
    for i in range(1, iters + 1):
        g = -2.0 * atoms.T @ (x - atoms @ (ap - an))
        step = lr / (1.0 + i) ** 0.3
        ap, an = np.maximum(ap - step * (g + kappa), 0.0), np.maximum(an - step * (kappa - g), 0.0)
        if trace:
            split_hist.append(sc_split_objective(x, atoms, ap, an, kappa))
            l1_hist.append(sc_objective(x, atoms, ap - an, kappa))
    codes = Codes(ap - an)
    return (codes, np.array(split_hist), np.array(l1_hist)) if trace else codes


def encode(x, m, cfg, rng=None):
    """Dispatch on ``cfg.kind`` (all kinds except DAE, which is not dictionary based)."""
    kind = cfg.kind
    if kind == "HA":
        return encode_ha(x, m)
    if kind == "SA":
        return encode_sa(x, m, cfg.sigma)
    if kind == "LCSA":
        return encode_lcsa(x, m, cfg.sigma, cfg.kprime)
    if kind == "LLC":
        return encode_llc(x, m, cfg.kprime, cfg.rho)
    if kind == "OMP":
        return encode_omp(x, m, cfg.tau)
    if kind == "SC":
        return encode_sc(x, m, cfg.kappa, cfg.iters, cfg.lr, rng)
    if kind == "SCPlus":
        return encode_sc_plus(x, m, cfg.kappa, cfg.iters, cfg.lr, rng)
    raise CoderError(f"coder kind {kind!r} has no dictionary encoder")


def decode(codes, m):
    alpha = codes.alpha if isinstance(codes, Codes) else as_matrix(codes, "alpha")
    atoms = atoms_of(m)
    if alpha.shape[0] != atoms.shape[1]:
        raise ValueError(f"dimension mismatch: codes have k={alpha.shape[0]}, dictionary has k={atoms.shape[1]}")
    return atoms @ alpha


def lcsa_jacobian(x, m, sigma, kprime, margin_tol=BOUNDARY_TOL):
    """Jacobian of h(x) = M alpha(x) at a single point ``x`` (length-d vector).

    J = (1/sigma^2) sum_k alpha_k (m_k - y)(m_k - y)^T over the support, with
    y = h(x).  Symmetric PSD by construction.  Raises :class:`BoundaryError`
    when ``x`` is within ``margin_tol`` of a facet of its k'-NN cell.
    """
    xv = np.asarray(x, dtype=DTYPE).reshape(-1, 1)
    codes = encode_lcsa(xv, m, sigma, kprime)
    if codes.margins[0] <= margin_tol:
        raise BoundaryError(f"point within {margin_tol:g} of a Voronoi facet (margin {codes.margins[0]:.3g})", column=0)
    atoms = atoms_of(m)
    idx = codes.supports[0]
    w = codes.alpha[idx, 0]
    s = atoms[:, idx]
    y = s @ w
    mt = s - y[:, None]
    jac = (mt * w) @ mt.T / (sigma * sigma)
    return 0.5 * (jac + jac.T)


def soft_jvp(atoms, codes, h, g, sigma):
    """Column-wise J_n g_n for SA/LCSA codes; J is symmetric so this is also J^T g.

    ``h`` is the decoded batch ``M alpha`` and ``g`` a ``d x N`` batch of vectors.
    Uses J g = (1/sigma^2) sum_k alpha_k (m_k - h) <m_k - h, g>, expanded into
    dense products (alpha vanishes off the support).
    """
    proj = atoms.T @ g - np.einsum("dn,dn->n", h, g)[None, :]
    c = codes.alpha * proj
    return (atoms @ c - h * c.sum(axis=0)[None, :]) / (sigma * sigma)
