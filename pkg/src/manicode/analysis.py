"""Numerical checks of the locality-constrained coder's geometric properties.

Every check draws probes from a Gaussian cloud around randomly chosen atoms,
keeps the ones that sit strictly inside a k'-nearest-neighbour cell, and
compares the coder against a closed-form bound.  Results are collected into a
:class:`PropertyReport` that serialises to plain ``key=value`` records.
"""

from dataclasses import dataclass, field

import numpy as np

from .coders import encode_ha, encode_lcsa, lcsa_jacobian
from .core import DTYPE, as_matrix, knn_indices, make_rng, pairwise_sq_dists, split_rng
from .dictionary import atoms_of

STALL_LIMIT = 10**6
MARGIN_TOL = 1e-7
ABS_TOL = 1e-9
HA_SIGMAS = (1.0, 0.1, 0.01, 0.001)


class SamplingStall(RuntimeError):
    """Rejection sampling could not find enough in-cell probes."""


@dataclass
class CheckResult:
    name: str
    samples_tested: int
    violations: int
    worst_margin: float
    tolerance: float
    existential: bool = False
    extra: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self):
        return self.violations == 0


@dataclass
class PropertyReport:
    seed: int
    config: dict
    checks: list = field(default_factory=list)

    def add(self, result):
        self.checks.append(result)
        return result

    def get(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def passed(self):
        """True iff every universally quantified check passed."""
        return all(c.passed for c in self.checks if not c.existential)

    def to_text(self):
        lines = ["# property report", f"seed={self.seed}"]
        lines += [f"config.{k}={_fmt(v)}" for k, v in self.config.items()]
        lines.append(f"all_pass={str(self.passed).lower()}")
        for c in self.checks:
            lines.append("")
            lines.append(f"check={c.name}")
            lines.append(f"samples_tested={c.samples_tested}")
            lines.append(f"violations={c.violations}")
            lines.append(f"worst_margin={_fmt(c.worst_margin)}")
            lines.append(f"tolerance={_fmt(c.tolerance)}")
            lines.append(f"existential={str(c.existential).lower()}")
            lines.append(f"pass={str(c.passed).lower()}")
            for k, v in c.extra.items():
                lines.append(f"{k}={_fmt(v)}")
            if c.note:
                lines.append(f"note={c.note}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_report(text):
    """Split a report into its header dict and a list of per-check dicts (values kept as strings)."""
    header, checks = {}, []
    cur = header
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        if key == "check":
            cur = {"name": val}
            checks.append(cur)
        else:
            cur[key] = val
    return header, checks


@dataclass
class CellProbe:
    x: np.ndarray
    support: np.ndarray
    margin: float
    diameter: float
    centroid: np.ndarray
    nn: np.ndarray


def diameter(points, p=2):
    """Largest pairwise distance between the columns of ``points`` in the ``p``-norm."""
    pts = np.asarray(points, dtype=DTYPE)
    if pts.shape[1] < 2:
        return 0.0
    diff = pts[:, :, None] - pts[:, None, :]
    return float(np.max(np.linalg.norm(diff, ord=p, axis=0)))


def _diameters(atoms, supports, p=2):
    # supports: N x k' -> per-row simplex diameter
    s = atoms.T[supports]  # N x k' x d
    diff = s[:, :, None, :] - s[:, None, :, :]
    if p == 1:
        dist = np.abs(diff).sum(axis=-1)
    else:
        dist = np.sqrt(np.einsum("nijd,nijd->nij", diff, diff))
    return dist.reshape(dist.shape[0], -1).max(axis=1)


def probe_cell(x, m, kprime):
    """Cell geometry at ``x``: support, margin, simplex diameter, centroid and nearest atom."""
    atoms = atoms_of(m)
    k = atoms.shape[1]
    if kprime >= k:
        raise ValueError(f"kprime={kprime} must be < k={k} to define a margin")
    xv = np.asarray(x, dtype=DTYPE).reshape(-1)
    d2 = pairwise_sq_dists(xv[:, None], atoms)[0]
    dist = np.sqrt(np.sort(d2))
    support = knn_indices(d2[None, :], kprime)[0]
    s = atoms[:, support]
    return CellProbe(
        x=xv,
        support=support,
        margin=float(dist[kprime] - dist[kprime - 1]),
        diameter=diameter(s),
        centroid=s.mean(axis=1),
        nn=atoms[:, int(np.argmin(d2))].copy(),
    )


def random_dictionary(d, k, rng):
    """Standard-normal atoms; the default geometry for the verification suite."""
    return rng.normal(size=(d, k))


def cloud_scale(atoms):
    """Median nearest-neighbour distance between atoms."""
    d2 = pairwise_sq_dists(atoms, atoms)
    np.fill_diagonal(d2, np.inf)
    return float(np.median(np.sqrt(d2.min(axis=1))))


def _margins_and_supports(x, atoms, kprime):
    d2 = pairwise_sq_dists(x, atoms)
    idx = knn_indices(d2, kprime)
    if kprime < atoms.shape[1]:
        part = np.partition(d2, (kprime - 1, kprime), axis=1)
        margin = np.sqrt(part[:, kprime]) - np.sqrt(part[:, kprime - 1])
    else:
        margin = np.full(x.shape[1], np.inf)
    return idx, margin, d2


class _Sampler:
    """Batched rejection sampler over a Gaussian cloud around random atoms."""

    def __init__(self, atoms, rng, scale=None, batch=4096):
        self.atoms = atoms
        self.rng = rng
        self.scale = cloud_scale(atoms) if scale is None else scale
        self.batch = batch
        self.attempts = 0

    def draw(self, n):
        d, k = self.atoms.shape
        centers = self.atoms[:, self.rng.integers(0, k, size=n)]
        return centers + self.scale * self.rng.normal(size=(d, n)) / np.sqrt(d) * 1.5

    def collect(self, n, accept):
        """Draw until ``n`` accepted columns; ``accept(x) -> (mask, payload_x)``."""
        out = []
        got = 0
        while got < n:
            if self.attempts >= STALL_LIMIT:
                raise SamplingStall(f"only {got} of {n} in-cell probes after {self.attempts} attempts")
            size = min(self.batch, STALL_LIMIT - self.attempts)
            x = self.draw(size)
            self.attempts += size
            keep = accept(x)
            cols = np.nonzero(keep)[0][: n - got]
            out.append(x[:, cols])
            got += cols.size
        return np.concatenate(out, axis=1)


def _decode_lcsa(x, atoms, sigma, kprime):
    codes = encode_lcsa(x, atoms, sigma, kprime)
    return atoms @ codes.alpha, codes


def check_lipschitz(m, sigma, kprime, n_pairs, rng, k_factor=1.0):
    """Same-cell pairs: ||h(x) - h(x')||_p <= K_p ||x - x'||_p + 1e-9 for p in {1, 2}.

    K_p = D_p^2 / sigma^2 with D_p the support simplex diameter measured in the
    same norm.  With ``kprime == 1`` the code is constant on a cell; the HA
    branch additionally checks ||n(x) - n(x')||_2 <= D for the nearest atoms.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    atoms = atoms_of(m)
    d = atoms.shape[0]
    sampler = _Sampler(atoms, rng)
    xs, xps = [], []
    got = 0
    while got < n_pairs:
        if sampler.attempts >= STALL_LIMIT:
            raise SamplingStall(f"only {got} of {n_pairs} same-cell pairs after {sampler.attempts} attempts")
        size = min(sampler.batch, STALL_LIMIT - sampler.attempts)
        x = sampler.draw(size)
        sampler.attempts += size
        idx, margin, _ = _margins_and_supports(x, atoms, kprime)
        u = rng.normal(size=(d, size))
        u /= np.linalg.norm(u, axis=0)
        t = sampler.scale * 10.0 ** rng.uniform(-4.0, 0.0, size=size)
        xp = x + t * u
        idx2, margin2, _ = _margins_and_supports(xp, atoms, kprime)
        keep = np.all(idx == idx2, axis=1) & (margin > MARGIN_TOL) & (margin2 > MARGIN_TOL)
        cols = np.nonzero(keep)[0][: n_pairs - got]
        xs.append(x[:, cols])
        xps.append(xp[:, cols])
        got += cols.size
    x = np.concatenate(xs, axis=1)
    xp = np.concatenate(xps, axis=1)
    h, codes = _decode_lcsa(x, atoms, sigma, kprime)
    hp, _ = _decode_lcsa(xp, atoms, sigma, kprime)
    sup = codes.supports
    violations = 0
    worst = np.inf
    worst_ratio = {}
    for p in (1, 2):
        kp = k_factor * _diameters(atoms, sup, p) ** 2 / sigma**2
        lhs = np.linalg.norm(h - hp, ord=p, axis=0)
        dx = np.linalg.norm(x - xp, ord=p, axis=0)
        slack = kp * dx + ABS_TOL - lhs
        violations += int(np.sum(slack < 0))
        worst = min(worst, float(slack.min()))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(kp > 0, lhs / (kp * dx), np.where(lhs > ABS_TOL, np.inf, 0.0))
        worst_ratio[f"worst_ratio_l{p}"] = float(ratio.max())
    # HA branch: the nearest atom stays inside the support simplex
    nn = atoms[:, encode_ha(x, atoms).supports[:, 0]]
    nnp = atoms[:, encode_ha(xp, atoms).supports[:, 0]]
    ha_slack = _diameters(atoms, sup, 2) + ABS_TOL - np.linalg.norm(nn - nnp, axis=0)
    ha_viol = int(np.sum(ha_slack < 0))
    extra = dict(worst_ratio)
    extra["ha_violations"] = ha_viol
    extra["attempts"] = sampler.attempts
    if k_factor != 1.0:
        extra["k_factor"] = float(k_factor)
    return CheckResult("lipschitz", n_pairs, violations + ha_viol, min(worst, float(ha_slack.min())), ABS_TOL, extra=extra)


def check_reconstruction_bound(m, sigma, kprime, n_samples, rng):
    """||M alpha(x) - x||_2 <= max(||x - n(x)||_2, ||x - mu(x)||_2) + 1e-9 per probe."""
    atoms = atoms_of(m)
    sampler = _Sampler(atoms, rng)
    x = sampler.draw(n_samples)
    sampler.attempts += n_samples
    h, codes = _decode_lcsa(x, atoms, sigma, kprime)
    lhs = np.linalg.norm(h - x, axis=0)
    sup = codes.supports
    mu = atoms.T[sup].mean(axis=1).T
    d2 = pairwise_sq_dists(x, atoms)
    nn_dist = np.sqrt(d2.min(axis=1))
    rhs = np.maximum(nn_dist, np.linalg.norm(x - mu, axis=0))
    slack = rhs + ABS_TOL - lhs
    viol = int(np.sum(slack < 0))
    return CheckResult(
        "reconstruction_bound",
        n_samples,
        viol,
        float(slack.min()),
        ABS_TOL,
        extra={"sigma": float(sigma), "worst_excess": float(max(0.0, -slack.min()))},
    )


def _perp_directions(atoms, sup, rng):
    """Unit vectors orthogonal to the support's atom differences (None where the space is trivial)."""
    n = sup.shape[0]
    d = atoms.shape[0]
    out = np.zeros((d, n))
    ok = np.zeros(n, dtype=bool)
    for i in range(n):
        s = atoms[:, sup[i]]
        diffs = s[:, 1:] - s[:, :1]
        if diffs.shape[1]:
            q, r = np.linalg.qr(diffs)
            rank = int(np.sum(np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())))
            q = q[:, :rank]
        else:
            q = np.zeros((d, 0))
        if q.shape[1] >= d:
            continue
        v = rng.normal(size=d)
        # two passes of Gram-Schmidt for numerical orthogonality
        v -= q @ (q.T @ v)
        v -= q @ (q.T @ v)
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            out[:, i] = v / nv
            ok[i] = True
    return out, ok


def check_fibration(m, sigma, kprime, n_samples, rng):
    """Codes lie in the open simplex, and h is constant along in-cell perpendicular moves."""
    atoms = atoms_of(m)
    d = atoms.shape[0]
    if kprime > d:
        raise ValueError("fibre check needs kprime <= d")
    sampler = _Sampler(atoms, rng)

    def accept(x):
        _, margin, _ = _margins_and_supports(x, atoms, kprime)
        return margin > MARGIN_TOL

    x = sampler.collect(n_samples, accept)
    h, codes = _decode_lcsa(x, atoms, sigma, kprime)
    sup = codes.supports
    w = codes.support_weights()
    pos_viol = int(np.sum(np.any(w <= 0, axis=1)))
    sum_err = np.abs(w.sum(axis=1) - 1.0)
    sum_viol = int(np.sum(sum_err > ABS_TOL))
    dirs, ok = _perp_directions(atoms, sup, rng)
    _, margin, _ = _margins_and_supports(x, atoms, kprime)
    # each distance moves by at most |delta|, so a step of margin/4 keeps the ordering
    step = 0.25 * margin * rng.uniform(0.1, 1.0, size=margin.size)
    xq = x + dirs * step
    hq, codes_q = _decode_lcsa(xq, atoms, sigma, kprime)
    same = np.all(codes_q.supports == sup, axis=1)
    change = np.linalg.norm(hq - h, axis=0)
    tested = ok & same
    fib_viol = int(np.sum(change[tested] >= ABS_TOL))
    worst = float(ABS_TOL - change[tested].max()) if tested.any() else ABS_TOL
    note = "" if ok.any() else "perpendicular space trivial for every probe; fibre part vacuous"
    return CheckResult(
        "fibration",
        n_samples,
        pos_viol + sum_viol + fib_viol,
        min(worst, float(ABS_TOL - sum_err.max())),
        ABS_TOL,
        extra={
            "positivity_violations": pos_viol,
            "sum_violations": sum_viol,
            "fibre_violations": fib_viol,
            "fibre_tested": int(tested.sum()),
            "max_fibre_change": float(change[tested].max()) if tested.any() else 0.0,
        },
        note=note,
    )


def check_boundary_discontinuity(m, sigma, kprime, rng, n_constructions=100, eps=1e-6):
    """Existential: find facet crossings whose jump exceeds 10 * K * 2 eps.

    A crossing is built by projecting a probe onto the bisector of its k'-th
    and (k'+1)-th nearest atoms and stepping ``eps`` to either side.
    """
    atoms = atoms_of(m)
    k = atoms.shape[1]
    if kprime >= k:
        raise ValueError("need kprime < k to cross a facet")
    sampler = _Sampler(atoms, rng)
    jumps, bounds = [], []
    while len(jumps) < n_constructions:
        if sampler.attempts >= STALL_LIMIT:
            raise SamplingStall(f"only {len(jumps)} facet constructions after {sampler.attempts} attempts")
        x = sampler.draw(1)[:, 0]
        sampler.attempts += 1
        order = np.argsort(pairwise_sq_dists(x[:, None], atoms)[0], kind="stable")
        a, b = order[kprime - 1], order[kprime]
        u = atoms[:, b] - atoms[:, a]
        nu = np.linalg.norm(u)
        if nu == 0:
            continue
        u /= nu
        c = 0.5 * (atoms[:, a] + atoms[:, b])
        p = x - ((x - c) @ u) * u
        dist = np.sqrt(pairwise_sq_dists(p[:, None], atoms)[0])
        others = np.delete(np.arange(k), [a, b])
        inner = order[: kprime - 1]
        outer = np.setdiff1d(others, inner)
        dab = dist[a]
        if kprime > 1 and dist[inner].max() >= dab - 10 * eps:
            continue
        if outer.size and dist[outer].min() <= dab + 10 * eps:
            continue
        xm = (p - eps * u)[:, None]
        xp = (p + eps * u)[:, None]
        hm, cm = _decode_lcsa(xm, atoms, sigma, kprime)
        hp, cp = _decode_lcsa(xp, atoms, sigma, kprime)
        dm = diameter(atoms[:, cm.supports[0]])
        dp = diameter(atoms[:, cp.supports[0]])
        kk = max(dm, dp) ** 2 / sigma**2
        jumps.append(float(np.linalg.norm(hp - hm)))
        bounds.append(10.0 * kk * 2.0 * eps)
    jumps = np.array(jumps)
    bounds = np.array(bounds)
    excess = jumps - bounds
    witnesses = int(np.sum(excess > 0))
    note = "" if witnesses else f"no jump above the Lipschitz explanation; largest jump {jumps.max():.3g}"
    return CheckResult(
        "boundary_discontinuity",
        n_constructions,
        0 if witnesses else 1,
        float(excess.max()),
        float(eps),
        existential=True,
        extra={"witnesses": witnesses, "max_jump": float(jumps.max()), "median_jump": float(np.median(jumps))},
        note=note,
    )


def fd_jacobian(x, atoms, sigma, kprime, step=1e-5):
    """Central-difference Jacobian of h at a single point."""
    xv = np.asarray(x, dtype=DTYPE).reshape(-1)
    d = xv.size
    e = np.eye(d) * step
    pts = np.concatenate([xv[:, None] + e, xv[:, None] - e], axis=1)
    h, _ = _decode_lcsa(pts, atoms, sigma, kprime)
    return (h[:, :d] - h[:, d:]) / (2.0 * step)


def check_jacobian(m, sigma, kprime, n_samples, rng, fd_step=1e-5, fd_tol=1e-5, k_factor=1.0):
    """Analytic Jacobian: exact symmetry, PSD, spectral bound D^2/sigma^2, agreement with central FD."""
    atoms = atoms_of(m)
    d = atoms.shape[0]
    sampler = _Sampler(atoms, rng)

    # keep probes far enough from facets that the FD stencil stays in-cell
    def accept(x):
        _, margin, _ = _margins_and_supports(x, atoms, kprime)
        return margin > 100.0 * fd_step

    x = sampler.collect(n_samples, accept)
    sym_v = psd_v = spec_v = fd_v = 0
    worst = np.inf
    max_fd = 0.0
    max_ratio = 0.0
    for i in range(n_samples):
        xi = x[:, i]
        jac = lcsa_jacobian(xi, atoms, sigma, kprime)
        probe = probe_cell(xi, atoms, kprime) if kprime < atoms.shape[1] else None
        dia = probe.diameter if probe is not None else diameter(atoms)
        bound = k_factor * dia**2 / sigma**2
        if not np.array_equal(jac, jac.T):
            sym_v += 1
        ev = np.linalg.eigvalsh(jac)
        if ev[0] < -1e-10:
            psd_v += 1
        if ev[-1] > bound + ABS_TOL:
            spec_v += 1
        if bound > 0:
            max_ratio = max(max_ratio, ev[-1] / bound)
        err = float(np.max(np.abs(jac - fd_jacobian(xi, atoms, sigma, kprime, fd_step))))
        max_fd = max(max_fd, err)
        if err >= fd_tol:
            fd_v += 1
        worst = min(worst, bound + ABS_TOL - ev[-1], ev[0] + 1e-10, fd_tol - err)
    return CheckResult(
        "jacobian",
        n_samples,
        sym_v + psd_v + spec_v + fd_v,
        float(worst),
        fd_tol,
        extra={
            "symmetry_violations": sym_v,
            "psd_violations": psd_v,
            "spectral_violations": spec_v,
            "fd_violations": fd_v,
            "max_fd_error": max_fd,
            "max_eig_over_bound": float(max_ratio),
            "dim": d,
        },
    )


def ha_gaps(x, atoms, kprime, sigmas=HA_SIGMAS):
    """Max-norm distance between the LCSA code at each sigma and the HA code; shape (len(sigmas), N)."""
    ha = encode_ha(x, atoms).alpha
    return np.stack([np.max(np.abs(encode_lcsa(x, atoms, s, kprime).alpha - ha), axis=0) for s in sigmas])


def check_ha_limit(m, kprime, n_samples, rng, sigmas=HA_SIGMAS, min_gap=0.1, final_tol=1e-6):
    """Gap to HA strictly decreases along the sigma grid (or is exactly 0) and ends below ``final_tol``.

    Probes are kept when the first-neighbour distance gap exceeds ``min_gap``
    and the k'-margin exceeds 1e-7.
    """
    atoms = atoms_of(m)
    sampler = _Sampler(atoms, rng)

    def accept(x):
        _, margin, d2 = _margins_and_supports(x, atoms, kprime)
        if atoms.shape[1] > 1:
            part = np.sqrt(np.partition(d2, 1, axis=1)[:, :2])
            first = part[:, 1] - part[:, 0]
        else:
            first = np.full(x.shape[1], np.inf)
        return (first > min_gap) & (margin > MARGIN_TOL)

    x = sampler.collect(n_samples, accept)
    gaps = ha_gaps(x, atoms, kprime, sigmas)
    nxt, prev = gaps[1:], gaps[:-1]
    mono = np.all((nxt < prev) | ((nxt == 0) & (prev == 0)) | ((nxt == 0) & (prev > 0)), axis=0)
    final_ok = gaps[-1] < final_tol
    viol = int(np.sum(~(mono & final_ok)))
    return CheckResult(
        "ha_limit",
        n_samples,
        viol,
        float(final_tol - gaps[-1].max()),
        final_tol,
        extra={
            "monotone_violations": int(np.sum(~mono)),
            "final_gap_max": float(gaps[-1].max()),
            "gap_at_sigma1_median": float(np.median(gaps[0])),
        },
    )


def mean_reconstruction_error(x, m, alpha):
    """Mean over columns of ||x_n - M alpha_n||_2."""
    x = as_matrix(x, "x")
    atoms = atoms_of(m)
    a = alpha.alpha if hasattr(alpha, "alpha") else as_matrix(alpha, "alpha")
    return float(np.mean(np.linalg.norm(x - atoms @ a, axis=0)))


def run_suite(d=8, k=64, kprime=8, sigma=1.2, samples=1000, seed=0, k_factor=1.0, atoms=None):
    """Run every check on one dictionary; each check gets its own child RNG stream."""
    if not 1 <= kprime < k:
        raise ValueError("need 1 <= kprime < k")
    rng = make_rng(seed)
    dict_rng, *streams = split_rng(rng, 7)
    m = random_dictionary(d, k, dict_rng) if atoms is None else atoms_of(atoms)
    report = PropertyReport(seed, {"d": d, "k": k, "kprime": kprime, "sigma": float(sigma), "samples": samples})
    if k_factor != 1.0:
        report.config["k_factor"] = float(k_factor)
    report.add(check_lipschitz(m, sigma, kprime, samples, streams[0], k_factor=k_factor))
    report.add(check_reconstruction_bound(m, sigma, kprime, samples, streams[1]))
    if kprime <= d:
        report.add(check_fibration(m, sigma, kprime, samples, streams[2]))
    report.add(check_boundary_discontinuity(m, sigma, kprime, streams[3], n_constructions=min(samples, 100)))
    report.add(check_jacobian(m, sigma, kprime, samples, streams[4], k_factor=k_factor))
    report.add(check_ha_limit(m, kprime, samples, streams[5]))
    return report

