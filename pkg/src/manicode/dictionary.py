"""Dictionary atoms and their updates: uniform init, one-step SGD refit, EMA variant."""

from dataclasses import dataclass, replace

import numpy as np

from .core import DTYPE, as_matrix

DEFAULT_LR = 2e-3
DEFAULT_K = 1024
STEP_DECAY = 0.3


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Atom matrix ``atoms`` (d x k) plus its learning-rate state.

    ``step_count`` counts completed gradient steps and drives the decayed rate
    ``lr / (1 + i) ** 0.3`` with ``i = step_count + 1``.
    """

    atoms: np.ndarray
    lr: float = DEFAULT_LR
    step_count: int = 0
    norm_cap: float | None = None

    def __post_init__(self):
        a = as_matrix(self.atoms, "atoms")
        if a.shape[1] < 1:
            raise ValueError("dictionary needs at least one atom")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    @property
    def d(self):
        return self.atoms.shape[0]

    @property
    def k(self):
        return self.atoms.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Dictionary):
            return NotImplemented
        return (
            np.array_equal(self.atoms, other.atoms)
            and self.lr == other.lr
            and self.step_count == other.step_count
            and self.norm_cap == other.norm_cap
        )


def atoms_of(m):
    """Accept a :class:`Dictionary` or a raw ``d x k`` array."""
    if isinstance(m, Dictionary):
        return m.atoms
    return as_matrix(m, "dictionary")


def init_dictionary(d, k, rng, lr=DEFAULT_LR, norm_cap=None):
    """Entries ~ U(-1, 1), then each atom divided by (||m_j||_1 + 1e-6)."""
    if d < 1 or k < 1:
        raise ValueError("d and k must be >= 1")
    m = rng.uniform(-1.0, 1.0, size=(d, k))
    m = m / (np.abs(m).sum(axis=0, keepdims=True) + 1e-6)
    return Dictionary(m, lr=lr, norm_cap=norm_cap)


def project_norms(atoms, cap):
    """Scale every atom with ||m_j||_2 > cap back onto the cap sphere."""
    atoms = np.asarray(atoms, dtype=DTYPE)
    norms = np.linalg.norm(atoms, axis=0)
    over = norms > cap
    if not np.any(over):
        return atoms.copy()
    out = atoms.copy()
    out[:, over] *= cap / norms[over]
    return out


def decayed_lr(dictionary):
    return dictionary.lr / (1.0 + dictionary.step_count + 1) ** STEP_DECAY


def dl_loss(x, atoms, alpha):
    r = x - atoms @ alpha
    return float(np.einsum("ij,ij->", r, r))


def dl_gradient(x, atoms, alpha):
    """Gradient of ||X - M alpha||_F^2 with respect to M."""
    return -2.0 * (x - atoms @ alpha) @ alpha.T


def dl_step(dictionary, x, codes):
    """One descent step on ||X - M alpha||_F^2 with X and alpha held fixed.

    Returns ``(new_dictionary, loss)`` where ``loss`` is the pre-step value.
    """
    x = as_matrix(x, "x")
    alpha = codes.alpha if hasattr(codes, "alpha") else as_matrix(codes, "alpha")
    m = dictionary.atoms
    if x.shape[0] != m.shape[0] or alpha.shape[0] != m.shape[1] or alpha.shape[1] != x.shape[1]:
        raise ValueError(
            f"dimension mismatch: X {x.shape}, M {m.shape}, alpha {alpha.shape}"
        )
    r = x - m @ alpha
    loss = float(np.einsum("ij,ij->", r, r))
    new = m + decayed_lr(dictionary) * 2.0 * (r @ alpha.T)
    if dictionary.norm_cap is not None:
        new = project_norms(new, dictionary.norm_cap)
    if not np.all(np.isfinite(new)):
        raise FloatingPointError("dictionary update diverged (non-finite atoms)")
    return replace(dictionary, atoms=new, step_count=dictionary.step_count + 1), loss


def ema_step(dictionary, x, codes, decay):
    """Move each used atom toward the mean of the columns whose argmax code is that atom."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    x = as_matrix(x, "x")
    alpha = codes.alpha if hasattr(codes, "alpha") else as_matrix(codes, "alpha")
    m = dictionary.atoms
    k = m.shape[1]
    owner = np.argmax(alpha, axis=0)
    counts = np.bincount(owner, minlength=k)
    sums = np.zeros_like(m)
    np.add.at(sums.T, owner, x.T)
    used = counts > 0
    new = m.copy()
    means = sums[:, used] / counts[used]
    new[:, used] = decay * m[:, used] + (1.0 - decay) * means
    if dictionary.norm_cap is not None:
        new = project_norms(new, dictionary.norm_cap)
    return replace(dictionary, atoms=new, step_count=dictionary.step_count + 1)
