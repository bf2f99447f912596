"""Dense linear-algebra primitives.

Vectorization convention
------------------------
Every ``vec`` in this package is column-major (Fortran order): the columns of
a matrix are stacked on top of each other, so ``vec(A)[i + j * m] == A[i, j]``
for an ``m x n`` matrix ``A``. :func:`vec` and :func:`unvec` are the only
places that encode it.
"""
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericalDomainError",
    "SvdFactors",
    "SubspaceSplit",
    "full_svd",
    "sym_inv_sqrt",
    "svd_soft_threshold",
    "nuclear_norm",
    "vec",
    "unvec",
    "rotate_and_vectorize",
    "rotate_parameter",
    "unrotate_vector",
]

_EIG_FLOOR = 1e-12


class NumericalDomainError(ArithmeticError):
    """A matrix left the domain an operation is defined on.

    Attributes
    ----------
    eigenvalue : float
        The offending (smallest) eigenvalue.
    """

    def __init__(self, message, eigenvalue):
        super().__init__(message)
        self.eigenvalue = float(eigenvalue)


def _as_finite_matrix(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD ``A = U @ diag(singular_values) @ V.T`` (``U``, ``V`` square)."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        d1, d2 = self.U.shape[0], self.V.shape[0]
        S = np.zeros((d1, d2))
        m = len(self.singular_values)
        S[:m, :m] = np.diag(self.singular_values)
        return self.U @ S @ self.V.T


def _fix_signs(M):
    # largest-magnitude entry of each column made non-negative; argmax picks
    # the lowest row index on ties
    idx = np.argmax(np.abs(M), axis=0)
    signs = np.sign(M[idx, np.arange(M.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def full_svd(A):
    """Full SVD with a deterministic sign convention.

    Each left singular vector is flipped so its largest-magnitude entry is
    non-negative; the paired right singular vector is flipped with it.
    Unpaired columns of ``V`` (when ``d2 > d1``) follow the same rule on
    their own.

    Parameters
    ----------
    A : (d1, d2) array_like

    Returns
    -------
    SvdFactors
    """
    A = _as_finite_matrix(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    V = Vt.T
    m = len(s)
    su = _fix_signs(U)
    U = U * su
    V[:, :m] = V[:, :m] * su[:m]
    if V.shape[1] > m:
        V[:, m:] = V[:, m:] * _fix_signs(V[:, m:])
    return SvdFactors(U=U, singular_values=s, V=V)


def sym_inv_sqrt(M, sym_tol=1e-10):
    """Inverse square root of a symmetric positive-definite matrix.

    Computed from the symmetric eigendecomposition, with eigenvalues clamped
    at ``1e-12`` before inversion.

    Raises
    ------
    ValueError
        If ``M`` is not square or not symmetric within ``sym_tol``.
    NumericalDomainError
        If the smallest eigenvalue is not positive.
    """
    M = _as_finite_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"M must be square, got shape {M.shape}")
    if np.max(np.abs(M - M.T), initial=0.0) > sym_tol:
        raise ValueError("M is not symmetric")
    w, Q = np.linalg.eigh(M)
    if w[0] <= 0:
        raise NumericalDomainError(
            f"matrix is not positive definite (smallest eigenvalue {w[0]:.3g})", w[0]
        )
    w = np.maximum(w, _EIG_FLOOR)
    R = (Q / np.sqrt(w)) @ Q.T
    return (R + R.T) / 2


def nuclear_norm(A):
    return float(np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False).sum())


def svd_soft_threshold(theta, k):
    """Proximal operator of ``k * ||.||_nuc``.

    Returns ``U diag(max(s - k, 0)) V^T``, the minimizer of
    ``0.5 * ||Z - theta||_F^2 + k * ||Z||_nuc``.
    """
    if k < 0:
        raise ValueError(f"threshold must be non-negative, got {k}")
    theta = _as_finite_matrix(theta, "theta")
    U, s, Vt = np.linalg.svd(theta, full_matrices=False)
    s = np.maximum(s - k, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def vec(A):
    """Column-major vectorization; batched over leading axes."""
    A = np.asarray(A)
    return np.swapaxes(A, -1, -2).reshape(*A.shape[:-2], -1)


def unvec(v, shape):
    """Inverse of :func:`vec` for a single matrix of the given shape."""
    m, n = shape
    return np.asarray(v).reshape(n, m).T


@dataclass(frozen=True)
class SubspaceSplit:
    """Estimated row/column subspaces and their complements.

    ``col_basis`` and ``col_complement`` together form a ``d1 x d1``
    orthogonal matrix; likewise on the row side.
    """

    col_basis: np.ndarray
    col_complement: np.ndarray
    row_basis: np.ndarray
    row_complement: np.ndarray

    @classmethod
    def from_svd(cls, svd, rank):
        d1, d2 = svd.U.shape[0], svd.V.shape[0]
        if not 1 <= rank <= min(d1, d2):
            raise ValueError(f"rank must lie in [1, {min(d1, d2)}], got {rank}")
        return cls(
            col_basis=svd.U[:, :rank],
            col_complement=svd.U[:, rank:],
            row_basis=svd.V[:, :rank],
            row_complement=svd.V[:, rank:],
        )

    @classmethod
    def identity(cls, d1, d2, rank):
        U, V = np.eye(d1), np.eye(d2)
        return cls(U[:, :rank], U[:, rank:], V[:, :rank], V[:, rank:])

    @property
    def effective_rank(self):
        return self.col_basis.shape[1]

    @property
    def shape(self):
        return self.col_basis.shape[0], self.row_basis.shape[0]

    @property
    def total_dim(self):
        d1, d2 = self.shape
        return d1 * d2

    @property
    def effective_dim(self):
        d1, d2 = self.shape
        r = self.effective_rank
        return d1 * d2 - (d1 - r) * (d2 - r)

    @property
    def left(self):
        return np.hstack([self.col_basis, self.col_complement])

    @property
    def right(self):
        return np.hstack([self.row_basis, self.row_complement])

    @property
    def block_sizes(self):
        d1, d2 = self.shape
        r = self.effective_rank
        return (r * r, r * (d2 - r), (d1 - r) * r, (d1 - r) * (d2 - r))


def rotate_and_vectorize(X, split):
    """Rotate arm matrices into the estimated subspaces and flatten them.

    For ``X' = [U, U_perp]^T X [V, V_perp]`` the output is the concatenation
    ``[vec(X'_11), vec(X'_12), vec(X'_21), vec(X'_22)]`` where ``X'_11`` is the
    leading ``r x r`` block and ``X'_22`` the complement block. The first
    ``split.effective_dim`` entries are the active coordinates.

    Parameters
    ----------
    X : (d1, d2) or (n, d1, d2) array_like
    split : SubspaceSplit

    Returns
    -------
    (p,) or (n, p) ndarray
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != split.shape:
        raise ValueError(f"arm shape {X.shape[-2:]} does not match split {split.shape}")
    r = split.effective_rank
    Xr = split.left.T @ X @ split.right
    blocks = (
        Xr[..., :r, :r],
        Xr[..., :r, r:],
        Xr[..., r:, :r],
        Xr[..., r:, r:],
    )
    return np.concatenate([vec(b) for b in blocks], axis=-1)


def rotate_parameter(theta, split):
    """Rearranged rotation of a parameter matrix; same map as the arms.

    Because the map is orthogonal, ``<X, theta>`` equals the dot product of
    the two rotated vectors.
    """
    return rotate_and_vectorize(theta, split)


def unrotate_vector(x, split):
    """Map a rotated p-vector back to its ``d1 x d2`` matrix form."""
    x = np.asarray(x, dtype=float)
    d1, d2 = split.shape
    r = split.effective_rank
    sizes = split.block_sizes
    if x.shape != (sum(sizes),):
        raise ValueError(f"expected a vector of length {sum(sizes)}, got {x.shape}")
    parts = np.split(x, np.cumsum(sizes)[:-1])
    Xr = np.empty((d1, d2))
    Xr[:r, :r] = unvec(parts[0], (r, r))
    Xr[:r, r:] = unvec(parts[1], (r, d2 - r))
    Xr[r:, :r] = unvec(parts[2], (d1 - r, r))
    Xr[r:, r:] = unvec(parts[3], (d1 - r, d2 - r))
    return split.left @ Xr @ split.right.T
