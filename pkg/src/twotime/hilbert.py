"""Linear algebra on truncated Hilbert spaces.

State vectors are plain one-dimensional complex numpy arrays; :class:`Operator`
wraps either a dense array or a CSR matrix.  Operators with ``dim < DENSE_BELOW``
are stored dense, larger ones sparse.

Tensor products use the row-major (mode-1-major) index convention
``i = i_A * dim_B + i_B``, identical to :func:`numpy.kron`.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import ResourceError, StructuralError

DENSE_BELOW = 64
MAX_DIM = 1 << 16


def as_state(amplitudes) -> np.ndarray:
    """Validate and copy ``amplitudes`` into a complex state vector."""
    v = np.array(amplitudes, dtype=complex).reshape(-1)
    if v.size == 0:
        raise StructuralError("state vector must have at least one entry")
    if not np.all(np.isfinite(v)):
        raise StructuralError("state vector contains NaN or Inf")
    return v


def basis(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def norm_sq(v: np.ndarray) -> float:
    return float(np.vdot(v, v).real)


def inner(u: np.ndarray, v: np.ndarray) -> complex:
    """<u|v>, conjugate-linear in ``u``."""
    if u.shape != v.shape:
        raise StructuralError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return complex(np.vdot(u, v))


class Operator:
    """Complex linear map on a ``dim``-dimensional space.

    Instances are treated as immutable; arithmetic returns new operators.
    """

    def __init__(self, matrix, *, sparse: bool | None = None):
        if sp.issparse(matrix):
            shape = matrix.shape
        else:
            matrix = np.asarray(matrix, dtype=complex)
            shape = matrix.shape
        if len(shape) != 2 or shape[0] != shape[1] or shape[0] < 1:
            raise StructuralError(f"operator must be a non-empty square matrix, got {shape}")
        dim = shape[0]
        if sparse is None:
            sparse = dim >= DENSE_BELOW
        if sparse:
            m = sp.csr_matrix(matrix, dtype=complex)
            m.sum_duplicates()
            m.eliminate_zeros()
        else:
            m = matrix.toarray() if sp.issparse(matrix) else np.array(matrix, dtype=complex)
            m.setflags(write=False)
        self.matrix = m
        self.dim = dim
        self.is_sparse = bool(sparse)

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"Operator(dim={self.dim}, {kind})"

    def dense(self) -> np.ndarray:
        if self.is_sparse:
            return self.matrix.toarray()
        return np.array(self.matrix)

    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, sparse=self.is_sparse)

    def _check(self, n):
        if n != self.dim:
            raise StructuralError(f"dimension mismatch: operator {self.dim}, operand {n}")

    def apply(self, v: np.ndarray) -> np.ndarray:
        self._check(v.shape[-1])
        return np.asarray(self.matrix @ v)

    def adjoint_apply(self, v: np.ndarray) -> np.ndarray:
        self._check(v.shape[-1])
        return np.asarray(self.matrix.conj().T @ v)

    def apply_rows(self, V: np.ndarray) -> np.ndarray:
        """Apply to every row of an ``(n, dim)`` array."""
        self._check(V.shape[-1])
        if self.is_sparse:
            return np.asarray((self.matrix @ V.T).T)
        return V @ self.matrix.T

    def left(self, X: np.ndarray) -> np.ndarray:
        """Operator times dense matrix, ``M @ X``."""
        self._check(X.shape[0])
        return np.asarray(self.matrix @ X)

    def right(self, X: np.ndarray) -> np.ndarray:
        """Dense matrix times operator, ``X @ M``."""
        self._check(X.shape[1])
        if self.is_sparse:
            return np.asarray((self.matrix.T @ X.T).T)
        return X @ self.matrix

    def is_diagonal(self) -> bool:
        if self.is_sparse:
            coo = self.matrix.tocoo()
            return bool(np.all(coo.row == coo.col))
        return bool(np.count_nonzero(self.matrix - np.diag(np.diag(self.matrix))) == 0)

    def diagonal(self) -> np.ndarray:
        return np.asarray(self.matrix.diagonal()).copy()

    def norm_bound(self) -> float:
        """Cheap upper bound on the spectral norm, sqrt(||M||_1 ||M||_inf)."""
        a = abs(self.matrix)
        col = float(np.max(np.asarray(a.sum(axis=0))))
        row = float(np.max(np.asarray(a.sum(axis=1))))
        return float(np.sqrt(col * row))

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.conj().T
        scale = max(float(abs(self.matrix).max()), 1.0) if self.dim else 1.0
        worst = float(abs(diff).max()) if (not self.is_sparse or diff.nnz) else 0.0
        return worst <= rtol * scale

    # arithmetic ----------------------------------------------------------

    def _wrap(self, m, other=None):
        sparse = self.is_sparse or (isinstance(other, Operator) and other.is_sparse)
        return Operator(m, sparse=sparse)

    def __add__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        self._check(other.dim)
        return self._wrap(self.matrix + other.matrix, other)

    def __sub__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        self._check(other.dim)
        return self._wrap(self.matrix - other.matrix, other)

    def __neg__(self):
        return self._wrap(-self.matrix)

    def __mul__(self, scalar):
        if isinstance(scalar, Operator):
            return NotImplemented
        return self._wrap(self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other.dim)
            return self._wrap(self.matrix @ other.matrix, other)
        return self.apply(np.asarray(other))


def apply(op: Operator, v) -> np.ndarray:
    """Validated ``op |v>``; the method form skips the finiteness check."""
    return op.apply(as_state(v))


def adjoint_apply(op: Operator, v) -> np.ndarray:
    return op.adjoint_apply(as_state(v))


def identity(dim: int) -> Operator:
    if dim < 1:
        raise StructuralError("identity needs dim >= 1")
    return Operator(sp.identity(dim, dtype=complex, format="csr"), sparse=dim >= DENSE_BELOW)


def annihilation(n_max: int) -> Operator:
    """Bosonic lowering operator on the Fock states |0>..|n_max>."""
    if n_max < 0:
        raise StructuralError("n_max must be non-negative")
    dim = n_max + 1
    m = sp.diags(np.sqrt(np.arange(1, dim, dtype=float)), offsets=1, shape=(dim, dim), dtype=complex)
    return Operator(m, sparse=dim >= DENSE_BELOW)


def projector(dim: int, i: int, j: int) -> Operator:
    """The dyad |i><j|."""
    m = np.zeros((dim, dim), dtype=complex)
    m[i, j] = 1.0
    return Operator(m, sparse=dim >= DENSE_BELOW)


def tensor(op_a: Operator, op_b: Operator, *, max_dim: int | None = None) -> Operator:
    limit = MAX_DIM if max_dim is None else max_dim
    dim = op_a.dim * op_b.dim
    if dim > limit:
        raise ResourceError(f"tensor product dimension {dim} exceeds maximum {limit}")
    m = sp.kron(sp.csr_matrix(op_a.matrix), sp.csr_matrix(op_b.matrix), format="csr")
    return Operator(m, sparse=dim >= DENSE_BELOW)


def frobenius_distance(X: np.ndarray, Y: np.ndarray) -> float:
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.shape != Y.shape:
        raise StructuralError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    return float(np.linalg.norm(X - Y))
