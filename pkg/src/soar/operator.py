"""Dense forward operators with adjoint, norm and singular system access."""

import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DecompositionError

#: Relative threshold below which singular values count as numerically zero.
SVD_TRUNCATION = 1e-14
POWER_TOL = 1e-12
POWER_MAXITER = 10_000


@dataclass(frozen=True)
class SvdSystem:
    """Truncated singular system ``A u_j = s_j v_j``, ``A^T v_j = s_j u_j``.

    ``left_vectors`` holds the ``v_j`` (data space, m x r) and
    ``right_vectors`` the ``u_j`` (solution space, n x r).
    """

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    truncated: int = 0

    @property
    def rank(self):
        return self.singular_values.size

    @property
    def eigenvalues(self):
        """Spectrum ``s_j**2`` of ``A^T A`` restricted to its range."""
        return self.singular_values**2


class DenseOperator:
    """A real m x n matrix viewed as a compact linear operator.

    The matrix is copied and made read-only; the norm and SVD are computed
    lazily, once, under a lock so instances can be shared between threads.
    """

    def __init__(self, matrix):
        a = np.array(matrix, dtype=float, copy=True)
        if a.ndim != 2:
            raise ContractError(f"operator matrix must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ContractError("operator matrix has non-finite entries")
        a.setflags(write=False)
        self._matrix = a
        self._norm = None
        self._svd = None
        self._lock = threading.Lock()

    @classmethod
    def diagonal(cls, values):
        return cls(np.diag(np.asarray(values, dtype=float)))

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def __repr__(self):
        m, n = self.shape
        return f"DenseOperator({m}x{n})"

    @property
    def matrix(self):
        return self._matrix

    @property
    def shape(self):
        return self._matrix.shape

    @property
    def cached_norm(self):
        return self._norm

    @property
    def cached_svd(self):
        return self._svd

    @property
    def is_zero(self):
        return not np.any(self._matrix)

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.shape[1],):
            raise ContractError(f"expected vector of length {self.shape[1]}, got shape {x.shape}")
        return self._matrix @ x

    def apply_adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.shape[0],):
            raise ContractError(f"expected vector of length {self.shape[0]}, got shape {y.shape}")
        return self._matrix.T @ y

    def norm(self):
        """Operator 2-norm; from the SVD if available, else power iteration."""
        if self._norm is None:
            with self._lock:
                if self._norm is None:
                    if self._svd is not None:
                        s = self._svd.singular_values
                        self._norm = float(s[0]) if s.size else 0.0
                    else:
                        self._norm = _power_norm(self._matrix)
        return self._norm

    def svd(self):
        if self._svd is None:
            with self._lock:
                if self._svd is None:
                    self._svd = _truncated_svd(self._matrix)
        return self._svd

    def save(self, path):
        save_matrix(path, self._matrix)

    @classmethod
    def load(cls, path):
        return cls(load_matrix(path))


def apply(op, x):
    return op.apply(x)


def apply_adjoint(op, y):
    return op.apply_adjoint(y)


def operator_norm(op):
    return op.norm()


def svd(op):
    return op.svd()


def _power_norm(a, tol=POWER_TOL, maxiter=POWER_MAXITER):
    if not np.any(a):
        return 0.0
    n = a.shape[1]
    # fixed start vector keeps the result reproducible
    u = np.ones(n) + 0.01 * np.cos(np.arange(n))
    u /= np.linalg.norm(u)
    lam = 0.0
    for _ in range(maxiter):
        w = a.T @ (a @ u)
        lam_new = float(u @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart from a coordinate vector
            u = np.zeros(n)
            u[int(np.argmax(np.linalg.norm(a, axis=0)))] = 1.0
            continue
        u = w / nw
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def _truncated_svd(a):
    try:
        left, s, right_t = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        keep = 0
    else:
        keep = int(np.count_nonzero(s > SVD_TRUNCATION * s[0]))
    return SvdSystem(
        singular_values=s[:keep].copy(),
        left_vectors=left[:, :keep].copy(),
        right_vectors=right_t[:keep].T.copy(),
        truncated=s.size - keep,
    )


# -- fixture serialization ----------------------------------------------------
#
# Text format: first line "m n", then m lines of n values (row-major).
# Binary format: two little-endian int64 (m, n) followed by m*n float64.

def save_matrix(path, matrix):
    path = Path(path)
    a = np.asarray(matrix, dtype=float)
    m, n = a.shape
    if path.suffix == ".bin":
        with open(path, "wb") as fh:
            np.array([m, n], dtype="<i8").tofile(fh)
            np.ascontiguousarray(a, dtype="<f8").tofile(fh)
    else:
        np.savetxt(path, a, fmt="%.17g", header=f"{m} {n}", comments="")


def load_matrix(path):
    path = Path(path)
    if path.suffix == ".bin":
        with open(path, "rb") as fh:
            m, n = (int(v) for v in np.fromfile(fh, dtype="<i8", count=2))
            data = np.fromfile(fh, dtype="<f8")
        if data.size != m * n:
            raise ContractError(f"{path}: expected {m * n} values, found {data.size}")
        return data.reshape(m, n)
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ContractError(f"{path}: header must be 'm n'")
        m, n = int(header[0]), int(header[1])
        data = np.loadtxt(fh, ndmin=2) if m * n else np.zeros((m, n))
    if data.shape != (m, n):
        raise ContractError(f"{path}: header says {m}x{n}, body is {data.shape}")
    return data
