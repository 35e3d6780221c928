"""Restarted GMRES over a small linear-operator abstraction, and matrix-free
Kronecker-product application.

Operators act on flat 1-D vectors.  Kronecker factors follow the row-major
convention of :func:`numpy.kron`: ``kron(A, B) @ x == kron_apply([A, B], x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DomainError


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-10
    restart: int = 50
    max_iters: int = 500

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if self.restart < 1:
            raise DomainError(f"restart must be >= 1, got {self.restart}")
        if self.max_iters < 1:
            raise DomainError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    final_relative_residual: float
    converged: bool


class LinearOperator:
    """A square linear map given by its action on vectors of length ``dim``."""

    def __init__(self, dim: int, matvec: Callable[[np.ndarray], np.ndarray]):
        self.dim = int(dim)
        self._matvec = matvec

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DomainError(f"operator of dim {self.dim} applied to shape {x.shape}")
        return self._matvec(x)

    __call__ = apply

    def __matmul__(self, x):
        return self.apply(x)

    def to_dense(self) -> np.ndarray:
        """Materialize column by column; meant for tests and small systems."""
        out = np.empty((self.dim, self.dim))
        e = np.zeros(self.dim)
        for j in range(self.dim):
            e[j] = 1.0
            out[:, j] = self.apply(e)
            e[j] = 0.0
        return out


def dense_operator(matrix) -> LinearOperator:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"dense operator needs a square matrix, got {a.shape}")
    return LinearOperator(a.shape[0], lambda x: a @ x)


def identity_operator(n: int) -> LinearOperator:
    return LinearOperator(n, lambda x: x.copy())


def kron_apply(factors: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """``(F_1 kron F_2 kron ...) @ x`` by axis-wise contraction.

    Factors may be rectangular; ``len(x)`` must equal the product of their
    column counts.
    """
    factors = [np.asarray(f, dtype=float) for f in factors]
    x = np.asarray(x, dtype=float)
    shape_in = tuple(f.shape[1] for f in factors)
    if x.ndim != 1 or x.size != math.prod(shape_in):
        raise DomainError(f"vector of size {x.size} does not match factor shapes {shape_in}")
    return contract(factors, x)


def contract(factors: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    """Unchecked core of :func:`kron_apply` for float arrays of matching sizes."""
    if len(factors) == 1:
        return factors[0] @ x
    # contract the leading axis, then rotate it to the back; after one pass
    # over all factors the axis order is restored
    t = x
    for f in factors:
        t = (f @ t.reshape(f.shape[1], -1)).T
    return t.reshape(-1)


def kron_operator(factors: Sequence[np.ndarray]) -> LinearOperator:
    factors = [np.asarray(f, dtype=float) for f in factors]
    for f in factors:
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise DomainError("kron_operator needs square factors")
    dim = math.prod(f.shape[0] for f in factors)
    return LinearOperator(dim, lambda x: kron_apply(factors, x))


def block_operator(blocks: Sequence[Sequence[LinearOperator | None]]) -> LinearOperator:
    """Square block operator; ``None`` entries are zero blocks."""
    nb = len(blocks)
    sizes = []
    for r in range(nb):
        row = blocks[r]
        if len(row) != nb:
            raise DomainError("block operator must be square")
        dims = {b.dim for b in row if b is not None}
        if len(dims) != 1:
            raise DomainError(f"inconsistent block sizes in row {r}")
        sizes.append(dims.pop())
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def matvec(x):
        out = np.zeros(offsets[-1])
        for r in range(nb):
            acc = out[offsets[r]:offsets[r + 1]]
            for c in range(nb):
                b = blocks[r][c]
                if b is not None:
                    acc += b.apply(x[offsets[c]:offsets[c + 1]])
        return out

    return LinearOperator(int(offsets[-1]), matvec)


def _as_callable(p):
    if p is None:
        return lambda v: v
    if isinstance(p, LinearOperator):
        return p.apply
    return p


def gmres_solve(
    op: LinearOperator,
    b: np.ndarray,
    x0: np.ndarray | None = None,
    cfg: GmresConfig | None = None,
    precond: LinearOperator | Callable | None = None,
) -> tuple[np.ndarray, SolveStats]:
    """Restarted GMRES(m) with modified Gram-Schmidt Arnoldi and Givens rotations.

    ``precond`` is applied on the right (``A M u = b``, ``x = M u``), so the
    monitored residual is the true residual ``b - A x``.  Convergence means
    ``|b - A x| / max(|b|, 1) <= cfg.tol``.
    """
    cfg = cfg or GmresConfig()
    b = np.asarray(b, dtype=float)
    n = op.dim
    if b.shape != (n,):
        raise DomainError(f"rhs of shape {b.shape} for operator of dim {n}")
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True)
    scale = max(bnorm, 1.0)
    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.array(x0, dtype=float)
        if x.shape != (n,):
            raise DomainError(f"x0 of shape {x.shape} for operator of dim {n}")
    M = _as_callable(precond)

    r = b - op.apply(x)
    beta = float(np.linalg.norm(r))
    if beta / scale <= cfg.tol:
        return x, SolveStats(0, beta / scale, True)

    m = cfg.restart
    total = 0
    while total < cfg.max_iters:
        V = np.zeros((m + 1, n))
        R = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        breakdown = False
        for j in range(m):
            if total >= cfg.max_iters:
                break
            w = op.apply(M(V[j]))
            total += 1
            w_norm0 = float(np.linalg.norm(w))
            for i in range(j + 1):
                R[i, j] = V[i] @ w
                w -= R[i, j] * V[i]
            h_next = float(np.linalg.norm(w))
            for i in range(j):
                t = cs[i] * R[i, j] + sn[i] * R[i + 1, j]
                R[i + 1, j] = -sn[i] * R[i, j] + cs[i] * R[i + 1, j]
                R[i, j] = t
            rho = math.hypot(R[j, j], h_next)
            if rho == 0.0:
                breakdown = True
                break
            cs[j], sn[j] = R[j, j] / rho, h_next / rho
            R[j, j] = rho
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if h_next <= 1e-14 * max(w_norm0, 1e-300):
                breakdown = True
                break
            V[j + 1] = w / h_next
            if abs(g[j + 1]) / scale <= cfg.tol:
                break
        if k > 0:
            y = solve_triangular(R[:k, :k], g[:k])
            x = x + M(V[:k].T @ y)
        r = b - op.apply(x)
        beta = float(np.linalg.norm(r))
        rel = beta / scale
        if rel <= cfg.tol:
            return x, SolveStats(total, rel, True)
        if breakdown or k == 0:
            return x, SolveStats(total, rel, False)
    return x, SolveStats(total, beta / scale, False)
