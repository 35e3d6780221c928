"""Reference computations that share no code path with the package's solvers.

* ``iterated_integral``: alpha-fold composite Simpson integration of a Haar
  wavelet, piecewise between breakpoints so every panel sees a polynomial.
* ``dense_block_matrix``: the (v, u_e) block operator assembled densely from
  pointwise wavelet evaluations and ``numpy.kron``.
* ``fd_bidomain_1d``: cell-centred finite differences with the same time
  splitting, used as an independent check of the 1D solver.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_simpson

from haar_bidomain.haar_basis import HaarBasis, eval_haar, eval_integral, wavelet_index


def iterated_integral(alpha: int, i: int, x: float, basis: HaarBasis, panels: int = 10_000) -> float:
    """``alpha``-fold integral of ``h_i`` from ``A`` to ``x`` by composite Simpson."""
    A = basis.A
    if x <= A:
        return 0.0
    idx = wavelet_index(i, basis)
    cuts = sorted({A, x, *[b for b in (idx.beta1, idx.beta2, idx.beta3) if A < b < x]})
    per_segment = max(2, 2 * (panels // (2 * (len(cuts) - 1)) + 1))
    carry = np.zeros(alpha)  # values of I_1..I_alpha at the segment start
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        t = np.linspace(lo, hi, per_segment + 1)
        mid = 0.5 * (lo + hi)
        g = np.full_like(t, float(eval_haar(i, mid, basis)))
        for level in range(alpha):
            g = carry[level] + cumulative_simpson(g, x=t, initial=0.0)
            carry[level] = g[-1]
    return float(carry[alpha - 1])


def axis_matrices(basis: HaarBasis):
    """Points-by-coefficients value, first and second derivative matrices of
    the Neumann-compatible basis: column 0 is the constant function, column
    ``i - 1`` (``i >= 2``) is the second integral of ``h_i``."""
    n = basis.n_wavelets
    y = basis.A + (np.arange(n) + 0.5) * basis.dx
    V = np.ones((n, n))
    G = np.zeros((n, n))
    S = np.zeros((n, n))
    for i in range(2, n + 1):
        for k, yk in enumerate(y):
            V[k, i - 1] = eval_integral(2, i, yk, basis)
            G[k, i - 1] = eval_integral(1, i, yk, basis)
            S[k, i - 1] = eval_haar(i, yk, basis)
    return y, V, G, S


def _kron_all(mats):
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def dense_block_matrix(bases, sig, dsig, C_m: float, dt: float) -> np.ndarray:
    """Dense ``[[C_m val, div_e], [dt div_i, div_i+e | slack]]``.

    ``sig[which][a]`` / ``dsig[which][a]`` hold pointwise conductivity values
    and their axis derivatives (first axis slowest); ``which`` is ``"intra"``
    or ``"extra"``.
    """
    sig = dict(sig, sum=[i + e for i, e in zip(sig["intra"], sig["extra"])])
    dsig = dict(dsig, sum=[i + e for i, e in zip(dsig["intra"], dsig["extra"])])
    ax = [axis_matrices(b) for b in bases]
    dim = len(bases)
    Vs = [a[1] for a in ax]
    val = _kron_all(Vs)

    def deriv(a, which):
        mats = list(Vs)
        mats[a] = ax[a][2 if which == 1 else 3]
        return _kron_all(mats)

    def div(which):
        out = np.zeros_like(val)
        for a in range(dim):
            s = sig[which][a]
            ds = dsig[which][a]
            out += np.diag(s) @ deriv(a, 2) + np.diag(ds) @ deriv(a, 1)
        return out

    div_sum = div("sum")
    div_sum[:, 0] += 1.0  # multiplier column for the Neumann compatibility condition
    return np.block([[C_m * val, div("extra")], [dt * div("intra"), div_sum]])


def _laplacian(n: int, h: float) -> np.ndarray:
    L = np.zeros((n, n))
    for k in range(n):
        if k > 0:
            L[k, k - 1] += 1
            L[k, k] -= 1
        if k < n - 1:
            L[k, k + 1] += 1
            L[k, k] -= 1
    return L / h**2


def fd_bidomain_1d(v0, n: int, dt: float, T: float, D_i: float, D_e: float,
                   a: float = 0.1, k_w: float = 1.0, c1: float = 1.0, c2: float = 2.0,
                   C_m: float = 1.0, w0: float = 0.2):
    """Cell-centred FD on [0,1] with homogeneous Neumann data, zero stimulus.

    Per step: explicit Euler for ``w``, then the linear (v, u_e) system with
    the cubic evaluated at ``(v_old, w_new)``.  ``u_e`` is normalized to zero
    mean.  Returns ``(x, v, u_e, w)`` at ``T``.
    """
    x = (np.arange(n) + 0.5) / n
    L = _laplacian(n, 1.0 / n)
    I = np.eye(n)
    K = np.block([
        [C_m * I / dt, D_e * L, np.zeros((n, 1))],
        [D_i * L, (D_i + D_e) * L, np.ones((n, 1))],
        [np.zeros((1, n)), np.ones((1, n)), np.zeros((1, 1))],
    ])
    v = np.asarray(v0(x), dtype=float)
    w = np.full(n, float(w0))
    u = np.zeros(n)
    for _ in range(int(round(T / dt))):
        w = w + dt * (c1 * v - c2 * w)
        f = v * (v - a) * (1 - v) - k_w * w
        rhs = np.concatenate([C_m * v / dt - f, np.zeros(n), [0.0]])
        sol = np.linalg.solve(K, rhs)
        v, u = sol[:n], sol[n:2 * n]
    return x, v, u - u.mean(), w
