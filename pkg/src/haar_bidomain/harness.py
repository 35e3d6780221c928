"""Verification tools: reference runs, error tables, error norms, resolution
sweeps, temporal-order fits and the 2D coefficient-decay check.

Comparisons between two runs always evaluate both solutions, through their own
Haar representations, at the collocation points of the reference run.  No
interpolation of sampled data is involved, comparing a run with itself gives
exactly zero, and swapping the two runs gives identical absolute errors.
``u_e`` is only defined up to a constant, so each ``u_e`` is shifted to zero
mean over the comparison points before differencing.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bidomain_model import (
    BidomainProblem,
    ConductivityField,
    ConstantField,
    IonicModel,
    unit_domain,
)
from .errors import DomainError
from .haar_basis import HaarBasis, collocation_grid, integral_table
from .stepper import SteppingConfig, Trajectory, evaluate_on_grid, run

DEFAULT_PROBES_1D = (0.0234, 0.1172, 0.2266, 0.3828, 0.5391, 0.7734, 0.9297)


@dataclass(frozen=True)
class ErrorReport:
    """Absolute errors at ``T``; columns of ``abs_errors`` follow ``dts``."""

    probe_points: np.ndarray
    mapped_points: np.ndarray
    dts: tuple[float, ...]
    abs_errors: np.ndarray
    abs_errors_ue: np.ndarray
    linf_v: np.ndarray
    linf_ue: np.ndarray
    x_norm: np.ndarray


@dataclass(frozen=True)
class ConvergenceReport:
    parameter: str
    values: tuple
    errors: np.ndarray
    fitted_order: float
    ratios: np.ndarray
    monotone: bool
    good_enough: object = None
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------- norms


def l2_norm(values: np.ndarray, weight: float) -> float:
    """Collocation-quadrature L2 norm with a uniform cell weight."""
    return math.sqrt(float(np.sum(np.square(values))) * weight)


def combine_norms(norm_v: float, norm_ue: float, norms_w: Sequence[float]) -> float:
    return math.sqrt(norm_v**2 + norm_ue**2 + sum(n**2 for n in norms_w))


def x_norm(v: np.ndarray, ue: np.ndarray, w: np.ndarray, weight: float) -> float:
    """``(|v|^2 + |u_e|^2 + sum_k |w_k|^2)^(1/2)`` by collocation quadrature."""
    w = np.atleast_2d(w)
    return combine_norms(l2_norm(v, weight), l2_norm(ue, weight), [l2_norm(c, weight) for c in w])


# --------------------------------------------------------------------------- comparisons


def _grid_axes(traj: Trajectory) -> list[np.ndarray]:
    return [ax.y for ax in traj.context.disc.axes]


def _cell_weight(traj: Trajectory) -> float:
    return math.prod(ax.basis.dx for ax in traj.context.disc.axes)


def _check_same_time(a: Trajectory, b: Trajectory):
    ta, tb = a.final.t, b.final.t
    if abs(ta - tb) > 1e-12 * max(1.0, abs(tb)):
        raise DomainError(f"runs end at different times ({ta} vs {tb})")
    if a.context.problem.domain != b.context.problem.domain:
        raise DomainError("runs are on different domains")


def field_differences(run_: Trajectory, reference: Trajectory) -> dict:
    """Differences of the final states at the reference collocation points."""
    _check_same_time(run_, reference)
    axes = _grid_axes(reference)
    ea = evaluate_on_grid(run_.final, run_.context, axes)
    eb = evaluate_on_grid(reference.final, reference.context, axes)
    return {
        "points": eb["points"],
        "v": ea["v"] - eb["v"],
        "ue": (ea["ue"] - np.mean(ea["ue"])) - (eb["ue"] - np.mean(eb["ue"])),
        "w": ea["w"] - eb["w"],
        "weight": _cell_weight(reference),
    }


def reference_run(problem: BidomainProblem, J_ref, dt_ref: float,
                  compared_dts: Sequence[float] = (), **cfg) -> Trajectory:
    """High-resolution run used as the comparison target."""
    for dt in compared_dts:
        if not dt_ref < dt:
            raise DomainError(f"reference dt {dt_ref} must be smaller than compared dt {dt}")
    return run(problem, J_ref, SteppingConfig(dt=dt_ref, **cfg))


def _nearest_points(reference: Trajectory, probes) -> np.ndarray:
    axes = _grid_axes(reference)
    dim = len(axes)
    P = np.asarray(probes, dtype=float)
    if P.ndim == 1:
        P = P[:, None] if dim == 1 else P[None, :]
    if P.shape[1] != dim:
        raise DomainError(f"probe points must have dimension {dim}")
    idx = np.stack([np.argmin(np.abs(axes[a][None, :] - P[:, a, None]), axis=1)
                    for a in range(dim)], axis=1)
    flat = np.ravel_multi_index(tuple(idx.T), tuple(len(a) for a in axes))
    return P, flat


def error_table(runs: Sequence[Trajectory], reference: Trajectory,
                probe_points=DEFAULT_PROBES_1D, dts: Sequence[float] | None = None) -> ErrorReport:
    """Pointwise absolute errors at ``T`` (probe rows, one column per run).

    Probes are mapped to the nearest reference collocation point; the mapped
    coordinates are kept in the report.
    """
    if dts is None:
        dts = [r.context.cfg.dt for r in runs]
    if len(dts) != len(runs):
        raise DomainError("need one dt label per run")
    P, flat = _nearest_points(reference, probe_points)
    nP, nr = len(P), len(runs)
    ev, eue = np.empty((nP, nr)), np.empty((nP, nr))
    lv, lue, xn = np.empty(nr), np.empty(nr), np.empty(nr)
    mapped = None
    for k, r in enumerate(runs):
        d = field_differences(r, reference)
        mapped = d["points"][flat]
        ev[:, k] = np.abs(d["v"][flat])
        eue[:, k] = np.abs(d["ue"][flat])
        lv[k] = np.max(np.abs(d["v"]))
        lue[k] = np.max(np.abs(d["ue"]))
        xn[k] = x_norm(d["v"], d["ue"], d["w"], d["weight"])
    if mapped is None:
        mapped = _grid_points(reference)[flat]
    return ErrorReport(P, mapped, tuple(float(t) for t in dts), ev, eue, lv, lue, xn)


def _grid_points(traj: Trajectory) -> np.ndarray:
    return traj.context.disc.points


# --------------------------------------------------------------------------- fitting


def fit_order(h: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)`` over the
    positive errors; 0 when fewer than two are positive."""
    h, e = np.asarray(h, float), np.asarray(errors, float)
    keep = e > 0
    if np.count_nonzero(keep) < 2:
        return 0.0
    slope = np.polyfit(np.log(h[keep]), np.log(e[keep]), 1)[0]
    return float(slope)


def successive_ratios(errors: Sequence[float]) -> np.ndarray:
    e = np.asarray(errors, float)
    out = []
    for a, b in zip(e[:-1], e[1:]):
        if b > 0:
            out.append(a / b)
        else:
            out.append(1.0 if a == 0 else math.inf)
    return np.array(out)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------- sweeps


def grid_validation(problem: BidomainProblem, Js: Sequence[int], dt: float,
                    jobs: int = 1, **cfg) -> ConvergenceReport:
    """X-norm errors at ``T`` of every level against the largest one.

    ``good_enough`` is the smallest level whose error is within twice the
    error of the finest non-reference level.
    """
    Js = tuple(int(j) for j in Js)
    if len(Js) < 3:
        raise DomainError("grid validation needs at least three levels")
    if any(b <= a for a, b in zip(Js[:-1], Js[1:])):
        raise DomainError("levels must be strictly increasing")
    trajs = _map(lambda J: run(problem, J, SteppingConfig(dt=dt, **cfg)), Js, jobs)
    ref = trajs[-1]
    errs, linf = [], []
    for t in trajs:
        d = field_differences(t, ref)
        errs.append(x_norm(d["v"], d["ue"], d["w"], d["weight"]))
        linf.append(float(np.max(np.abs(d["v"]))))
    errs = np.array(errs)
    compared = errs[:-1]
    fin = ref.final
    scale = x_norm(fin.v, fin.ue, fin.w, _cell_weight(ref))
    # differences at roundoff level carry no ordering information
    meaningful = compared > 1e-12 * max(scale, 1.0)
    monotone = bool(np.all(np.diff(compared) < 0)) if np.any(meaningful) else True
    floor = compared[-1]
    good = next(J for J, e in zip(Js[:-1], compared) if e <= 2 * floor)
    h = [2.0 ** -J for J in Js[:-1]]
    return ConvergenceReport(
        "J", Js, errs, fit_order(h, compared), successive_ratios(compared), monotone, good,
        extra={"linf_v": np.array(linf), "gmres": [t.gmres_summary() for t in trajs]},
    )


def _max_error(traj: Trajectory, ref: Trajectory | None, quantity: str, exact) -> float:
    if exact is not None:
        pts = traj.context.points
        target = exact(pts, traj.final.t)
        have = {"v": traj.final.v, "ue": traj.final.ue, "w": traj.final.w}[quantity]
        return float(np.max(np.abs(have - target)))
    d = field_differences(traj, ref)
    if quantity == "x":
        return x_norm(d["v"], d["ue"], d["w"], d["weight"])
    return float(np.max(np.abs(d[quantity])))


def temporal_order(problem: BidomainProblem, J, dts: Sequence[float],
                   dt_ref: float | None = None, quantity: str = "v",
                   exact: Callable | None = None, jobs: int = 1,
                   **cfg) -> ConvergenceReport:
    """Errors at ``T`` for each ``dt`` and the least-squares order in ``dt``.

    The comparison target is ``exact(points, t)`` when given, else a run at
    ``dt_ref`` (default: the smallest ``dt`` divided by 10).  Non-monotone
    error sequences are flagged, not raised.
    """
    if len(dts) < 3:
        raise DomainError("temporal order needs at least three time steps")
    if quantity not in ("v", "ue", "w", "x"):
        raise DomainError(f"unknown quantity {quantity!r}")
    dts = tuple(sorted((float(d) for d in dts), reverse=True))
    ref = None
    if exact is None:
        dt_ref = dts[-1] / 10 if dt_ref is None else dt_ref
        ref = reference_run(problem, J, dt_ref, dts, **cfg)
    trajs = _map(lambda dt: run(problem, J, SteppingConfig(dt=dt, **cfg)), dts, jobs)
    errs = np.array([_max_error(t, ref, quantity, exact) for t in trajs])
    ratios = successive_ratios(errs)
    gm = [t.gmres_summary() for t in trajs] + ([ref.gmres_summary()] if ref else [])
    return ConvergenceReport(
        "dt", dts, errs, fit_order(dts, errs), ratios, bool(np.all(np.diff(errs) < 0)),
        extra={"dt_ref": dt_ref, "gmres": gm, "trajectories": trajs, "reference": ref},
    )


# --------------------------------------------------------------------------- gating-only


def gating_only_problem(v_star: float = 0.2, w0: float = 0.2, T: float = 0.5,
                        dim: int = 1) -> BidomainProblem:
    """``v`` frozen at ``v_star``: the cubic's middle root is put at ``v_star``
    and the ``w`` coupling removed, so only the gating ODE evolves."""
    dom = unit_domain(dim)
    return BidomainProblem(
        dom, ConductivityField.isotropic(1.2e-3, 1.2e-3, dom),
        ionic=IonicModel(a=v_star, k_w=0.0, c1=1.0, c2=2.0),
        v0=ConstantField(v_star), w0=(ConstantField(w0),), T=T,
    )


def gating_exact(v_star: float = 0.2, w0: float = 0.2, c1: float = 1.0, c2: float = 2.0):
    """Closed form of ``w' = c1 v* - c2 w`` as ``exact(points, t)``."""
    eq = c1 * v_star / c2

    def exact(points, t):
        return np.full((1, len(points)), eq + (w0 - eq) * math.exp(-c2 * t))

    return exact


# --------------------------------------------------------------------------- coefficient decay


def _gauss_cell_integrals(f, n: int, sub: int = 4, order: int = 6, chunk: int = 64) -> np.ndarray:
    """Integrals of ``f`` over the ``n x n`` uniform cells of [0,1]^2."""
    g, wg = np.polynomial.legendre.leggauss(order)
    h = 1.0 / (n * sub)
    loc = (np.arange(sub)[:, None] + 0.5 * (g[None, :] + 1)).ravel() * h
    wloc = np.tile(wg * h / 2, sub)
    out = np.empty((n, n))
    for r0 in range(0, n, chunk):
        rows = np.arange(r0, min(n, r0 + chunk))
        X = (rows[:, None] / n + loc[None, :])
        Y = (np.arange(n)[:, None] / n + loc[None, :])
        F = f(X[:, :, None, None], Y[None, None, :, :])
        out[rows] = np.einsum("rpcq,p,q->rc", F, wloc, wloc)
    return out


def _antiderivative_cell_integrals(G, n: int) -> np.ndarray:
    x = np.arange(n + 1) / n
    V = G(x[:, None], x[None, :])
    return V[1:, 1:] - V[:-1, 1:] - V[1:, :-1] + V[:-1, :-1]


def coefficient_decay_check(f: Callable, J_max: int, antiderivative: Callable | None = None,
                            threshold: float = -2.75) -> ConvergenceReport:
    """Decay of ``max |<f, h_i (x) h_k>|`` over wavelet pairs at a common level.

    ``f(x, y)`` must broadcast.  ``antiderivative``, if given, is ``G`` with
    mixed derivative ``f`` and makes the cell integrals exact.  Passes when
    the log2-slope against ``m = 2**j`` is at most ``threshold``; a function
    whose detail coefficients all vanish yields slope ``-inf``.
    """
    if J_max < 2:
        raise DomainError("need J_max >= 2 for a slope")
    basis = HaarBasis(0.0, 1.0, int(J_max))
    n = basis.n_wavelets
    if antiderivative is not None:
        C = _antiderivative_cell_integrals(antiderivative, n)
    else:
        C = _gauss_cell_integrals(f, n)
    H = integral_table(0, collocation_grid(basis).y, basis)
    A = H @ C @ H.T
    tiny = 1e-13 * max(float(np.max(np.abs(A))), 1e-300) / n**2
    levels, maxima = [], []
    for j in range(1, int(J_max) + 1):
        m = 2**j
        block = A[m:2 * m, m:2 * m]
        levels.append(j)
        maxima.append(float(np.max(np.abs(block))))
    maxima = np.array(maxima)
    nz = maxima > tiny
    if not np.any(nz):
        slope = -math.inf
    else:
        slope = float(np.polyfit(np.array(levels, float)[nz], np.log2(maxima[nz]), 1)[0]) \
            if np.count_nonzero(nz) >= 2 else 0.0
    xs = np.linspace(0, 1, 65)
    F = f(xs[:, None], xs[None, :])
    lip = float(max(np.max(np.abs(np.diff(F, axis=0))), np.max(np.abs(np.diff(F, axis=1)))) * 64)
    return ConvergenceReport(
        "j", tuple(levels), maxima, slope, successive_ratios(maxima),
        bool(np.all(np.diff(maxima) <= 0)), slope <= threshold,
        extra={"lipschitz_estimate": lip, "threshold": threshold},
    )

