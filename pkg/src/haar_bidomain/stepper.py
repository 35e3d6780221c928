"""Haar-collocation time stepping for the bidomain system in 1, 2 and 3 dimensions.

Per step (time ``t_s = s * dt``):

1. gating: collocate ``c = g(v^s, w^s)`` through the tensor Haar matrix, solve
   for ``gamma`` and set ``w^{s+1} = w^s + dt * sum gamma h``;
2. solve the coupled block system ``K [alpha; beta] = b`` where ``alpha`` are
   the coefficients of ``v_t`` and ``beta`` those of ``u_e^{s+1}``;
3. rebuild ``v``, ``u_e`` and the derivative traces at the collocation points.

Fields are expanded in a Neumann-consistent tensor basis.  Per axis the basis
function for wavelet ``i >= 2`` is its second integral ``p_{2,i}`` (value),
with ``p_{1,i}`` and ``h_i`` as first and second derivatives; ``p_{1,i}``
vanishes at both ends, so every expansion satisfies zero normal flux.  Wavelet
``i = 1`` is replaced by the constant function.  The constant mode of
``u_e`` has no derivatives and therefore does not enter the equations; its
slot in ``beta`` is reused as a scalar multiplier on the elliptic rows, which
absorbs the discrete compatibility defect of the pure-Neumann problem.  The
additive constant of ``u_e`` is fixed afterwards by the anchor.

Row blocks of ``K`` (``div_s(c) = sum_a s_a d2_a(c) + s_a' d1_a(c)``)::

    C_m val(alpha) + div_e(beta)                       = I2 - f(v^s, w^{s+1})
    dt div_i(alpha) + div_{i+e}(beta) + beta_0          = -(I1 - I2) - div_i(v^s)

``div_i(v^s)`` is formed from the cached traces ``v_aa`` and ``v_a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .bidomain_model import BidomainProblem, gating_rate, ionic_current
from .errors import AssemblyError, DomainError, StepError
from .haar_basis import HaarBasis, assemble_matrices, collocation_grid, integral_table
from .krylov import (
    GmresConfig,
    LinearOperator,
    SolveStats,
    contract,
    gmres_solve,
    kron_apply,
    kron_operator,
)

ANCHORS = ("point", "zero-mean")
PRECONDITIONERS = ("fast-diag", "none")


# --------------------------------------------------------------------------- config


@dataclass(frozen=True)
class SteppingConfig:
    dt: float
    gmres: GmresConfig = field(default_factory=GmresConfig)
    ue_anchor: str = "point"
    anchor_index: int = 0
    warm_start: bool = True
    preconditioner: str = "fast-diag"
    snapshot_every: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.ue_anchor not in ANCHORS:
            raise DomainError(f"unknown u_e anchor {self.ue_anchor!r}; choose from {ANCHORS}")
        if self.preconditioner not in PRECONDITIONERS:
            raise DomainError(f"unknown preconditioner {self.preconditioner!r}")
        if self.anchor_index < 0:
            raise DomainError("anchor_index must be >= 0")
        if self.snapshot_every < 0:
            raise DomainError("snapshot_every must be >= 0")


def step_count(T: float, dt: float) -> int:
    """Number of steps of size ``dt`` reaching ``T``; ``dt`` must divide ``T``."""
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(T, dt):
        raise DomainError(f"dt={dt} does not divide T={T}")
    return int(n)


# --------------------------------------------------------------------------- discretization


@dataclass(frozen=True)
class AxisOperators:
    """Per-axis collocation matrices, all shaped (points, coefficients)."""

    basis: HaarBasis
    y: np.ndarray
    V: np.ndarray
    G: np.ndarray
    S: np.ndarray
    Hc: np.ndarray
    V_inv: np.ndarray
    Hc_inv: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray


def neumann_tables(basis: HaarBasis, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, first- and second-derivative tables of the Neumann basis at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    V = integral_table(2, x, basis).T
    G = integral_table(1, x, basis).T
    S = integral_table(0, x, basis).T
    V[:, 0] = 1.0
    G[:, 0] = 0.0
    S[:, 0] = 0.0
    return V, G, S


def axis_operators(basis: HaarBasis) -> AxisOperators:
    mats = assemble_matrices(basis)
    y = collocation_grid(basis).y
    V, G, S = neumann_tables(basis, y)
    Hc = mats.H.T.copy()
    Hc_inv = mats.H / np.sum(mats.H**2, axis=1)[:, None]
    V_inv = np.linalg.inv(V)
    # nodal second-derivative matrix; symmetric up to rounding, ones span its kernel
    dxx = S @ V_inv
    lam, Q = np.linalg.eigh(0.5 * (dxx + dxx.T))
    z = int(np.argmin(np.abs(lam)))
    order = [z] + [k for k in range(len(lam)) if k != z]
    lam, Q = lam[order].copy(), Q[:, order].copy()
    lam[0] = 0.0
    Q[:, 0] = 1.0 / math.sqrt(len(y))
    return AxisOperators(basis, y, V, G, S, Hc, V_inv, Hc_inv, Q, lam)


@dataclass(frozen=True)
class Discretization:
    axes: tuple[AxisOperators, ...]

    @classmethod
    def build(cls, domain, levels: int | Sequence[int]) -> "Discretization":
        if np.ndim(levels) == 0:
            levels = [int(levels)] * len(domain)
        if len(levels) != len(domain):
            raise DomainError(f"need one resolution level per axis, got {len(levels)}")
        return cls(tuple(axis_operators(HaarBasis(lo, hi, int(J)))
                         for (lo, hi), J in zip(domain, levels)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a.y) for a in self.axes)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(a.basis.J for a in self.axes)

    @property
    def points(self) -> np.ndarray:
        """Collocation points, shape ``(N, dim)``, first axis slowest."""
        mesh = np.meshgrid(*[a.y for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def _tables(self):
        V = [a.V for a in self.axes]
        swap = lambda which, k: [getattr(a, which) if j == k else a.V
                                 for j, a in enumerate(self.axes)]
        return V, [swap("G", k) for k in range(self.dim)], [swap("S", k) for k in range(self.dim)]

    def value(self, c):
        return contract(self._tables[0], c)

    def d1(self, c, axis: int):
        return contract(self._tables[1][axis], c)

    def d2(self, c, axis: int):
        return contract(self._tables[2][axis], c)

    def haar_operator(self) -> LinearOperator:
        return kron_operator([a.Hc for a in self.axes])


# --------------------------------------------------------------------------- state


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BidomainState:
    """Fields at the collocation points at time ``t = step * dt``.

    ``trace_vaa[a]`` and ``trace_va[a]`` are the second and first derivatives
    of ``v`` along axis ``a``.  ``v_coeffs``, ``w_coeffs`` and ``ue_coeffs``
    (with ``ue_shift``) represent the fields as functions, so they can be
    evaluated away from the collocation points.
    """

    t: float
    step: int
    v: np.ndarray
    ue: np.ndarray
    w: np.ndarray
    trace_vaa: np.ndarray
    trace_va: np.ndarray
    v_coeffs: np.ndarray
    w_coeffs: np.ndarray
    ue_coeffs: np.ndarray
    ue_shift: float
    solution: np.ndarray | None = None
    gamma: np.ndarray | None = None


@dataclass(frozen=True)
class StepSystems:
    K: LinearOperator
    b: np.ndarray
    Hsys: LinearOperator
    c: np.ndarray


@dataclass(frozen=True)
class StepReport:
    step: int
    gating: tuple[SolveStats, ...]
    vue: SolveStats


# --------------------------------------------------------------------------- context


class StepContext:
    """Everything that stays fixed over a run: discretization, sampled
    conductivities, the block operator and its preconditioner."""

    def __init__(self, problem: BidomainProblem, levels, cfg: SteppingConfig):
        self.problem = problem
        self.cfg = cfg
        self.disc = Discretization.build(problem.domain, levels)
        d = self.disc
        self.N = d.size
        if cfg.ue_anchor == "point" and cfg.anchor_index >= self.N:
            raise DomainError(f"anchor_index {cfg.anchor_index} out of range for {self.N} points")
        self.points = d.points
        self._sample_conductivity()
        self.K = self._block_operator()
        self.Hsys = d.haar_operator()
        self.K_precond = self._fast_diag() if cfg.preconditioner == "fast-diag" else None
        self.H_precond = (
            kron_operator([a.Hc_inv for a in d.axes]) if cfg.preconditioner == "fast-diag" else None
        )

    @property
    def dim(self) -> int:
        return self.disc.dim

    def _sample_conductivity(self):
        cond = self.problem.conductivity
        pts = self.points
        self.sig, self.dsig = {}, {}
        for which in ("intra", "extra"):
            fl = cond.fields(which)
            self.sig[which] = [fl[a](pts) for a in range(self.dim)]
            self.dsig[which] = [
                fl[a].derivative(pts, a, h=self.disc.axes[a].basis.dx) for a in range(self.dim)
            ]
        self.sig["sum"] = [i + e for i, e in zip(self.sig["intra"], self.sig["extra"])]
        self.dsig["sum"] = [i + e for i, e in zip(self.dsig["intra"], self.dsig["extra"])]
        if all(not np.any(s) for s in self.sig["sum"]):
            raise AssemblyError("all conductivities vanish identically; the system is singular")
        self._has_slope = {
            k: [bool(np.any(ds)) for ds in v] for k, v in self.dsig.items()
        }

    def div(self, which: str, d1s, d2s):
        out = np.zeros(self.N)
        for a in range(self.dim):
            out += self.sig[which][a] * d2s[a]
            if self._has_slope[which][a]:
                out += self.dsig[which][a] * d1s[a]
        return out

    def _derivs(self, c):
        return ([self.disc.d1(c, a) for a in range(self.dim)],
                [self.disc.d2(c, a) for a in range(self.dim)])

    def _block_operator(self) -> LinearOperator:
        N, dt, C_m = self.N, self.cfg.dt, self.problem.C_m

        def matvec(x):
            al, be = x[:N], x[N:]
            d1a, d2a = self._derivs(al)
            d1b, d2b = self._derivs(be)
            r1 = C_m * self.disc.value(al) + self.div("extra", d1b, d2b)
            r2 = dt * self.div("intra", d1a, d2a) + self.div("sum", d1b, d2b) + be[0]
            return np.concatenate([r1, r2])

        return LinearOperator(2 * N, matvec)

    def _modal(self, which: str) -> np.ndarray:
        """``sum_a mean(sigma_a) lambda_a`` over the tensor eigenbasis."""
        mu = np.zeros(self.disc.shape)
        for a, ax in enumerate(self.disc.axes):
            shp = [1] * self.dim
            shp[a] = -1
            mu = mu + float(np.mean(self.sig[which][a])) * ax.eigvals.reshape(shp)
        return mu.ravel()

    def _fast_diag(self) -> LinearOperator:
        """Exact inverse of ``K`` when conductivities are constant; otherwise
        built from their means."""
        N, dt, C_m = self.N, self.cfg.dt, self.problem.C_m
        axes = self.disc.axes
        Qt = [a.eigvecs.T for a in axes]
        Q = [a.eigvecs for a in axes]
        Vi = [a.V_inv for a in axes]
        mu_e, mu_i, mu_s = self._modal("extra"), self._modal("intra"), self._modal("sum")
        det = C_m * mu_s - dt * mu_e * mu_i
        scale = max(float(np.max(np.abs(C_m * mu_s))), 1e-300)
        ok = np.abs(det) > 1e-12 * scale
        safe = np.where(ok, det, 1.0)
        sqrtN = math.sqrt(N)

        def apply(r):
            h1 = contract(Qt, r[:N])
            h2 = contract(Qt, r[N:])
            a_h = np.where(ok, (mu_s * h1 - mu_e * h2) / safe, h1 / C_m)
            z_h = np.where(ok, (C_m * h2 - dt * mu_i * h1) / safe, 0.0)
            al = contract(Vi, contract(Q, a_h))
            be = contract(Vi, contract(Q, z_h))
            be[0] = h2[0] / sqrtN
            return np.concatenate([al, be])

        return LinearOperator(2 * N, apply)

    def elliptic_solve(self, rhs: np.ndarray, x0=None) -> tuple[np.ndarray, SolveStats]:
        """Solve ``div_{i+e}(beta) + beta_0 = rhs`` for ``beta``."""
        N = self.N

        def matvec(be):
            d1b, d2b = self._derivs(be)
            return self.div("sum", d1b, d2b) + be[0]

        op = LinearOperator(N, matvec)
        precond = None
        if self.cfg.preconditioner == "fast-diag":
            axes = self.disc.axes
            mu = self._modal("sum")
            ok = np.abs(mu) > 1e-12 * max(float(np.max(np.abs(mu))), 1e-300)
            safe = np.where(ok, mu, 1.0)

            def precond(r):
                h = contract([a.eigvecs.T for a in axes], r)
                z = contract([a.V_inv for a in axes],
                             contract([a.eigvecs for a in axes], np.where(ok, h / safe, 0.0)))
                z[0] = h[0] / math.sqrt(N)
                return z

        return gmres_solve(op, rhs, x0, self.cfg.gmres, precond)

    def anchor(self, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Drop the multiplier slot, rebuild ``u_e`` and fix its constant."""
        bh = np.array(beta, dtype=float)
        bh[0] = 0.0
        ue = self.disc.value(bh)
        if self.cfg.ue_anchor == "point":
            shift = -float(ue[self.cfg.anchor_index])
        else:
            shift = -float(np.mean(ue))
        return bh, ue + shift, shift


# --------------------------------------------------------------------------- operations


def initial_state(ctx: StepContext) -> BidomainState:
    """Sample the initial data; traces come from the initial field's own
    derivatives and ``u_e(0)`` from the elliptic equation."""
    p, pts, dim = ctx.problem, ctx.points, ctx.dim
    v = p.v0(pts)
    w = np.stack([w0(pts) for w0 in p.w0])
    vaa = np.stack([p.v0.second_derivative(pts, a) for a in range(dim)])
    va = np.stack([p.v0.derivative(pts, a) for a in range(dim)])
    rhs = -(p.stimulus.I1(0.0, pts) - p.stimulus.I2(0.0, pts)) - _div_traces(ctx, vaa, va)
    beta, stats = ctx.elliptic_solve(rhs)
    if not stats.converged:
        raise StepError("initial u_e solve did not converge", stats=stats, step=0)
    bh, ue, shift = ctx.anchor(beta)
    N = ctx.N
    return BidomainState(
        t=0.0, step=0, v=_frozen(v), ue=_frozen(ue), w=_frozen(w),
        trace_vaa=_frozen(vaa), trace_va=_frozen(va),
        v_coeffs=_frozen(np.zeros(N)), w_coeffs=_frozen(np.zeros((p.ionic.d, N))),
        ue_coeffs=_frozen(bh), ue_shift=shift,
    )


def _div_traces(ctx: StepContext, vaa, va) -> np.ndarray:
    out = np.zeros(ctx.N)
    for a in range(ctx.dim):
        out += ctx.sig["intra"][a] * vaa[a] + ctx.dsig["intra"][a] * va[a]
    return out


def assemble_gating(state: BidomainState, ctx: StepContext) -> tuple[LinearOperator, np.ndarray]:
    """Tensor Haar operator (coefficients to point values) and the collocated
    gating rate, shaped ``(d, N)``."""
    c = np.asarray(gating_rate(ctx.problem.ionic, state.v, state.w))
    return ctx.Hsys, c.reshape(ctx.problem.ionic.d, ctx.N)


def step_gating(state: BidomainState, ctx: StepContext):
    """Returns ``(w_new, w_coeffs_new, gamma, stats)``."""
    Hsys, c = assemble_gating(state, ctx)
    dt = ctx.cfg.dt
    w_new = np.empty_like(c)
    coeffs = np.array(state.w_coeffs)
    gam = np.empty_like(c)
    stats = []
    for comp in range(c.shape[0]):
        x0 = state.gamma[comp] if (ctx.cfg.warm_start and state.gamma is not None) else None
        g, st = gmres_solve(Hsys, c[comp], x0, ctx.cfg.gmres, ctx.H_precond)
        if not st.converged:
            raise StepError(f"gating solve failed at step {state.step + 1}", stats=st,
                            step=state.step + 1)
        gam[comp] = g
        w_new[comp] = state.w[comp] + dt * Hsys.apply(g)
        coeffs[comp] += dt * g
        stats.append(st)
    return w_new, coeffs, gam, tuple(stats)


def assemble_vue(state: BidomainState, w_new: np.ndarray, ctx: StepContext) -> StepSystems:
    p, pts = ctx.problem, ctx.points
    t1 = (state.step + 1) * ctx.cfg.dt
    I1 = p.stimulus.I1(t1, pts)
    I2 = p.stimulus.I2(t1, pts)
    f = ionic_current(p.ionic, state.v, w_new)
    b1 = I2 - f
    b2 = -(I1 - I2) - _div_traces(ctx, state.trace_vaa, state.trace_va)
    Hsys, c = assemble_gating(state, ctx)
    return StepSystems(K=ctx.K, b=np.concatenate([b1, b2]), Hsys=Hsys, c=c)


def _dim_checked(expected: int):
    def assemble(state, w_new, ctx):
        if ctx.dim != expected:
            raise DomainError(f"problem is {ctx.dim}-dimensional, expected {expected}")
        return assemble_vue(state, w_new, ctx)

    assemble.__name__ = f"assemble_vue_{expected}d"
    assemble.__doc__ = f"Block system for a {expected}-dimensional problem."
    return assemble


assemble_vue_1d = _dim_checked(1)
assemble_vue_2d = _dim_checked(2)
assemble_vue_3d = _dim_checked(3)


def step_vue(state: BidomainState, systems: StepSystems, ctx: StepContext):
    """Solve the block system; returns the new (v, ue) data and solver stats."""
    x0 = state.solution if ctx.cfg.warm_start else None
    x, st = gmres_solve(systems.K, systems.b, x0, ctx.cfg.gmres, ctx.K_precond)
    if not st.converged:
        raise StepError(f"(v, u_e) solve failed at step {state.step + 1}", stats=st,
                        step=state.step + 1)
    N, dt, d = ctx.N, ctx.cfg.dt, ctx.disc
    al, be = x[:N], x[N:]
    v = state.v + dt * d.value(al)
    vaa = np.stack([state.trace_vaa[a] + dt * d.d2(al, a) for a in range(ctx.dim)])
    va = np.stack([state.trace_va[a] + dt * d.d1(al, a) for a in range(ctx.dim)])
    bh, ue, shift = ctx.anchor(be)
    return dict(v=v, ue=ue, trace_vaa=vaa, trace_va=va,
                v_coeffs=state.v_coeffs + dt * al, ue_coeffs=bh, ue_shift=shift,
                solution=x), st


def step(state: BidomainState, ctx: StepContext) -> tuple[BidomainState, StepReport]:
    w_new, w_coeffs, gam, gstats = step_gating(state, ctx)
    systems = assemble_vue(state, w_new, ctx)
    fields, vstats = step_vue(state, systems, ctx)
    s = state.step + 1
    new = BidomainState(
        t=s * ctx.cfg.dt, step=s,
        v=_frozen(fields["v"]), ue=_frozen(fields["ue"]), w=_frozen(w_new),
        trace_vaa=_frozen(fields["trace_vaa"]), trace_va=_frozen(fields["trace_va"]),
        v_coeffs=_frozen(fields["v_coeffs"]), w_coeffs=_frozen(w_coeffs),
        ue_coeffs=_frozen(fields["ue_coeffs"]), ue_shift=fields["ue_shift"],
        solution=_frozen(fields["solution"]), gamma=_frozen(gam),
    )
    return new, StepReport(s, gstats, vstats)


@dataclass
class Trajectory:
    context: StepContext
    snapshots: list[BidomainState]
    reports: list[StepReport]

    @property
    def final(self) -> BidomainState:
        return self.snapshots[-1]

    def gmres_summary(self) -> dict:
        its = [r.vue.iterations for r in self.reports]
        gits = [s.iterations for r in self.reports for s in r.gating]
        res = [r.vue.final_relative_residual for r in self.reports]
        return {
            "steps": len(self.reports),
            "vue_iterations_total": int(sum(its)),
            "vue_iterations_max": int(max(its, default=0)),
            "gating_iterations_total": int(sum(gits)),
            "max_relative_residual": float(max(res, default=0.0)),
            "all_converged": all(r.vue.converged and all(g.converged for g in r.gating)
                                 for r in self.reports),
        }


def run(problem: BidomainProblem, levels, cfg: SteppingConfig) -> Trajectory:
    """Advance from t = 0 to ``problem.T``.

    Snapshots hold the initial state, every ``cfg.snapshot_every``-th state
    (when positive) and the final state.  A failing step raises
    :class:`StepError` with the partial trajectory attached.
    """
    n = step_count(problem.T, cfg.dt)
    ctx = StepContext(problem, levels, cfg)
    state = initial_state(ctx)
    traj = Trajectory(ctx, [state], [])
    for s in range(n):
        try:
            state, rep = step(state, ctx)
        except StepError as exc:
            exc.trajectory = traj
            raise
        traj.reports.append(rep)
        if s + 1 == n or (cfg.snapshot_every and (s + 1) % cfg.snapshot_every == 0):
            traj.snapshots.append(state)
    return traj


# --------------------------------------------------------------------------- evaluation


def evaluate_on_grid(state: BidomainState, ctx: StepContext, axes_points) -> dict:
    """Evaluate ``v``, ``u_e`` and ``w`` on the tensor grid spanned by
    ``axes_points`` (one coordinate array per axis).  Results are flattened
    with the first axis slowest; ``w`` has shape ``(d, npts)``."""
    if len(axes_points) != ctx.dim:
        raise DomainError("need one coordinate array per axis")
    Vs, Hs = [], []
    for ax, x in zip(ctx.disc.axes, axes_points):
        V, _, _ = neumann_tables(ax.basis, x)
        Vs.append(V)
        Hs.append(integral_table(0, np.atleast_1d(x), ax.basis).T)
    mesh = np.meshgrid(*[np.atleast_1d(np.asarray(x, float)) for x in axes_points], indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    p = ctx.problem
    v = p.v0(pts) + kron_apply(Vs, state.v_coeffs)
    ue = kron_apply(Vs, state.ue_coeffs) + state.ue_shift
    w = np.stack([p.w0[c](pts) + kron_apply(Hs, state.w_coeffs[c]) for c in range(p.ionic.d)])
    return {"points": pts, "v": v, "ue": ue, "w": w}

