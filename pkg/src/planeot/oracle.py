"""Independent ground truth for the PDE pipeline.

Two oracles, deliberately unrelated to the elliptic solve:

    * exact discrete optimal transport between atomized measures, solved
      as a transportation LP to vertex optimality with a primal-dual
      certificate;
    * direct projected descent on the coupling objective over the
      marginal-constraint polytope.

Agreement of the PDE cost with both, under refinement, is the
end-to-end validation of the reduction.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .cost import CandidateQ, Instance, make_candidate, objective
from .errors import FloorSaturation, Infeasible, SizeGuard
from .grids import (
    EPS_POS,
    Density2D,
    Grid1D,
    bilinear,
    cumtrapz1d,
    trapz1d,
)

SIZE_GUARD = 10_000_000


class AtomizedMeasure:
    """Weighted point masses; weights are nonnegative and sum to one."""

    __slots__ = ("points", "weights")

    def __init__(self, points: np.ndarray, weights: np.ndarray):
        points = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
        weights = np.ascontiguousarray(weights, dtype=float).ravel()
        if len(points) != len(weights):
            raise ValueError("points and weights length mismatch")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, not 1")
        self.points = points
        self.weights = weights


class TransportPlan:
    """Nonnegative coupling matrix with prescribed row/column sums."""

    __slots__ = ("plan", "dual_gap")

    def __init__(
        self,
        plan: np.ndarray,
        source: AtomizedMeasure,
        target: AtomizedMeasure,
        dual_gap: float = np.nan,
    ):
        plan = np.asarray(plan, dtype=float)
        if np.min(plan) < -1e-12:
            raise ValueError(f"plan has negative entry {plan.min()!r}")
        plan = np.maximum(plan, 0.0)
        row_err = np.max(np.abs(plan.sum(axis=1) - source.weights))
        col_err = np.max(np.abs(plan.sum(axis=0) - target.weights))
        if max(row_err, col_err) > 1e-9:
            raise ValueError(
                f"plan marginals deviate by {max(row_err, col_err):.3e}"
            )
        self.plan = plan
        self.dual_gap = float(dual_gap)


def atomize(d: Density2D, nx: int, ny: int) -> AtomizedMeasure:
    """Cell-centered atoms carrying the exact mass of the interpolated density.

    The domain splits into ``nx x ny`` equal cells; each cell's weight is
    the integral of the piecewise-bilinear interpolant over the cell,
    evaluated exactly by midpoint quadrature on the overlap segments with
    the underlying grid cells.
    """
    ex = np.linspace(d.gx.lo, d.gx.hi, nx + 1)
    ey = np.linspace(d.gy.lo, d.gy.hi, ny + 1)
    bx = np.union1d(ex, d.gx.nodes)
    by = np.union1d(ey, d.gy.nodes)
    mx = 0.5 * (bx[1:] + bx[:-1])
    my = 0.5 * (by[1:] + by[:-1])
    lx = np.diff(bx)
    ly = np.diff(by)
    MX, MY = np.meshgrid(mx, my, indexing="ij")
    seg_mass = np.outer(lx, ly) * bilinear(d, MX, MY)
    ix = np.clip(np.searchsorted(ex, mx) - 1, 0, nx - 1)
    iy = np.clip(np.searchsorted(ey, my) - 1, 0, ny - 1)
    W = np.zeros((nx, ny))
    np.add.at(W, (np.broadcast_to(ix[:, None], seg_mass.shape),
                  np.broadcast_to(iy[None, :], seg_mass.shape)), seg_mass)
    cx = 0.5 * (ex[1:] + ex[:-1])
    cy = 0.5 * (ey[1:] + ey[:-1])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    pts = np.column_stack([CX.ravel(), CY.ravel()])
    w = W.ravel()
    return AtomizedMeasure(pts, w / w.sum())


def exact_ot(
    src: AtomizedMeasure, dst: AtomizedMeasure, gap_tol: float = 1e-9
) -> tuple[TransportPlan, float]:
    """Exact squared-distance transport between two atomized measures.

    Solves the transportation LP with the HiGHS interior-point method
    (crossover to a vertex included), then certifies optimality by the
    primal-dual gap before returning. The cost is the squared optimum.
    """
    n, m = len(src.weights), len(dst.weights)
    if n * m > SIZE_GUARD:
        raise SizeGuard(f"{n} x {m} atoms exceed the desk-scale guard")
    diff = src.points[:, None, :] - dst.points[None, :, :]
    C = np.einsum("ijk,ijk->ij", diff, diff)
    A_rows = sp.kron(sp.eye(n, format="csr"), np.ones((1, m)), format="csr")
    A_cols = sp.kron(np.ones((1, n)), sp.eye(m, format="csr"), format="csr")
    # drop one redundant column constraint to keep the system full rank
    A_eq = sp.vstack([A_rows, A_cols[:-1]], format="csr")
    b_eq = np.concatenate([src.weights, dst.weights[:-1]])
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs-ipm")
    if res.status != 0:
        raise Infeasible(f"transport LP failed: {res.message}")
    primal = float(res.fun)
    u = res.eqlin.marginals[:n]
    v = np.concatenate([res.eqlin.marginals[n:], [0.0]])
    dual = float(src.weights @ u + dst.weights @ v)
    gap = abs(primal - dual)
    if gap > max(gap_tol * abs(primal), 1e-12):
        raise Infeasible(
            f"duality certificate failed: gap {gap:.3e} on cost {primal:.6e}"
        )
    plan = TransportPlan(res.x.reshape(n, m), src, dst, dual_gap=gap)
    return plan, primal


def exact_ot_1d(
    src_weights: np.ndarray,
    src_points: np.ndarray,
    dst_weights: np.ndarray,
    dst_points: np.ndarray,
) -> float:
    """Squared 1D transport cost by north-west-corner quantile matching."""
    a = np.asarray(src_weights, dtype=float).ravel()
    b = np.asarray(dst_weights, dtype=float).ravel()
    p = np.asarray(src_points, dtype=float).ravel()
    q = np.asarray(dst_points, dtype=float).ravel()
    if np.any(np.diff(p) < 0.0) or np.any(np.diff(q) < 0.0):
        raise ValueError("point lists must be sorted ascending")
    i = j = 0
    wi = a[0] if len(a) else 0.0
    wj = b[0] if len(b) else 0.0
    cost = 0.0
    while i < len(a) and j < len(b):
        take = min(wi, wj)
        cost += take * (p[i] - q[j]) ** 2
        wi -= take
        wj -= take
        if wi <= 1e-16:
            i += 1
            if i < len(a):
                wi = a[i]
        if wj <= 1e-16:
            j += 1
            if j < len(b):
                wj = b[j]
    return float(cost)


# ---------------------------------------------------------------------------
# direct constrained minimization of the objective


def _project_marginals(
    vals: np.ndarray,
    t1: np.ndarray,
    t2: np.ndarray,
    hx: float,
    hy: float,
    sweeps: int = 50,
    tol: float = 1e-10,
) -> np.ndarray:
    """Alternating row/column rescaling onto the prescribed marginals."""
    wx = np.full(len(t1), hx); wx[0] = wx[-1] = 0.5 * hx
    wy = np.full(len(t2), hy); wy[0] = wy[-1] = 0.5 * hy
    v = np.maximum(vals, EPS_POS)
    err = np.inf
    for _ in range(sweeps):
        rows = v @ wy
        v = v * (t1 / rows)[:, None]
        cols = wx @ v
        v = v * (t2 / cols)[None, :]
        v = np.maximum(v, EPS_POS)
        rows = v @ wy
        cols = wx @ v
        err = max(np.max(np.abs(rows - t1)), np.max(np.abs(cols - t2)))
        if err <= tol:
            break
    if err > 1e-6:
        raise FloorSaturation(
            f"marginal projection stalled at deviation {err:.3e}"
        )
    return v


def _term1_columns(inst: Instance, q: np.ndarray, gx: Grid1D, gy: Grid1D) -> np.ndarray:
    """Per-column (fixed y) contribution of the first objective term."""
    cum = cumtrapz1d(q, gx.h, axis=0)
    U = np.clip(cum / cum[-1, :], 0.0, 1.0)
    Y = np.broadcast_to(gy.nodes[None, :], U.shape)
    G = inst.cq_G1_tilde.quantile(U, Y)
    integ = (gx.nodes[:, None] - G) ** 2 * q
    return trapz_cols(integ, gx.h)


def _term2_rows(inst: Instance, q: np.ndarray, gx: Grid1D, gy: Grid1D) -> np.ndarray:
    """Per-row (fixed x) contribution of the second objective term."""
    cum = cumtrapz1d(q, gy.h, axis=1)
    V = np.clip(cum / cum[:, -1][:, None], 0.0, 1.0)
    X = np.broadcast_to(gx.nodes[:, None], V.shape)
    G = inst.cq_G2.quantile(V, X)
    integ = (gy.nodes[None, :] - G) ** 2 * q
    return trapz_cols(integ.T, gy.h)


def trapz_cols(vals: np.ndarray, h: float) -> np.ndarray:
    return h * (vals.sum(axis=0) - 0.5 * (vals[0, :] + vals[-1, :]))


def _objective_from_parts(t1cols, t2rows, hx, hy) -> float:
    wy = np.full(len(t1cols), hy); wy[0] = wy[-1] = 0.5 * hy
    wx = np.full(len(t2rows), hx); wx[0] = wx[-1] = 0.5 * hx
    return float(t1cols @ wy + t2rows @ wx)


def _fd_gradient(
    inst: Instance, q: np.ndarray, gx: Grid1D, gy: Grid1D, eps: float = 1e-6
) -> np.ndarray:
    """Forward-difference gradient of the objective in the nodal values.

    A bump at node (i, j) only changes column j of the first term and row
    i of the second, so each column/row is re-evaluated for all bump
    positions at once instead of recomputing the full functional.
    """
    nx, ny = gx.n, gy.n
    wy = np.full(ny, gy.h); wy[0] = wy[-1] = 0.5 * gy.h
    wx = np.full(nx, gx.h); wx[0] = wx[-1] = 0.5 * gx.h
    base1 = _term1_columns(inst, q, gx, gy)
    base2 = _term2_rows(inst, q, gx, gy)
    grad = np.zeros((nx, ny))
    eye_x = np.eye(nx) * eps
    for j in range(ny):
        col = q[:, j]
        Qp = col[None, :] + eye_x  # row r = column bumped at node r
        cum = cumtrapz1d(Qp, gx.h, axis=1)
        U = np.clip(cum / cum[:, -1][:, None], 0.0, 1.0)
        G = inst.cq_G1_tilde.quantile(U, np.full(U.shape, gy.nodes[j]))
        integ = (gx.nodes[None, :] - G) ** 2 * Qp
        vals = trapz_cols(integ.T, gx.h)
        grad[:, j] += wy[j] * (vals - base1[j]) / eps
    eye_y = np.eye(ny) * eps
    for i in range(nx):
        row = q[i, :]
        Qp = row[None, :] + eye_y
        cum = cumtrapz1d(Qp, gy.h, axis=1)
        V = np.clip(cum / cum[:, -1][:, None], 0.0, 1.0)
        G = inst.cq_G2.quantile(V, np.full(V.shape, gx.nodes[i]))
        integ = (gy.nodes[None, :] - G) ** 2 * Qp
        vals = trapz_cols(integ.T, gy.h)
        grad[i, :] += wx[i] * (vals - base2[i]) / eps
    return grad


def minimize_objective_direct(
    inst: Instance,
    nx: int,
    ny: int,
    iters: int = 30,
    start: np.ndarray | None = None,
) -> tuple[CandidateQ, float]:
    """Projected descent on the objective over the marginal polytope.

    Finite-difference gradient, backtracking line search, projection by
    alternating marginal rescaling with a positivity floor. Monotone by
    construction: the returned value never exceeds the starting one.
    """
    if nx > 33 or ny > 33:
        raise SizeGuard("direct minimization is restricted to grids of at most 33")
    gx = Grid1D(0.0, 1.0, nx)
    gy = Grid1D(1.0, 2.0, ny)
    t1 = inst.f1.density_at(gx.nodes)
    t1 = t1 / trapz1d(t1, gx.h)
    t2 = inst.f2_tilde.density_at(gy.nodes)
    t2 = t2 / trapz1d(t2, gy.h)
    if start is None:
        q = np.outer(t1, t2)
    else:
        q = np.asarray(start, dtype=float).copy()
        if q.shape != (nx, ny):
            raise ValueError(f"start shape {q.shape} != ({nx}, {ny})")
    q = _project_marginals(q, t1, t2, gx.h, gy.h)

    def value(vals: np.ndarray) -> float:
        return _objective_from_parts(
            _term1_columns(inst, vals, gx, gy),
            _term2_rows(inst, vals, gx, gy),
            gx.h,
            gy.h,
        )

    best = value(q)
    step = 1.0
    for _ in range(iters):
        g = _fd_gradient(inst, q, gx, gy)
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            break
        improved = False
        alpha = step
        for _ in range(25):
            trial = _project_marginals(np.maximum(q - alpha * g, EPS_POS), t1, t2, gx.h, gy.h)
            val = value(trial)
            if val < best - 1e-14:
                q, best = trial, val
                step = alpha * 2.0
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    tol = self_marginal_tol(inst, gx, gy, t1, t2)
    cand = make_candidate(
        inst, Density2D(gx, gy, q), marginal_tol=tol
    )
    return cand, float(objective(inst, cand))


def self_marginal_tol(inst, gx: Grid1D, gy: Grid1D, t1: np.ndarray, t2: np.ndarray) -> float:
    """Feasibility slack: projection tolerance plus coarse-grid resampling error."""
    e1 = float(np.max(np.abs(t1 - inst.f1.density_at(gx.nodes))))
    e2 = float(np.max(np.abs(t2 - inst.f2_tilde.density_at(gy.nodes))))
    return max(1e-8, 2.0 * max(e1, e2) + 1e-9)
