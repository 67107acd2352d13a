"""Transport-cost layer for the planar coupling problem.

Given a source density ``f`` on the unit square and a shifted target
density ``f~`` on [1,2] x [1,2], the squared coupling cost decomposes
through the intermediate vector ``Z = (X1, X~2)`` whose density ``q``
lives on [0,1] x [1,2] with prescribed marginals (``f``'s x-marginal and
``f~``'s y-marginal). This module evaluates:

    * the 1D quantile-coupling distance between two marginals;
    * the arithmetic relation moving costs between a shifted and an
      unshifted target;
    * the objective functional over admissible ``q``;
    * the mixed-derivative potential ``M`` whose stationarity
      characterizes the optimal ``q``, and its closed-form boundary-only
      expression;
    * marginal-preserving four-square corner perturbations;
    * reconstruction of coupled pairs (X, X~) from points of Z.
"""

from __future__ import annotations

import numpy as np

from .conditional import (
    FIRST_GIVEN_SECOND,
    SECOND_GIVEN_FIRST,
    ConditionalQuantile,
)
from .errors import (
    GeometryInvalid,
    MarginalViolation,
    OutOfRange,
    PositivityViolated,
)
from .grids import (
    EPS_POS,
    Density2D,
    Grid1D,
    Marginal1D,
    ScalarField2D,
    _d1_edge3,
    cumtrapz1d,
    interp1_monotone,
    marginal,
    normalize,
    trapz2d,
)

DEFAULT_MARGINAL_TOL = 1e-8


class Instance:
    """A source/target density pair with marginals and quantile evaluators.

    ``f`` lives on [0,1] x [0,1] and ``f_tilde`` on [1,2] x [1,2]; both are
    normalized at construction. The four conditional-quantile evaluators
    cover both families of both densities.
    """

    def __init__(self, f: Density2D, f_tilde: Density2D):
        for g, lo, hi, name in (
            (f.gx, 0.0, 1.0, "f.gx"),
            (f.gy, 0.0, 1.0, "f.gy"),
            (f_tilde.gx, 1.0, 2.0, "f_tilde.gx"),
            (f_tilde.gy, 1.0, 2.0, "f_tilde.gy"),
        ):
            if abs(g.lo - lo) > 1e-9 or abs(g.hi - hi) > 1e-9:
                raise ValueError(f"{name} must span [{lo}, {hi}], got [{g.lo}, {g.hi}]")
        self.f = normalize(f)
        self.f_tilde = normalize(f_tilde)
        self.f1 = marginal(self.f, "x")
        self.f2 = marginal(self.f, "y")
        self.f1_tilde = marginal(self.f_tilde, "x")
        self.f2_tilde = marginal(self.f_tilde, "y")
        self.cq_G1 = ConditionalQuantile(self.f, FIRST_GIVEN_SECOND)
        self.cq_G2 = ConditionalQuantile(self.f, SECOND_GIVEN_FIRST)
        self.cq_G1_tilde = ConditionalQuantile(self.f_tilde, FIRST_GIVEN_SECOND)
        self.cq_G2_tilde = ConditionalQuantile(self.f_tilde, SECOND_GIVEN_FIRST)


def build_instance(f: Density2D, f_tilde: Density2D) -> Instance:
    return Instance(f, f_tilde)


class CandidateQ:
    """A density on [0,1] x [1,2] admissible for the coupling objective.

    Feasibility (marginals matching the instance's ``f1`` and ``f2~``) is
    validated at construction; the achieved worst deviation is stored so
    operations can re-check the precondition cheaply. ``marginal_tol``
    defaults to 1e-8 for user-built candidates; solver-recovered ones pass
    their own discretization-level tolerance.
    """

    def __init__(
        self,
        q: Density2D,
        f1: Marginal1D,
        f2_tilde: Marginal1D,
        marginal_tol: float = DEFAULT_MARGINAL_TOL,
        floored_mass: float = 0.0,
    ):
        if abs(q.gx.lo) > 1e-9 or abs(q.gx.hi - 1.0) > 1e-9:
            raise ValueError("candidate x-grid must span [0, 1]")
        if abs(q.gy.lo - 1.0) > 1e-9 or abs(q.gy.hi - 2.0) > 1e-9:
            raise ValueError("candidate y-grid must span [1, 2]")
        self.q = q
        self.f1 = f1
        self.f2_tilde = f2_tilde
        self.marginal_tol = float(marginal_tol)
        self.floored_mass = float(floored_mass)
        mx = marginal(q, "x")
        my = marginal(q, "y")
        ex = np.max(np.abs(mx.values - f1.density_at(q.gx.nodes)))
        ey = np.max(np.abs(my.values - f2_tilde.density_at(q.gy.nodes)))
        self.max_marginal_error = float(max(ex, ey))
        if self.max_marginal_error > self.marginal_tol:
            raise MarginalViolation(
                f"candidate marginals deviate by {self.max_marginal_error:.3e} "
                f"(tolerance {self.marginal_tol:.3e})"
            )


def make_candidate(
    inst: Instance,
    q: Density2D,
    marginal_tol: float = DEFAULT_MARGINAL_TOL,
    floored_mass: float = 0.0,
) -> CandidateQ:
    return CandidateQ(q, inst.f1, inst.f2_tilde, marginal_tol, floored_mass)


def product_candidate(inst: Instance, nx: int | None = None, ny: int | None = None) -> CandidateQ:
    """The independent coupling ``f1 (x) f2~`` as a feasible candidate."""
    gx = inst.f.gx if nx is None else Grid1D(0.0, 1.0, nx)
    gy = inst.f_tilde.gy if ny is None else Grid1D(1.0, 2.0, ny)
    vals = np.outer(inst.f1.density_at(gx.nodes), inst.f2_tilde.density_at(gy.nodes))
    tol = DEFAULT_MARGINAL_TOL
    if gx is not inst.f.gx or gy is not inst.f_tilde.gy:
        tol = max(tol, 10.0 * max(gx.h, gy.h) ** 2)
    return make_candidate(inst, Density2D(gx, gy, vals), marginal_tol=tol)


# ---------------------------------------------------------------------------
# 1D quantile distance and the shift identity


def krw_1d_distance(m: Marginal1D, m_tilde: Marginal1D, n_t: int = 4096) -> float:
    """1D 2-Wasserstein distance via the quantile coupling.

    sqrt of the integral over levels t in [0,1] of the squared gap
    between the two inverse CDFs, by trapezoid on an ``n_t``-point level
    grid.
    """
    t = np.linspace(0.0, 1.0, n_t)
    qa = interp1_monotone(m.cdf, m.grid.nodes, t)
    qb = interp1_monotone(m_tilde.cdf, m_tilde.grid.nodes, t)
    gap2 = (qa - qb) ** 2
    val = np.trapezoid(gap2, dx=1.0 / (n_t - 1))
    return float(np.sqrt(max(val, 0.0)))


def shift_cost_relation(
    ex1: float, ey1: float, ex2: float, ey2: float, cost_shifted: float
) -> float:
    """Recover the unshifted squared cost from the shifted one.

    The target shifted by (+1, +1) changes the squared coupling cost by a
    coupling-independent amount, so the optimal values transform by the
    same arithmetic.
    """
    return cost_shifted + 2.0 * ex1 - 2.0 * ey1 + 2.0 * ex2 - 2.0 * ey2 - 2.0


def density_moments(d: Density2D) -> tuple[float, float]:
    """First moments (E[x], E[y]) of a normalized density, by trapezoid."""
    X, Y = np.meshgrid(d.gx.nodes, d.gy.nodes, indexing="ij")
    return (
        trapz2d(X * d.values, d.gx.h, d.gy.h),
        trapz2d(Y * d.values, d.gx.h, d.gy.h),
    )


# ---------------------------------------------------------------------------
# the objective functional


def _check_feasible(cand: CandidateQ):
    if cand.max_marginal_error > cand.marginal_tol:
        raise MarginalViolation(
            f"candidate infeasible: {cand.max_marginal_error:.3e} "
            f"> {cand.marginal_tol:.3e}"
        )


def _conditional_levels(q: Density2D, axis: int) -> np.ndarray:
    """Running conditional-CDF levels of ``q`` along ``axis``, in [0, 1].

    Each line is normalized by its own mass so levels end exactly at 1;
    anything outside [0, 1] beyond roundoff would be a construction bug.
    """
    h = q.gx.h if axis == 0 else q.gy.h
    cum = cumtrapz1d(q.values, h, axis=axis)
    line = np.take(cum, -1, axis=axis)
    levels = cum / np.expand_dims(line, axis)
    if levels.min() < -1e-9 or levels.max() > 1.0 + 1e-9:
        raise OutOfRange("conditional level left [0, 1] beyond the roundoff guard")
    return np.clip(levels, 0.0, 1.0)


def objective(inst: Instance, cand: CandidateQ) -> float:
    """The coupling objective of an admissible density.

    Sum of the mean squared displacement of the first coordinate under
    the conditional quantile map into ``f~`` and of the second coordinate
    under the map into ``f``, both weighted by the candidate itself.
    """
    _check_feasible(cand)
    q = cand.q
    X = q.gx.nodes[:, None]
    Y = q.gy.nodes[None, :]
    U = _conditional_levels(q, axis=0)
    G_t = inst.cq_G1_tilde.quantile(U, np.broadcast_to(Y, U.shape))
    term1 = trapz2d((X - G_t) ** 2 * q.values, q.gx.h, q.gy.h)
    V = _conditional_levels(q, axis=1)
    G_v = inst.cq_G2.quantile(V, np.broadcast_to(X, V.shape))
    term2 = trapz2d((Y - G_v) ** 2 * q.values, q.gx.h, q.gy.h)
    return float(term1 + term2)


def split_check(inst: Instance, coupling_sample: np.ndarray) -> float:
    """Worst violation of the pass-through-Z cost decomposition.

    Samples are rows (x1, x2, x1t, x2t); with Z = (x1, x2t) the identity
    |X - X~|^2 = |X - Z|^2 + |Z - X~|^2 holds algebraically, so the
    return value must sit at roundoff level. Kept as a permanent
    regression check of the decomposition.
    """
    pts = np.asarray(coupling_sample, dtype=float).reshape(-1, 4)
    x1, x2, x1t, x2t = pts.T
    z1, z2 = x1, x2t
    lhs = (x1 - x1t) ** 2 + (x2 - x2t) ** 2
    rhs = ((x1 - z1) ** 2 + (x2 - z2) ** 2) + ((z1 - x1t) ** 2 + (z2 - x2t) ** 2)
    return float(np.max(np.abs(lhs - rhs))) if pts.size else 0.0


# ---------------------------------------------------------------------------
# the potential M


def _m_pieces(inst: Instance, cand: CandidateQ):
    """Boundary curves and the interior integrand of the potential M."""
    q = cand.q
    gx, gy = q.gx, q.gy
    U = _conditional_levels(q, axis=0)
    V = _conditional_levels(q, axis=1)
    # boundary integrals along the two low edges
    g_bottom = inst.cq_G1_tilde.quantile(U[:, 0], np.full(gx.n, gy.lo))
    b_x = -2.0 * cumtrapz1d(g_bottom, gx.h)
    g_left = inst.cq_G2.quantile(V[0, :], np.full(gy.n, gx.lo))
    b_y = -2.0 * cumtrapz1d(g_left, gy.h)
    # interior integrand: total derivatives of the two quantile composites
    Xg = np.broadcast_to(gx.nodes[:, None], U.shape)
    Yg = np.broadcast_to(gy.nodes[None, :], U.shape)
    dU_dy = _d1_edge3(U, gy.h, axis=1)
    d1 = inst.cq_G1_tilde.quantile_ds(U, Yg) * dU_dy + inst.cq_G1_tilde.quantile_dcond(
        U, Yg
    )
    dV_dx = _d1_edge3(V, gx.h, axis=0)
    d2 = inst.cq_G2.quantile_ds(V, Xg) * dV_dx + inst.cq_G2.quantile_dcond(V, Xg)
    return b_x, b_y, d1 + d2


def M_field(inst: Instance, cand: CandidateQ) -> ScalarField2D:
    """The potential whose mixed derivative vanishes at the optimal density.

    Assembled as x^2 + y^2 plus the two boundary quantile integrals minus
    twice the double integral of the total conditioning-derivatives of
    the two quantile composites (chain rule through the level and
    conditioning derivatives of the quantile evaluators).
    """
    _check_feasible(cand)
    q = cand.q
    b_x, b_y, integrand = _m_pieces(inst, cand)
    inner = cumtrapz1d(cumtrapz1d(integrand, q.gx.h, axis=0), q.gy.h, axis=1)
    X = q.gx.nodes[:, None]
    Y = q.gy.nodes[None, :]
    vals = X**2 + Y**2 + b_x[:, None] + b_y[None, :] - 2.0 * inner
    return ScalarField2D(q.gx, q.gy, vals)


def M_closed_form_residual(inst: Instance, cand: CandidateQ) -> float:
    """Gap between M and its boundary-only closed form; small at optimality."""
    q = cand.q
    b_x, b_y, integrand = _m_pieces(inst, cand)
    inner = cumtrapz1d(cumtrapz1d(integrand, q.gx.h, axis=0), q.gy.h, axis=1)
    return float(np.max(np.abs(2.0 * inner)))


# ---------------------------------------------------------------------------
# corner perturbations


class CornerPerturbation:
    """Four-square, marginal-preserving density perturbation.

    Adds ``+delta`` on the two aligned squares [a, a+eps] x [b, b+eps] and
    [a1, a1+eps] x [b1, b1+eps], ``-delta`` on the two cross squares. The
    pattern factorizes into two 1D profiles with zero integral, so both
    marginals are preserved exactly.
    """

    def __init__(self, a: float, a1: float, b: float, b1: float, eps: float, delta: float):
        ok = (
            eps > 0.0
            and 0.0 < a
            and a + eps < a1
            and a1 + eps < 1.0
            and 1.0 < b
            and b + eps < b1
            and b1 + eps < 2.0
        )
        if not ok:
            raise GeometryInvalid(
                f"invalid corner geometry a={a}, a1={a1}, b={b}, b1={b1}, eps={eps}"
            )
        self.a, self.a1, self.b, self.b1 = float(a), float(a1), float(b), float(b1)
        self.eps = float(eps)
        self.delta = float(delta)


def _hat_raster(grid: Grid1D, lo: float, hi: float) -> np.ndarray:
    """Nodal values reproducing the indicator of [lo, hi] under trapezoid.

    Projects the indicator onto the nodal hat functions and divides by
    the trapezoid weights; because the hats partition unity, the
    trapezoid integral of the result equals hi - lo exactly.
    """
    h = grid.h

    def ramp(z):
        # integral of the unit hat from -inf to z (support [-h, h])
        z = np.clip(z, -h, h)
        return np.where(z <= 0.0, (z + h) ** 2 / (2.0 * h), h - (h - z) ** 2 / (2.0 * h))

    overlap = ramp(hi - grid.nodes) - ramp(lo - grid.nodes)
    w = np.full(grid.n, h)
    w[0] = w[-1] = 0.5 * h
    return overlap / w


def perturbation_field(pert: CornerPerturbation, gx: Grid1D, gy: Grid1D) -> np.ndarray:
    ux = _hat_raster(gx, pert.a, pert.a + pert.eps) - _hat_raster(
        gx, pert.a1, pert.a1 + pert.eps
    )
    wy = _hat_raster(gy, pert.b, pert.b + pert.eps) - _hat_raster(
        gy, pert.b1, pert.b1 + pert.eps
    )
    return pert.delta * np.outer(ux, wy)


def apply_perturbation(cand: CandidateQ, pert: CornerPerturbation) -> CandidateQ:
    """Add the rasterized perturbation; marginals are preserved to roundoff."""
    field = perturbation_field(pert, cand.q.gx, cand.q.gy)
    new_vals = cand.q.values + field
    if np.min(new_vals) < EPS_POS:
        raise PositivityViolated(
            f"perturbation drives density to {new_vals.min():.3e}"
        )
    q_new = Density2D(cand.q.gx, cand.q.gy, new_vals)
    return CandidateQ(
        q_new,
        cand.f1,
        cand.f2_tilde,
        marginal_tol=max(cand.marginal_tol, cand.max_marginal_error + 1e-10),
        floored_mass=cand.floored_mass,
    )


# ---------------------------------------------------------------------------
# coupling reconstruction


def reconstruct_coupling(
    inst: Instance, cand: CandidateQ, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Map points of Z to coupled pairs (X, X~).

    For Z = (x, y) distributed as the candidate, X matches the
    conditional law of ``f`` in its second coordinate and X~ matches the
    conditional law of ``f~`` in its first, through equal conditional
    ranks under the candidate.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, y = pts[:, 0], pts[:, 1]
    if np.any(~cand.q.gx.contains(x)) or np.any(~cand.q.gy.contains(y)):
        raise OutOfRange("reconstruction point outside [0,1] x [1,2]")
    cq_x = ConditionalQuantile(cand.q, FIRST_GIVEN_SECOND)
    cq_y = ConditionalQuantile(cand.q, SECOND_GIVEN_FIRST)
    s = cq_x.cond_cdf(x, y)
    xt = inst.cq_G1_tilde.quantile(s, y)
    t = cq_y.cond_cdf(y, x)
    x2 = inst.cq_G2.quantile(t, x)
    X = np.column_stack([x, x2])
    Xt = np.column_stack([xt, y])
    return X, Xt


def sample_candidate(cand: CandidateQ, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from the candidate by conditional inversion."""
    my = marginal(cand.q, "y")
    cq_x = ConditionalQuantile(cand.q, FIRST_GIVEN_SECOND)
    u = rng.random(n)
    v = rng.random(n)
    y = my.quantile_at(u)
    x = cq_x.quantile(v, y)
    return np.column_stack([x, y])
