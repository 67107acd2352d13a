import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linprog

import planeot as po
from planeot.errors import SizeGuard
from planeot.grids import Density2D, Grid1D
from planeot.oracle import _fd_gradient, _project_marginals


def uniform_density(n=17, lo=0.0):
    g = Grid1D(lo, lo + 1.0, n)
    return po.normalize(Density2D(g, g, np.ones((n, n))))


def bilinear_density(n=33):
    g = Grid1D(0.0, 1.0, n)
    X, Y = np.meshgrid(g.nodes, g.nodes, indexing="ij")
    return po.normalize(Density2D(g, g, 1.0 + 0.5 * (2 * X - 1) * (2 * Y - 1)))


class TestAtomize:
    def test_uniform_two_by_two(self):
        am = po.atomize(uniform_density(), 2, 2)
        assert np.allclose(am.weights, 0.25, atol=1e-13)
        assert np.allclose(sorted(am.points[:, 0]), [0.25, 0.25, 0.75, 0.75])

    def test_weights_sum_to_one(self, rng):
        g = Grid1D(0.0, 1.0, 21)
        d = po.normalize(Density2D(g, g, 0.3 + rng.random((21, 21))))
        am = po.atomize(d, 7, 5)
        assert abs(am.weights.sum() - 1.0) < 1e-12

    def test_bilinear_cell_integrals(self):
        # integral of 1 + a(2x-1)(2y-1) over [x0,x1]x[y0,y1] has the
        # closed form below; the grid integral of the interpolant matches
        # it exactly because the density is bilinear
        d = bilinear_density(33)
        am = po.atomize(d, 4, 4)
        a = 0.5
        edges = np.linspace(0.0, 1.0, 5)

        def anti(t):  # antiderivative of (2t - 1)
            return t**2 - t

        expected = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                x0, x1 = edges[i], edges[i + 1]
                y0, y1 = edges[j], edges[j + 1]
                expected[i, j] = (x1 - x0) * (y1 - y0) + a * (anti(x1) - anti(x0)) * (
                    anti(y1) - anti(y0)
                )
        assert np.max(np.abs(am.weights.reshape(4, 4) - expected)) < 1e-10


class TestExactOt:
    def test_single_atoms(self):
        a = po.AtomizedMeasure(np.array([[0.0, 0.0]]), np.array([1.0]))
        b = po.AtomizedMeasure(np.array([[1.0, 2.0]]), np.array([1.0]))
        plan, cost = po.exact_ot(a, b)
        assert abs(cost - 5.0) < 1e-12
        assert plan.plan.shape == (1, 1)

    def test_translation_cost_two(self):
        src = po.atomize(uniform_density(17, 0.0), 16, 16)
        dst = po.atomize(uniform_density(17, 1.0), 16, 16)
        plan, cost = po.exact_ot(src, dst)
        assert abs(cost - 2.0) < 1e-9
        assert plan.dual_gap <= 1e-9 * cost + 1e-12

    def test_lp_cross_check(self):
        # independent formulation: dense transportation LP through the
        # dual-simplex path, solved to vertex optimality
        src = po.atomize(uniform_density(17, 0.0), 16, 16)
        dst = po.atomize(bilinear_density(33), 16, 16)
        plan, cost = po.exact_ot(src, dst)
        n, m = len(src.weights), len(dst.weights)
        diff = src.points[:, None, :] - dst.points[None, :, :]
        C = np.einsum("ijk,ijk->ij", diff, diff)
        A_rows = sp.kron(sp.eye(n, format="csr"), np.ones((1, m)), format="csr")
        A_cols = sp.kron(np.ones((1, n)), sp.eye(m, format="csr"), format="csr")
        res = linprog(
            C.ravel(),
            A_eq=sp.vstack([A_rows, A_cols[:-1]], format="csr"),
            b_eq=np.concatenate([src.weights, dst.weights[:-1]]),
            bounds=(0, None),
            method="highs",
        )
        assert res.status == 0
        assert abs(cost - res.fun) < 1e-9

    def test_plan_marginals(self, rng):
        g = Grid1D(0.0, 1.0, 17)
        d1 = po.normalize(Density2D(g, g, 0.3 + rng.random((17, 17))))
        g2 = Grid1D(1.0, 2.0, 17)
        d2 = po.normalize(Density2D(g2, g2, 0.3 + rng.random((17, 17))))
        src, dst = po.atomize(d1, 8, 8), po.atomize(d2, 9, 7)
        plan, _ = po.exact_ot(src, dst)
        assert np.max(np.abs(plan.plan.sum(axis=1) - src.weights)) < 1e-9
        assert np.max(np.abs(plan.plan.sum(axis=0) - dst.weights)) < 1e-9

    def test_1d_reduction(self):
        # measures on one horizontal line reduce to the 1D matcher
        xs = np.array([0.1, 0.3, 0.8])
        xt = np.array([0.2, 0.55, 0.9])
        wa = np.array([0.5, 0.3, 0.2])
        wb = np.array([0.2, 0.5, 0.3])
        src = po.AtomizedMeasure(np.column_stack([xs, np.full(3, 0.4)]), wa)
        dst = po.AtomizedMeasure(np.column_stack([xt, np.full(3, 0.4)]), wb)
        _, cost2d = po.exact_ot(src, dst)
        cost1d = po.exact_ot_1d(wa, xs, wb, xt)
        assert abs(cost2d - cost1d) < 1e-12

    def test_size_guard(self):
        pts = np.zeros((4000, 2))
        w = np.full(4000, 1.0 / 4000)
        m = po.AtomizedMeasure(pts, w)
        with pytest.raises(SizeGuard):
            po.exact_ot(m, m)

    def test_refinement_approaches_pde_cost(self, solves):
        # the discrete-transport cost converges to the minimized objective
        # as the atomization refines
        inst, F, rep, _ = solves("bilinear", 33)
        gaps = []
        for na in (8, 16):
            _, c = po.exact_ot(
                po.atomize(inst.f, na, na), po.atomize(inst.f_tilde, na, na)
            )
            gaps.append(abs(c - rep.cost))
        assert gaps[1] < gaps[0] / 2.0


class TestExactOt1d:
    def test_identical(self):
        w = np.array([0.5, 0.5])
        p = np.array([0.2, 0.8])
        assert po.exact_ot_1d(w, p, w, p) == 0.0

    def test_unit_shift(self):
        n = 50
        w = np.full(n, 1.0 / n)
        p = np.linspace(0, 1, n)
        assert abs(po.exact_ot_1d(w, p, w, p + 1.0) - 1.0) < 1e-12

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError):
            po.exact_ot_1d([0.5, 0.5], [0.8, 0.2], [0.5, 0.5], [0.2, 0.8])

    def test_triangular_vs_quantile_distance(self):
        n = 2001
        g = Grid1D(0.0, 1.0, n)
        from planeot.grids import Marginal1D

        m = Marginal1D(g, np.ones(n))
        mt = Marginal1D(g, np.maximum(2.0 * g.nodes, 1e-12))
        k2 = po.krw_1d_distance(m, mt) ** 2
        atoms = 1000
        centers = (np.arange(atoms) + 0.5) / atoms
        w_u = np.full(atoms, 1.0 / atoms)
        w_t = np.diff((np.arange(atoms + 1) / atoms) ** 2)
        c = po.exact_ot_1d(w_u, centers, w_t, centers)
        assert abs(k2 - c) / c < 0.005


class TestDirectMinimizer:
    def test_uniform_already_optimal(self, instances):
        inst = instances("uniform", 33)
        cand, val = po.minimize_objective_direct(inst, 33, 33, iters=5)
        assert abs(val - 2.0) < 1e-4

    def test_product_instance_from_nonproduct_start(self, instances):
        inst = instances("product-gauss", 33)
        gx = Grid1D(0.0, 1.0, 17)
        gy = Grid1D(1.0, 2.0, 17)
        X, Y = np.meshgrid(gx.nodes, gy.nodes, indexing="ij")
        start = np.outer(
            inst.f1.density_at(gx.nodes), inst.f2_tilde.density_at(gy.nodes)
        ) * (1.0 + 0.3 * np.sin(2 * np.pi * X) * np.sin(2 * np.pi * (Y - 1.0)))
        cand, val = po.minimize_objective_direct(inst, 17, 17, iters=40, start=start)
        optimum = (
            po.krw_1d_distance(inst.f1, inst.f1_tilde) ** 2
            + po.krw_1d_distance(inst.f2, inst.f2_tilde) ** 2
        )
        assert abs(val - optimum) / optimum < 0.01

    def test_monotone_descent(self, instances):
        inst = instances("bilinear", 33)
        from planeot.cost import product_candidate

        start_cand = product_candidate(inst)
        start_val = po.objective(inst, start_cand)
        _, val = po.minimize_objective_direct(inst, 33, 33, iters=6)
        assert val <= start_val + 1e-12

    def test_size_guard(self, instances):
        inst = instances("uniform", 33)
        with pytest.raises(SizeGuard):
            po.minimize_objective_direct(inst, 65, 65)

    def test_fd_gradient_matches_naive(self, instances):
        inst = instances("bilinear", 33)
        nx = ny = 9
        gx = Grid1D(0.0, 1.0, nx)
        gy = Grid1D(1.0, 2.0, ny)
        t1 = inst.f1.density_at(gx.nodes)
        t2 = inst.f2_tilde.density_at(gy.nodes)
        q = _project_marginals(np.outer(t1, t2), t1, t2, gx.h, gy.h)
        g_fast = _fd_gradient(inst, q, gx, gy, eps=1e-6)

        from planeot.oracle import _term1_columns, _term2_rows, _objective_from_parts

        def full_objective(vals):
            return _objective_from_parts(
                _term1_columns(inst, vals, gx, gy),
                _term2_rows(inst, vals, gx, gy),
                gx.h,
                gy.h,
            )

        base = full_objective(q)
        g_naive = np.zeros_like(q)
        for i in range(nx):
            for j in range(ny):
                bumped = q.copy()
                bumped[i, j] += 1e-6
                g_naive[i, j] = (full_objective(bumped) - base) / 1e-6
        assert np.max(np.abs(g_fast - g_naive)) < 1e-8
