import numpy as np
import pytest

import planeot as po
from planeot.errors import NegativeMassExcessive, QuantileRangeError
from planeot.grids import Grid1D, ScalarField2D
from planeot.pde import (
    DistributionF,
    PdeCoefficients,
    dirichlet_boundary,
    initial_iterate,
    residual_window_max,
)


def field(gx, gy, fn):
    X, Y = np.meshgrid(gx.nodes, gy.nodes, indexing="ij")
    return ScalarField2D(gx, gy, fn(X, Y))


def ones_coeffs(gx, gy, c):
    n, m = gx.n, gy.n
    one = ScalarField2D(gx, gy, np.ones((n, m)))
    return PdeCoefficients(one, one, ScalarField2D(gx, gy, np.full((n, m), float(c))))


class TestBoundary:
    def test_uniform_boundary_curves(self, instances):
        inst = instances("uniform", 33)
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        top, right = dirichlet_boundary(inst, gx, gy)
        assert np.allclose(top, gx.nodes, atol=1e-12)
        assert np.allclose(right, gy.nodes - 1.0, atol=1e-12)

    def test_initial_iterate_ratios_admissible(self, instances):
        # the product start keeps both derivative ratios inside [0, 1]
        # even for strongly non-uniform marginals
        inst = instances("product-gauss", 65)
        gx, gy = Grid1D(0, 1, 65), Grid1D(1, 2, 65)
        F0 = initial_iterate(inst, gx, gy)
        po.assemble_coefficients(inst, F0, ratio_guard=0.05)

    def test_corner_is_one(self, instances):
        inst = instances("bilinear", 33)
        F0 = initial_iterate(inst, Grid1D(0, 1, 33), Grid1D(1, 2, 33))
        assert abs(F0.values[-1, -1] - 1.0) < 1e-8


class TestAssemble:
    def test_uniform_exact_coefficients(self, instances):
        inst = instances("uniform", 33)
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        F = DistributionF(field(gx, gy, lambda X, Y: X * (Y - 1.0)))
        coeffs = po.assemble_coefficients(inst, F)
        assert np.max(np.abs(coeffs.A.values - 1.0)) < 1e-12
        assert np.max(np.abs(coeffs.B.values - 1.0)) < 1e-12
        assert np.max(np.abs(coeffs.C.values)) < 1e-12

    def test_product_solution_residual_order(self, instances):
        # plug the exact product distribution into the discrete operator
        errs = []
        for n in (33, 65):
            inst = instances("product-gauss", n)
            gx, gy = Grid1D(0, 1, n), Grid1D(1, 2, n)
            top, right = dirichlet_boundary(inst, gx, gy)
            F = DistributionF(ScalarField2D(gx, gy, np.outer(top, right)))
            coeffs = po.assemble_coefficients(inst, F)
            from planeot.grids import _d2

            lap = coeffs.A.values * _d2(F.values, gx.h, 0) + coeffs.B.values * _d2(
                F.values, gy.h, 1
            )
            res = ScalarField2D(gx, gy, lap - coeffs.C.values)
            errs.append(residual_window_max(res, 0.1))
        assert errs[0] / errs[1] > 2.5

    def test_cold_start_positive_coefficients(self, instances):
        for preset in ("uniform", "product-gauss", "bilinear"):
            inst = instances(preset, 33)
            F0 = initial_iterate(inst, Grid1D(0, 1, 33), Grid1D(1, 2, 33))
            coeffs = po.assemble_coefficients(inst, F0)
            assert coeffs.margin > 0.0
            assert np.all(np.isfinite(coeffs.C.values))

    def test_ratio_guard_trips(self, instances):
        inst = instances("uniform", 33)
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        F = DistributionF(field(gx, gy, lambda X, Y: 2.0 * X * (Y - 1.0)))
        with pytest.raises(QuantileRangeError):
            po.assemble_coefficients(inst, F, ratio_guard=0.05)


class TestLinearSolve:
    def test_harmonic_bilinear_exact(self):
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        Fb = field(gx, gy, lambda X, Y: X * (Y - 1.0))
        sol = po.linear_elliptic_solve(ones_coeffs(gx, gy, 0.0), DistributionF(Fb))
        assert np.max(np.abs(sol.values - Fb.values)) < 1e-10

    def test_quadratic_manufactured_exact(self):
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        Fm = field(gx, gy, lambda X, Y: X**2 + (Y - 1.0) ** 2)
        sol = po.linear_elliptic_solve(
            ones_coeffs(gx, gy, 4.0), DistributionF(Fm), linear_tol=1e-12
        )
        assert np.max(np.abs(sol.values - Fm.values)) < 1e-10

    def test_sine_manufactured_order(self):
        errs = []
        for n in (33, 65):
            gx, gy = Grid1D(0, 1, n), Grid1D(1, 2, n)
            X, Y = np.meshgrid(gx.nodes, gy.nodes, indexing="ij")
            Fs = np.sin(np.pi * X) * np.sin(np.pi * (Y - 1.0))
            one = ScalarField2D(gx, gy, np.ones((n, n)))
            rhs = ScalarField2D(gx, gy, -2.0 * np.pi**2 * Fs)
            sol = po.linear_elliptic_solve(
                PdeCoefficients(one, one, rhs),
                DistributionF(ScalarField2D(gx, gy, np.zeros((n, n)))),
                linear_tol=1e-12,
            )
            errs.append(np.max(np.abs(sol.values - Fs)))
        assert np.log2(errs[0] / errs[1]) > 1.9


class TestPicard:
    def test_uniform_fast_convergence(self, instances):
        inst = instances("uniform", 33)
        F, rep = po.picard_solve(inst, po.SolverConfig(nx=33, ny=33, omega=1.0))
        assert rep.converged and rep.iterations <= 3
        X, Y = np.meshgrid(F.gx.nodes, F.gy.nodes, indexing="ij")
        assert np.max(np.abs(F.values - X * (Y - 1.0))) < 1e-9
        assert abs(rep.cost - 2.0) <= 1e-3

    def test_product_gauss_structure(self, solves):
        inst, F, rep, cand = solves("product-gauss", 65)
        assert rep.converged
        # X-derivative of F carries the product structure f1(x) F2~(y)
        from planeot.grids import _d1

        Fx = _d1(F.values, F.gx.h, 0)
        target = np.outer(
            inst.f1.density_at(F.gx.nodes), inst.f2_tilde.cdf_at(F.gy.nodes)
        )
        assert np.max(np.abs(Fx - target)[1:-1, 1:-1]) < 5e-3
        # recovered density tracks the product at the stencil-truncation level
        prod = np.outer(
            inst.f1.density_at(F.gx.nodes), inst.f2_tilde.density_at(F.gy.nodes)
        )
        assert np.max(np.abs(cand.q.values - prod)) < 0.05

    def test_stall_returns_partial_report(self, instances):
        inst = instances("bilinear", 33)
        cfg = po.SolverConfig(nx=33, ny=33, picard_max_iters=1)
        F, rep = po.picard_solve(inst, cfg)
        assert not rep.converged
        assert rep.iterations == 1
        assert np.isfinite(rep.final_update_norm)
        assert np.isfinite(rep.cost)

    def test_boundary_held_exactly(self, solves, instances):
        inst, F, rep, _ = solves("bilinear", 33)
        top, right = dirichlet_boundary(inst, F.gx, F.gy)
        assert np.array_equal(F.values[:, 0], np.zeros(F.gx.n))
        assert np.array_equal(F.values[0, :], np.zeros(F.gy.n))
        assert np.max(np.abs(F.values[:, -1] - top)) < 1e-14
        assert np.max(np.abs(F.values[-1, :] - right)) < 1e-14

    def test_reflection_symmetry(self, solves):
        # the uniform instance is symmetric under swapping the two axes
        inst, F, rep, _ = solves("uniform", 33)
        shifted = F.values - 0.0
        assert np.max(np.abs(shifted - shifted.T)) < 1e-10

    def test_symmetric_gaussian_pair(self):
        # when f is exchange-symmetric and f~ is its (+1,+1) shift, the
        # coupling problem maps to itself under swapping the axes, so the
        # solved distribution must be transpose-symmetric
        n = 33
        g = Grid1D(0.0, 1.0, n)
        gt = Grid1D(1.0, 2.0, n)
        prof = np.exp(-0.5 * ((g.nodes - 0.45) / 0.25) ** 2)
        from planeot.grids import Density2D, normalize

        f = normalize(Density2D(g, g, np.outer(prof, prof)))
        ft = normalize(Density2D(gt, gt, np.outer(prof, prof)))
        inst = po.build_instance(f, ft)
        F, rep = po.picard_solve(inst, po.SolverConfig(nx=n, ny=n))
        assert rep.converged
        assert np.max(np.abs(F.values - F.values.T)) < 1e-7


class TestHhResidual:
    def test_uniform_zero(self, instances):
        inst = instances("uniform", 33)
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        F = DistributionF(field(gx, gy, lambda X, Y: X * (Y - 1.0)))
        res = po.hh_residual(inst, F)
        assert np.max(np.abs(res.values)) < 1e-10

    def test_product_residual_refines(self, solves):
        vals = []
        for n in (33, 65):
            inst, F, rep, _ = solves("product-gauss", n)
            vals.append(residual_window_max(po.hh_residual(inst, F), 0.1))
        assert vals[0] / vals[1] > 2.5

    def test_wrong_field_discriminates(self, solves, instances):
        inst, F, rep, _ = solves("bilinear", 33)
        converged = residual_window_max(po.hh_residual(inst, F), 0.1)
        F0 = initial_iterate(inst, F.gx, F.gy)
        cold = residual_window_max(po.hh_residual(inst, F0), 0.1)
        assert cold > 10.0 * converged


class TestRecoverDensity:
    def test_uniform_recovers_one(self, solves):
        inst, F, rep, cand = solves("uniform", 33)
        assert np.max(np.abs(cand.q.values - 1.0)) < 1e-9

    def test_non_monotone_raises(self, instances):
        inst = instances("uniform", 33)
        gx, gy = Grid1D(0, 1, 33), Grid1D(1, 2, 33)
        bad = DistributionF(
            field(gx, gy, lambda X, Y: X * (Y - 1.0) + 0.3 * np.sin(3 * np.pi * X) * np.sin(3 * np.pi * (Y - 1)))
        )
        with pytest.raises(NegativeMassExcessive):
            po.recover_density(inst, bad)

    def test_marginals_within_tolerance(self, solves):
        inst, F, rep, cand = solves("product-gauss", 65)
        assert cand.max_marginal_error <= cand.marginal_tol

    def test_report_fields_populated(self, solves):
        _, _, rep, _ = solves("bilinear", 65)
        d = rep.as_dict()
        assert d["converged"] is True
        assert d["ellipticity_margin"] > 0.0
        assert d["monotone_violations"] == 0
        assert np.isfinite(d["hh_residual_max"])
        assert np.isfinite(d["mixed_M_residual_max"])
