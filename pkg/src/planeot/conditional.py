"""Conditional CDFs of a planar density and their inverse (quantile) maps.

For a density ``d(x, y)`` the two families are

    F1(x | y) = (1 / m2(y)) * integral of d(u, y) for u from the lower
                x-edge to x,          inverted in x at fixed y;
    F2(y | x) = (1 / m1(x)) * integral of d(x, v) for v from the lower
                y-edge to y,          inverted in y at fixed x;

with ``m1``, ``m2`` the axis marginals. Strict positivity of ``d`` makes
both strictly increasing in their first argument, so the inverse maps
(quantiles) exist. Under trapezoid quadrature every conditional CDF is
piecewise linear along its inverted axis, so quantile evaluation is
exact for the discrete model: bracket the level, then solve the linear
piece.

All evaluators accept scalars or broadcastable arrays and are pure.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateDensity, OutOfRange
from .grids import (
    EPS_POS,
    Density2D,
    Marginal1D,
    ScalarField2D,
    bilinear,
    cumtrapz1d,
    marginal,
)

FIRST_GIVEN_SECOND = "first_given_second"
SECOND_GIVEN_FIRST = "second_given_first"

# Levels may leave [0, 1] by at most this much before it is an error.
LEVEL_CLAMP_TOL = 1e-9


class ConditionalQuantile:
    """Evaluator for one conditional-CDF family of a density and its inverse."""

    def __init__(self, source: Density2D, which: str):
        if which not in (FIRST_GIVEN_SECOND, SECOND_GIVEN_FIRST):
            raise ValueError(f"unknown conditioning mode {which!r}")
        self.source = source
        self.which = which
        if which == FIRST_GIVEN_SECOND:
            self._inv_axis = 0
            self.inv_grid = source.gx
            self.cond_grid = source.gy
            self.marginal = marginal(source, "y")
        else:
            self._inv_axis = 1
            self.inv_grid = source.gy
            self.cond_grid = source.gx
            self.marginal = marginal(source, "x")
        raw = cumtrapz1d(source.values, self.inv_grid.h, axis=self._inv_axis)
        line_mass = np.take(raw, -1, axis=self._inv_axis)
        # normalize each conditioning line so the CDF ends exactly at 1
        table = raw / np.expand_dims(line_mass, self._inv_axis)
        self.cdf_table = ScalarField2D(source.gx, source.gy, table)
        # table transposed to (inverted axis, conditioning axis) for inversion
        self._tbl = np.ascontiguousarray(
            table if self._inv_axis == 0 else table.T
        )

    # -- forward -----------------------------------------------------------

    def cond_cdf(self, primary, conditioning):
        """Conditional CDF value at ``primary`` given ``conditioning``; in [0, 1]."""
        if self._inv_axis == 0:
            out = bilinear(self.cdf_table, primary, conditioning)
        else:
            out = bilinear(self.cdf_table, conditioning, primary)
        return np.clip(out, 0.0, 1.0)

    # -- inverse -----------------------------------------------------------

    def _check_levels(self, s: np.ndarray) -> np.ndarray:
        if np.any(s < -LEVEL_CLAMP_TOL) or np.any(s > 1.0 + LEVEL_CLAMP_TOL):
            bad = s[(s < -LEVEL_CLAMP_TOL) | (s > 1.0 + LEVEL_CLAMP_TOL)]
            raise OutOfRange(
                f"quantile level {np.atleast_1d(bad).ravel()[0]!r} outside [0, 1]"
            )
        return np.clip(s, 0.0, 1.0)

    def _profiles(self, cond: np.ndarray) -> np.ndarray:
        """Per-query CDF profiles along the inverted axis, shape (n_inv, N)."""
        cg = self.cond_grid
        if not np.all(cg.contains(cond)):
            raise OutOfRange("conditioning value outside the grid domain")
        t = np.clip((cond - cg.lo) / cg.h, 0.0, cg.n - 1.0)
        j = np.minimum(t.astype(int), cg.n - 2)
        w = t - j
        return self._tbl[:, j] * (1.0 - w) + self._tbl[:, j + 1] * w

    def quantile(self, s, conditioning):
        """Inverse conditional CDF: the point where cond_cdf reaches level ``s``."""
        s_in, c_in = np.broadcast_arrays(
            np.asarray(s, dtype=float), np.asarray(conditioning, dtype=float)
        )
        shape = s_in.shape
        sq = self._check_levels(s_in.ravel())
        prof = self._profiles(c_in.ravel())
        n = self.inv_grid.n
        idx = np.clip((prof <= sq[None, :]).sum(axis=0) - 1, 0, n - 2)
        cols = np.arange(sq.size)
        c0 = prof[idx, cols]
        c1 = prof[idx + 1, cols]
        frac = (sq - c0) / np.maximum(c1 - c0, 1e-300)
        v = self.inv_grid.nodes[idx] + np.clip(frac, 0.0, 1.0) * self.inv_grid.h
        v = v.reshape(shape)
        return v if shape else float(v)

    def quantile_ds(self, s, conditioning):
        """Derivative of the quantile in its level argument; strictly positive."""
        g, c = np.broadcast_arrays(
            np.asarray(self.quantile(s, conditioning), dtype=float),
            np.asarray(conditioning, dtype=float),
        )
        dens = self._density_at(g, c)
        marg = self.marginal.density_at(c)
        out = marg / dens
        return out if np.ndim(out) else float(out)

    def quantile_dcond(self, s, conditioning):
        """Derivative of the quantile in the conditioning argument.

        Implicit differentiation of ``F(G, c) = s``: the CDF is differenced
        in the conditioning direction (step = conditioning grid spacing,
        one-sided second order at the domain edges), the primary-direction
        derivative is the conditional density at the point.
        """
        s_in, c_in = np.broadcast_arrays(
            np.asarray(s, dtype=float), np.asarray(conditioning, dtype=float)
        )
        shape = s_in.shape
        g = np.asarray(self.quantile(s_in, c_in), dtype=float).ravel()
        c = c_in.ravel().astype(float)
        cg = self.cond_grid
        h = cg.h
        lo_side = c - h < cg.lo - 1e-12
        hi_side = c + h > cg.hi + 1e-12
        mid = ~(lo_side | hi_side)
        dF = np.empty_like(c)
        if np.any(mid):
            dF[mid] = (
                self.cond_cdf(g[mid], c[mid] + h) - self.cond_cdf(g[mid], c[mid] - h)
            ) / (2.0 * h)
        if np.any(lo_side):
            cl = c[lo_side]
            dF[lo_side] = (
                -3.0 * self.cond_cdf(g[lo_side], cl)
                + 4.0 * self.cond_cdf(g[lo_side], cl + h)
                - self.cond_cdf(g[lo_side], cl + 2.0 * h)
            ) / (2.0 * h)
        if np.any(hi_side):
            ch = c[hi_side]
            dF[hi_side] = (
                3.0 * self.cond_cdf(g[hi_side], ch)
                - 4.0 * self.cond_cdf(g[hi_side], ch - h)
                + self.cond_cdf(g[hi_side], ch - 2.0 * h)
            ) / (2.0 * h)
        dens = self._density_at(g, c)
        marg = np.asarray(self.marginal.density_at(c), dtype=float)
        out = (-dF * marg / dens).reshape(shape)
        return out if shape else float(out)

    def ellipticity_coefficient(self, s, conditioning):
        """quantile_ds divided by the conditioning marginal: 1 / d(G, c)."""
        ds = np.asarray(self.quantile_ds(s, conditioning), dtype=float)
        marg = np.asarray(self.marginal.density_at(conditioning), dtype=float)
        out = ds / marg
        return out if np.ndim(out) else float(out)

    def _density_at(self, g: np.ndarray, c: np.ndarray) -> np.ndarray:
        if self._inv_axis == 0:
            dens = bilinear(self.source, g, c)
        else:
            dens = bilinear(self.source, c, g)
        dens = np.asarray(dens, dtype=float)
        if np.any(dens < EPS_POS):
            raise DegenerateDensity(
                f"density {dens.min()!r} below the positivity floor"
            )
        return dens


def ellipticity_margin(
    cq_tilde_1: ConditionalQuantile,
    cq_2: ConditionalQuantile,
    n_levels: int | None = None,
) -> float:
    """Empirical lower bound of the two elliptic coefficient fields.

    Scans ``1/f~(G~(1, s, y), y)`` and ``1/f(x, G(2, x, t))`` over a level
    grid times every conditioning node and returns the minimum. A
    non-positive return is a valid, alarming answer; callers decide how
    loudly to warn.
    """
    lo = np.inf
    for cq in (cq_tilde_1, cq_2):
        n = n_levels or cq.inv_grid.n
        levels = np.linspace(0.0, 1.0, n)
        conds = cq.cond_grid.nodes
        S, C = np.meshgrid(levels, conds, indexing="ij")
        coeff = cq.ellipticity_coefficient(S, C)
        lo = min(lo, float(np.min(coeff)))
    return lo
