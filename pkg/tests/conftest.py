"""Shared generators and fixtures.

``random_distribution`` builds small finite laws with guard rails: every
covariate stratum keeps untreated mass (so conditional means and
propensities exist), at least one atom is treated, and atom masses are
floored away from zero so mixture paths stay well inside the simplex.
Hypothesis tests drive it through drawn seeds, which keeps the cases
replayable from a single integer.
"""

import math

import numpy as np
import pytest
from hypothesis import settings

from eifkit import FiniteDistribution, FittedNuisance, g_of, q_of

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

W_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)
Y_GRID = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


def random_distribution(rng, max_strata=4, d=1, max_y_per_stratum=2,
                        treated=True, min_count=5, max_count=15):
    """Small random finite law; masses are ratios of bounded integers.

    Integer weights in [min_count, max_count] keep every atom mass above
    roughly 1/(3 * n_atoms), which the derivative check needs so that the
    mixture path stays far from the simplex boundary.
    """
    n_strata = int(rng.integers(1, max_strata + 1))
    strata = rng.choice(len(W_GRID), size=n_strata, replace=False)
    atoms = []
    treated_added = False
    for s in strata:
        w = tuple(W_GRID[s] + 0.25 * j for j in range(d))
        n_y = int(rng.integers(1, max_y_per_stratum + 1))
        ys = rng.choice(len(Y_GRID), size=n_y, replace=False)
        for yi in ys:
            atoms.append([(w, 0, Y_GRID[yi]), 0])
        if treated and rng.random() < 0.7:
            yi = int(rng.integers(0, len(Y_GRID)))
            atoms.append([(w, 1, Y_GRID[yi]), 0])
            treated_added = True
    if treated and not treated_added:
        w, _, y = atoms[0][0]
        atoms.append([(w, 1, y), 0])
    counts = rng.integers(min_count, max_count + 1, size=len(atoms))
    total = float(counts.sum())
    return FiniteDistribution(
        [(key, int(c) / total) for (key, _), c in zip(atoms, counts)]
    )


def lookup_fn(table):
    """Vectorized exact-key lookup predictor over a support table."""
    def fn(w):
        arr = np.asarray(w, dtype=float)
        single = arr.ndim == 1
        out = np.array([table[tuple(float(x) for x in row)]
                        for row in np.atleast_2d(arr)])
        return float(out[0]) if single else out
    return fn


def perturbed_nuisance(dist, rng, q_scale=0.5, g_scale=0.2,
                       exact_q=False, exact_g=False):
    """Nuisance pair equal to the truth plus bounded stratum-wise noise.

    The perturbed propensity is clipped to [0.05, 0.95], so the remainder
    identities are exercised away from the boundary.
    """
    qmap, gmap = {}, {}
    for w in dist.w_support:
        g = g_of(dist, w)
        q = q_of(dist, w)
        qmap[w] = q if exact_q else q + q_scale * float(rng.standard_normal())
        if exact_g:
            gmap[w] = g
        else:
            gmap[w] = float(np.clip(g + g_scale * float(rng.uniform(-1, 1)),
                                    0.05, 0.95))
    return FittedNuisance(lookup_fn(qmap), lookup_fn(gmap))


def direction_from(dist, rng, max_atoms=6):
    """Random direction law supported on a subset of ``dist``'s atoms."""
    k = int(rng.integers(1, min(max_atoms, len(dist.atoms)) + 1))
    picks = rng.choice(len(dist.atoms), size=k, replace=False)
    counts = rng.integers(5, 16, size=k)
    total = float(counts.sum())
    return FiniteDistribution(
        [(dist.atoms[i][0], int(c) / total) for i, c in zip(picks, counts)]
    )


@pytest.fixture
def four_atom():
    """Uniform law on {(w,a,y)} = {(0,0,0),(0,1,0),(1,0,1),(1,1,1)}; psi = theta = 1/2."""
    return FiniteDistribution(
        [((0.0, 0, 0.0), 0.25), ((0.0, 1, 0.0), 0.25),
         ((1.0, 0, 1.0), 0.25), ((1.0, 1, 1.0), 0.25)]
    )


@pytest.fixture
def five_atom():
    """Hand-computed reference law.

    q(0) = 2, q(1) = 5, g(0) = 0.8, g(1) = 0.6, Pr(A=1) = 0.3,
    psi = 3.5, theta = 4.0.
    """
    return FiniteDistribution(
        [((0.0, 0, 1.0), 0.2), ((0.0, 0, 3.0), 0.2), ((0.0, 1, 9.0), 0.1),
         ((1.0, 0, 5.0), 0.3), ((1.0, 1, 7.0), 0.2)]
    )


def assert_close(a, b, tol, label=""):
    assert math.isfinite(a) and math.isfinite(b), f"{label}: non-finite {a}, {b}"
    assert abs(a - b) <= tol, f"{label}: |{a} - {b}| = {abs(a - b)} > {tol}"
