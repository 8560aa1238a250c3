"""Certified brick functions: ramps, boundary-linear, cutoffs."""

import math
from fractions import Fraction

import numpy as np
import pytest

from carpetlab.geometry import SpecError, axis_reflection
from carpetlab.cellgraph import word_permutation
from carpetlab.bricks import (
    axis_projections,
    bottom_slab_mask,
    build_cutoff,
    orbit_symmetrize,
    region_coherence_report,
)
from carpetlab.spectral import dirichlet_energy, face_resistance

F = Fraction


def test_axis_projections(lab):
    spec = lab.spec
    assert axis_projections(spec, ()) == (F(0), F(1), F(1, 2))
    d = spec.digit_of_corner((F(2, 3), F(0), F(0)))
    assert axis_projections(spec, (d,)) == (F(2, 3), F(1), F(5, 6))
    a, b, _ = axis_projections(spec, (d, d, d))
    assert b - a == F(1, 27)


def test_orbit_symmetrize_bitwise(lab):
    g = lab.graph(1)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(26)
    sym = orbit_symmetrize(g, f, [axis_reflection(1), axis_reflection(2)])
    perm = word_permutation(g, axis_reflection(1))
    assert bool((sym == sym[perm]).all())  # bitwise equality


def test_harmonic_pair(lab):
    ws = lab.ws
    for m in (1, 2):
        h, hp = ws.harmonic_pair(m)
        g = ws.graph(m)
        assert h.min() >= 0 and h.max() <= 1
        # minimizer energy equals the inverse face resistance
        r = face_resistance(g).value
        assert dirichlet_energy(g, h) == pytest.approx(1.0 / r, rel=1e-8)
        # symmetry under both transverse reflections, bitwise
        for axis in (1, 2):
            perm = word_permutation(g, axis_reflection(axis))
            assert bool((h == h[perm]).all())
        # slab minimizer is pinned exactly
        assert bool((hp[bottom_slab_mask(g)] == 0.0).all())
        assert bool((hp[g.face_set(2, 1)] == 1.0).all())


def test_ramp_certificates(lab):
    ws = lab.ws
    for m in (1, 2):
        ramp = ws.ramp(m)
        assert ramp.certificates["symmetry_range_boundary"]["pass"]
        if m >= 2:
            assert ramp.certificates["recursion"]["pass"]
            assert ramp.certificates["recursion"]["checked"] > 0
            assert ramp.certificates["grid_planes"]["pass"]
            assert ramp.certificates["grid_planes"]["checked"] > 0


def test_ramp_level1_is_restricted_minimizer(lab):
    ws = lab.ws
    ramp = ws.ramp(1)
    h, _ = ws.harmonic_pair(1)
    dom = np.nonzero(ramp.domain)[0]
    for u in dom:
        assert float(ramp.exact[u]) == h[u]


def test_boundary_linear_certificates(lab):
    ws = lab.ws
    for n in (1, 2):
        fb = ws.boundary_linear(n)
        assert fb.certificates["boundary_midpoints"]["pass"]
        assert fb.certificates["sandwich"]["pass"]
        g = ws.graph(n)
        bdry = np.nonzero(g.boundary())[0]
        for u in bdry[:: max(1, len(bdry) // 40)]:
            _, _, c = axis_projections(lab.spec, g.word_of(int(u)))
            assert fb.exact[u] == c


def test_boundary_linear_coherence(lab):
    ws = lab.ws
    fb = ws.boundary_linear(2)
    rep = region_coherence_report(ws, fb)
    assert rep["max_deep_mismatch"] == 0
    # overwritten-branch mismatch stays within one overwrite span
    assert rep["max_scaled_mismatch"] <= 1.0 + 1e-9


def test_boundary_linear_energy_band(lab):
    ws = lab.ws
    ratios = []
    for n in (1, 2):
        fb = ws.boundary_linear(n)
        ratios.append(fb.energy * lab.lam(n) / 26**n)
    assert max(ratios) / min(ratios) < 3.0


def test_energy_ladder_recorded(lab):
    fb = lab.ws.boundary_linear(2)
    ladder = fb.meta["energy_ladder"]
    assert len(ladder) == 3  # seed + one entry per overwrite stage
    assert all(v > 0 for v in ladder)


def test_cutoff_certificates_all_words_n1(lab):
    ws = lab.ws
    g2 = ws.graph(2)
    for wd in range(0, 26, 5):
        brick = build_cutoff(ws, (wd,), 1, 3)
        assert brick.certificates["plateau"]["pass"]
        assert brick.certificates["support"]["pass"]
        rc = brick.certificates["resistance_lower_bound"]
        assert rc["pass"]
        if rc["resistance"] is not None:
            assert rc["bound"] <= rc["resistance"] * (1 + 1e-9)
        lo, hi = brick.certificates["plateau"]["block"]
        assert bool((brick.values[lo:hi] == 1.0).all())
        assert brick.values.min() >= 0.0 and brick.values.max() <= 1.0


def test_cutoff_support_values_zero(lab):
    ws = lab.ws
    brick = build_cutoff(ws, (0,), 1, 3)
    from carpetlab.cellgraph import neighborhood

    g1 = ws.graph(1)
    nbhd = neighborhood(g1, 0, 3)
    outside = np.repeat(~nbhd, 26)
    assert outside.any()
    assert bool((brick.values[outside] == 0.0).all())


def test_cutoff_vacuous_neighborhood(lab):
    # with the default adapted radius the level-1 neighborhood is everything:
    # the support condition holds vacuously and no resistance pairing exists
    ws = lab.ws
    brick = build_cutoff(ws, (0,), 1, 10)
    rc = brick.certificates["resistance_lower_bound"]
    assert rc["pass"] and rc["resistance"] is None


def test_cutoff_slope_increment_bound(lab):
    # between adjacent cells the clipped pieces move by at most
    # sqrt(3)/c_star times the cell diagonal; spot-check on edges
    ws = lab.ws
    brick = build_cutoff(ws, (0,), 1, 3)
    g2 = ws.graph(2)
    u = np.repeat(np.arange(g2.num_vertices), np.diff(g2.indptr))
    v = g2.indices
    diffs = np.abs(brick.values[u] - brick.values[v])
    slope = math.sqrt(3) / float(ws.c_star)
    # adjacent level-2 cells have centers within sqrt(3)*2/9; the brick's
    # profile factor adds one cell of slack
    bound = slope * (math.sqrt(3) * 2 / 9 + 1 / 9) + 1e-9
    assert diffs.max() <= bound


def test_cutoff_energy_band_across_n(lab):
    ws = lab.ws
    vals = []
    for n in (1, 2):
        brick = build_cutoff(ws, (0,), n, 3)
        vals.append(brick.energy * lab.lam(n) / 26**n)
    assert max(vals) / min(vals) < 3.0


def test_cutoff_word_required(lab):
    with pytest.raises(SpecError):
        build_cutoff(lab.ws, (), 1, 3)
