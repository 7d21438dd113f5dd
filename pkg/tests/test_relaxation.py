import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import batch_outputs, batch_pre_activations, grid_points, random_box
from relusplit.lp import LinearProgram, Sense, certificate_residuals
from relusplit.network import InputBox, ReluNetwork, random_network
from relusplit.relaxation import (BoundsTable, box_polytope, build_polytope,
                                  coefficients_from_bounds, compute_bounds, envelope,
                                  extend_polytope, is_exact, output_bounds, output_polytope)


def net_121():
    return ReluNetwork([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])],
                       [np.zeros(2), np.zeros(1)])


# -- envelope ------------------------------------------------------------------


@given(st.floats(-50, 50), st.floats(0.0, 50))
@settings(max_examples=200, deadline=None)
def test_envelope_is_valid_on_grid(l, width):
    u = l + width
    c, d, lc, uc, unstable = envelope([l], [u])
    ts = np.linspace(l, u, 101)
    relu = np.maximum(ts, 0.0)
    assert np.all(relu <= c[0] * ts + d[0] + 1e-9 * (1 + abs(l) + abs(u)))
    assert lc[0] <= 0.0 <= uc[0]
    if unstable[0]:
        # c = u / (u - l) may round to exactly 0 or 1 when |l| or |u| is tiny
        assert 0.0 <= c[0] <= 1.0 and d[0] >= 0.0


@pytest.mark.parametrize("l,u,c,d,unstable", [
    (-1.0, 3.0, 0.75, 0.75, True),
    (0.5, 2.0, 1.0, 0.0, False),     # clamped to (0, 2): stable active
    (-2.0, -1.0, 0.0, 0.0, False),   # clamped to (-2, 0): stable inactive
    (0.0, 0.0, 1.0, 0.0, False),     # degenerate, midpoint 0 counts as active
])
def test_envelope_coefficients(l, u, c, d, unstable):
    s, i, _, _, un = envelope([l], [u])
    assert s[0] == pytest.approx(c) and i[0] == pytest.approx(d) and un[0] == unstable


# -- polytope structure ----------------------------------------------------------


def test_box_polytope():
    poly = box_polytope(InputBox(np.zeros(2), np.ones(2)))
    assert poly.A.shape == (4, 2)
    assert np.allclose(poly.A, np.vstack([np.eye(2), -np.eye(2)]))
    assert poly.b.tolist() == [1.0, 1.0, 0.0, 0.0]
    assert poly.depth == 1


def test_second_polytope_block_structure(rng):
    net = random_network([2, 3, 2], rng)
    box = InputBox(-np.ones(2), np.ones(2))
    _, coeffs = compute_bounds(net, box)
    poly = build_polytope(net, box, coeffs, 2)
    assert poly.A.shape == (4 + 9, 5)
    W, b = net.weights[0], net.biases[0]
    D, d = np.diag(coeffs.slopes[0]), coeffs.intercepts[0]
    expected = np.block([
        [np.vstack([np.eye(2), -np.eye(2)]), np.zeros((4, 3))],
        [np.zeros((3, 2)), -np.eye(3)],
        [W, -np.eye(3)],
        [-D @ W, np.eye(3)],
    ])
    assert np.allclose(poly.A, expected)
    assert np.allclose(poly.b, np.concatenate([box.bias, np.zeros(3), -b, D @ b + d]))
    blk = poly.blocks[0]
    assert (blk.nonneg, blk.lower, blk.upper) == (slice(4, 7), slice(7, 10), slice(10, 13))


def test_row_and_column_counts(rng):
    net = random_network([3, 4, 5, 6, 2], rng)
    box = random_box(rng, 3)
    _, coeffs = compute_bounds(net, box)
    for j in range(1, 5):
        poly = build_polytope(net, box, coeffs, j)
        widths = net.widths[:j]
        assert poly.A.shape == (2 * 3 + 3 * sum(widths[1:]), sum(widths))


def test_build_polytope_needs_coefficients(rng):
    net = random_network([2, 3, 3, 1], rng)
    box = random_box(rng, 2)
    _, coeffs = compute_bounds(net, box)
    partial = coefficients_from_bounds(coeffs.lower[:1], coeffs.upper[:1])
    with pytest.raises(ValueError):
        build_polytope(net, box, partial, 3)


def test_feasible_points_satisfy_relu_relaxation(rng):
    net = random_network([2, 4, 3, 1], rng)
    box = random_box(rng, 2)
    bounds, coeffs = compute_bounds(net, box)
    # every LP optimum is a feasible point of the relaxation; check it layer by layer
    for layer, poly in enumerate(bounds.polytopes):
        for sol in bounds.min_solutions[layer] + bounds.max_solutions[layer]:
            z = sol.primal
            for j in range(len(poly.blocks)):
                prev = z[poly.block_columns(j)]
                cur = z[poly.block_columns(j + 1)]
                zhat = net.weights[j] @ prev + net.biases[j]
                assert np.all(cur >= -1e-9)
                assert np.all(cur >= zhat - 1e-9)
                assert np.all(cur <= coeffs.slopes[j] * zhat + coeffs.intercepts[j] + 1e-9)


def test_real_trajectories_are_feasible(rng):
    net = random_network([3, 5, 5, 2], rng)
    box = random_box(rng, 3)
    bounds, coeffs = compute_bounds(net, box)
    poly = output_polytope(net, box, bounds, coeffs)
    for x in box.sample(rng, 200):
        point = [x] + [np.maximum(p, 0.0) for p in batch_pre_activations(net, x[None])]
        point = np.concatenate([np.ravel(p) for p in point])
        assert poly.contains(point, tol=1e-9)
        assert np.allclose(poly.output(point), batch_outputs(net, x[None])[0])


# -- compute_bounds --------------------------------------------------------------


def test_identity_first_layer_bounds():
    net = ReluNetwork([np.eye(2), np.ones((1, 2))], [np.zeros(2), np.zeros(1)])
    bounds, _ = compute_bounds(net, InputBox(np.array([-1.0, -1.0]), np.array([2.0, 2.0])))
    assert bounds.lower[0].tolist() == [-1.0, -1.0]
    assert bounds.upper[0].tolist() == [2.0, 2.0]


def test_one_two_one_bounds():
    bounds, _ = compute_bounds(net_121(), InputBox(np.array([-1.0]), np.array([1.0])))
    assert bounds.lower[0].tolist() == [-1.0, -1.0]
    assert bounds.upper[0].tolist() == [1.0, 1.0]


def test_soundness_by_sampling(rng):
    for _ in range(10):
        net = random_network([2, 6, 6, 2], rng)
        box = random_box(rng, 2)
        bounds, _ = compute_bounds(net, box)
        xs = box.sample(rng, 10_000)
        for j, pre in enumerate(batch_pre_activations(net, xs)):
            assert np.all(pre >= bounds.lower[j] - 1e-6)
            assert np.all(pre <= bounds.upper[j] + 1e-6)


def test_layer_two_bounds_contain_grid_optimum(rng):
    for _ in range(10):
        net = random_network([2, 5, 4, 1], rng)
        box = random_box(rng, 2)
        bounds, _ = compute_bounds(net, box)
        pre = batch_pre_activations(net, grid_points(box, 201))[1]
        assert np.all(pre.min(axis=0) >= bounds.lower[1] - 1e-9)
        assert np.all(pre.max(axis=0) <= bounds.upper[1] + 1e-9)


def test_first_layer_bounds_are_exact(rng):
    net = random_network([3, 5, 1], rng)
    box = random_box(rng, 3)
    bounds, _ = compute_bounds(net, box)
    pre = batch_pre_activations(net, box.corners())[0]
    assert np.allclose(bounds.lower[0], pre.min(axis=0))
    assert np.allclose(bounds.upper[0], pre.max(axis=0))


def test_presolve_matches_full_lp_and_certificates(rng):
    for _ in range(10):
        net = random_network([3, 5, 5, 4, 1], rng)
        box = random_box(rng, 3)
        fast, _ = compute_bounds(net, box)
        slow, _ = compute_bounds(net, box, presolve=False)
        for a, b in zip(fast.lower + fast.upper, slow.lower + slow.upper):
            assert np.allclose(a, b, atol=1e-9)
        # lifted solutions certify optimality on the full polytope
        for j, poly in enumerate(fast.polytopes):
            for k in range(len(fast.lower[j])):
                c = np.zeros(poly.A.shape[1])
                c[poly.last_columns] = net.weights[j][k]
                for sense, sols in ((Sense.MINIMIZE, fast.min_solutions),
                                    (Sense.MAXIMIZE, fast.max_solutions)):
                    r = certificate_residuals(LinearProgram(c, poly.A, poly.b, sense), sols[j][k])
                    assert max(r.values()) <= 1e-7


def test_highs_backend_agrees(rng):
    net = random_network([3, 5, 5, 1], rng)
    box = random_box(rng, 3)
    ours, _ = compute_bounds(net, box)
    ref, _ = compute_bounds(net, box, backend="highs", presolve=False)
    for a, b in zip(ours.lower + ours.upper, ref.lower + ref.upper):
        assert np.allclose(a, b, atol=1e-7)


def test_bounds_are_deterministic(rng):
    net = random_network([3, 6, 6, 2], rng)
    box = random_box(rng, 3)
    a, _ = compute_bounds(net, box)
    b, _ = compute_bounds(net, box)
    for x, y in zip(a.lower + a.upper, b.lower + b.upper):
        assert np.array_equal(x, y)


def test_zero_width_box(rng):
    net = random_network([2, 4, 1], rng)
    x = np.array([0.3, -0.2])
    bounds, _ = compute_bounds(net, InputBox(x, x))
    pre = batch_pre_activations(net, x[None])[0][0]
    assert np.allclose(bounds.lower[0], pre) and np.allclose(bounds.upper[0], pre)


def test_box_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        compute_bounds(random_network([2, 3, 1], rng), InputBox(np.zeros(3), np.ones(3)))


def test_bounds_table_json(rng):
    net = random_network([2, 3, 1], rng)
    bounds, _ = compute_bounds(net, random_box(rng, 2))
    rows = json.loads(bounds.to_json())
    assert len(rows) == 3 and {"layer", "node", "l", "u", "stability"} <= set(rows[0])


# -- exactness and output polytope -----------------------------------------------


def test_is_exact_examples():
    assert is_exact([(np.array([0.0, -2.0]), np.array([1.0, 0.0]))])
    assert not is_exact([(np.array([-0.1]), np.array([0.1]))])
    assert is_exact(BoundsTable())


def test_identity_output_polytope_is_box():
    net = ReluNetwork([np.eye(2)], [np.zeros(2)])
    box = InputBox(np.zeros(2), np.ones(2))
    bounds, coeffs = compute_bounds(net, box)
    poly = output_polytope(net, box, bounds, coeffs)
    assert np.allclose(poly.A, box.constraint_matrix()) and np.allclose(poly.b, box.bias)
    lo, hi = output_bounds(poly)
    assert lo.tolist() == [0.0, 0.0] and hi.tolist() == [1.0, 1.0]


def test_abs_net_output_interval_matches_grid():
    net = net_121()
    box = InputBox(np.array([0.25]), np.array([1.0]))     # exact: one node on, one off
    bounds, coeffs = compute_bounds(net, box)
    assert is_exact(bounds)
    lo, hi = output_bounds(output_polytope(net, box, bounds, coeffs))
    ys = batch_outputs(net, grid_points(box, 1001))
    assert lo[0] == pytest.approx(ys.min(), abs=1e-6) and hi[0] == pytest.approx(ys.max(), abs=1e-6)


def test_output_polytope_encloses_image(rng):
    net = random_network([2, 5, 5, 3], rng)
    box = random_box(rng, 2)
    bounds, coeffs = compute_bounds(net, box)
    lo, hi = output_bounds(output_polytope(net, box, bounds, coeffs))
    ys = batch_outputs(net, grid_points(box, 101))
    assert np.all(ys >= lo - 1e-6) and np.all(ys <= hi + 1e-6)


def test_halving_never_widens_outputs(rng):
    for _ in range(10):
        net = random_network([2, 5, 5, 2], rng)
        box = random_box(rng, 2)
        b, c = compute_bounds(net, box)
        lo, hi = output_bounds(output_polytope(net, box, b, c))
        for axis in range(2):
            for child in box.bisect(axis)[1:]:
                cb, cc = compute_bounds(net, child)
                clo, chi = output_bounds(output_polytope(net, child, cb, cc))
                assert np.all(clo >= lo - 1e-7) and np.all(chi <= hi + 1e-7)


def test_extend_polytope_shapes():
    poly = box_polytope(InputBox(np.zeros(1), np.ones(1)))
    ext = extend_polytope(poly, np.array([[2.0], [-1.0]]), np.zeros(2), np.ones(2), np.zeros(2))
    assert ext.A.shape == (2 + 6, 3) and ext.widths == (1, 2)
    assert ext.last_columns == slice(1, 3)
