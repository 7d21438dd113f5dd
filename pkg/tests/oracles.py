"""Independent reference computations used by the tests.

Nothing here calls the simplex solver or the relaxation code: LP optima come
from brute-force vertex enumeration, network outputs from a plain loop, and
images of boxes from dense grids.
"""

from __future__ import annotations

import itertools

import numpy as np

from relusplit.network import InputBox, ReluNetwork


def straight_line_forward(weights, biases, x):
    """Plain re-implementation of the layer recursion (no vectorized helpers)."""
    z = [float(v) for v in x]
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        nxt = []
        for k in range(len(b)):
            s = float(b[k])
            for t in range(len(z)):
                s += float(W[k][t]) * z[t]
            nxt.append(s if i == last else max(s, 0.0))
        z = nxt
    return np.array(z)


def vertex_enumeration(c, A, b, maximize=False, tol=1e-9):
    """Optimum of ``c.z`` over ``A z <= b`` by enumerating every basic point.

    Returns ``(value, vertex)`` or ``(None, None)`` if no vertex is feasible.
    Assumes the polytope is bounded (checked by the caller's construction).
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    m, d = A.shape
    combos = np.array(list(itertools.combinations(range(m), d)))
    M = A[combos]                      # (n, d, d)
    rhs = b[combos]
    det = np.linalg.det(M)
    ok = np.abs(det) > 1e-10
    M, rhs = M[ok], rhs[ok]
    pts = np.linalg.solve(M, rhs[..., None])[..., 0]
    scale = 1.0 + np.abs(b)
    feas = np.all(pts @ A.T - b <= tol * scale, axis=1)
    pts = pts[feas]
    if len(pts) == 0:
        return None, None
    vals = pts @ c
    k = int(np.argmax(vals) if maximize else np.argmin(vals))
    return float(vals[k]), pts[k]


def random_bounded_lp(rng, d_max=6, m_max=20):
    """Random bounded, nonempty polytope plus objective.

    The polytope is a box ``[-R, R]^d`` intersected with random halfspaces
    that keep a random interior point strictly feasible.
    """
    d = int(rng.integers(1, d_max + 1))
    extra = int(rng.integers(0, m_max - 2 * d + 1))
    R = rng.uniform(0.5, 3.0, size=d)
    x0 = rng.uniform(-0.5, 0.5, size=d) * R
    G = rng.normal(size=(extra, d))
    h = G @ x0 + rng.uniform(0.05, 1.0, size=extra)
    A = np.vstack([np.eye(d), -np.eye(d), G])
    b = np.concatenate([R, R, h])
    perm = rng.permutation(len(b))
    return rng.normal(size=d), A[perm], b[perm]


def grid_points(box: InputBox, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def batch_pre_activations(net: ReluNetwork, xs):
    """Hidden pre-activations for a batch, computed layer by layer."""
    out = []
    z = np.asarray(xs, float)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        zh = z @ np.asarray(W).T + b
        out.append(zh)
        z = np.maximum(zh, 0.0)
    return out


def batch_outputs(net: ReluNetwork, xs):
    z = np.asarray(xs, float)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = np.maximum(z @ np.asarray(W).T + b, 0.0)
    return z @ np.asarray(net.weights[-1]).T + net.biases[-1]


def in_spec(disjuncts, ys, tol=0.0):
    """Boolean mask: which outputs lie in the union of ``A y <= b``."""
    ys = np.atleast_2d(ys)
    hit = np.zeros(len(ys), dtype=bool)
    for A, b in disjuncts:
        hit |= np.all(ys @ np.asarray(A).T - b <= tol, axis=1)
    return hit


def numeric_jacobian(net: ReluNetwork, x, h=1e-7):
    """Central-difference Jacobian (away from kinks it is exact up to rounding)."""
    x = np.asarray(x, float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((batch_outputs(net, x + e) - batch_outputs(net, x - e))[0] / (2 * h))
    return np.stack(cols, axis=1)


def analytic_jacobian(net: ReluNetwork, x):
    """Jacobian from the activation pattern at ``x`` (ties counted as inactive)."""
    J = np.eye(len(x))
    z = np.asarray(x, float)
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        zh = np.asarray(W) @ z + b
        active = (zh > 0).astype(float)
        J = (active[:, None] * np.asarray(W)) @ J
        z = np.maximum(zh, 0.0)
    return np.asarray(net.weights[-1]) @ J


def random_box(rng, n, centre_scale=1.0, width=(0.05, 1.0)):
    c = rng.uniform(-centre_scale, centre_scale, n)
    w = rng.uniform(*width, n)
    return InputBox(c - w, c + w)
