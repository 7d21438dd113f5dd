"""Layered LP relaxation of a ReLU network over an input box.

Column layout of every polytope: ``[x | z_2 | ... | z_j]``. Rows: the ``2 n_1``
box rows (``+I`` then ``-I``), then per hidden layer three groups of
``n_{l+1}`` rows::

    -z            <= 0                  (z >= 0)
    W z_prev - z  <= -b                 (z >= W z_prev + b)
    -D W z_prev + z <= D b + d          (upper envelope)

Weight layer ``j`` (1-based, ``j = 1..K-2``) produces the bounds on the
pre-activation of hidden layer ``j + 1``; those bounds are stored at index
``j - 1`` of every per-layer list below.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lp import LinearProgram, LpSolution, Sense, SolverStalled, Status, solve
from .network import InputBox, ReluNetwork, Stability, classify_node, node_stability

DEGENERATE_WIDTH = 1e-9


class RelaxationError(RuntimeError):
    """Bound computation failed; carries the (layer, node, sense) context."""


@dataclass(frozen=True)
class EnvelopeCoefficients:
    """Upper-envelope slopes ``c`` and intercepts ``d`` per weight layer.

    ``lower``/``upper`` hold the clamped bounds the coefficients were built
    from; ``unstable`` marks nodes whose envelope is a genuine triangle.
    """

    slopes: tuple
    intercepts: tuple
    lower: tuple
    upper: tuple
    unstable: tuple

    def __len__(self):
        return len(self.slopes)


def envelope(lower, upper):
    """Clamp ``l <- min(l, 0)``, ``u <- max(u, 0)`` and build one layer's envelope."""
    lower = np.minimum(np.asarray(lower, float), 0.0)
    upper = np.maximum(np.asarray(upper, float), 0.0)
    slope = np.zeros_like(lower)
    intercept = np.zeros_like(lower)
    unstable = np.zeros(lower.shape, dtype=bool)
    for k, (l, u) in enumerate(zip(lower, upper)):
        if u - l < DEGENERATE_WIDTH:
            slope[k] = 1.0 if 0.5 * (l + u) >= 0.0 else 0.0
        elif u <= 0.0:
            slope[k] = 0.0
        elif l >= 0.0:
            slope[k] = 1.0
        else:
            slope[k] = u / (u - l)
            intercept[k] = -u * l / (u - l)
            unstable[k] = True
    return slope, intercept, lower, upper, unstable


def coefficients_from_bounds(lowers, uppers) -> EnvelopeCoefficients:
    parts = [envelope(l, u) for l, u in zip(lowers, uppers)]
    return EnvelopeCoefficients(*(tuple(p[i] for p in parts) for i in range(5)))


@dataclass(frozen=True)
class LayerRows:
    """Row slices of one hidden-layer block inside a polytope."""

    nonneg: slice
    lower: slice
    upper: slice


@dataclass(frozen=True)
class LayeredPolytope:
    A: np.ndarray
    b: np.ndarray
    widths: tuple                      # widths of the column blocks x, z_2, ..., z_j
    box_rows: slice
    blocks: tuple                      # LayerRows for hidden layers 2..j
    output_map: Optional[tuple] = None  # (W_{K-1}, b_{K-1}) when built to full depth

    @property
    def depth(self) -> int:
        """The index ``j`` of this polytope (1 means the box alone)."""
        return len(self.widths)

    @property
    def column_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.widths)])

    def block_columns(self, block: int) -> slice:
        off = self.column_offsets
        return slice(int(off[block]), int(off[block + 1]))

    @property
    def input_columns(self) -> slice:
        return self.block_columns(0)

    @property
    def last_columns(self) -> slice:
        return self.block_columns(len(self.widths) - 1)

    def contains(self, point, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ point - self.b <= tol * (1 + np.abs(self.b))))

    def output(self, point) -> np.ndarray:
        W, bias = self.output_map
        return W @ point[self.last_columns] + bias


def box_polytope(box: InputBox) -> LayeredPolytope:
    n = box.dim
    return LayeredPolytope(box.constraint_matrix(), box.bias, (n,), slice(0, 2 * n), ())


def extend_polytope(poly: LayeredPolytope, weight, bias, slope, intercept) -> LayeredPolytope:
    """Append the block for one more hidden layer (the ``R``/``r`` block)."""
    weight = np.asarray(weight, float)
    n_new, n_prev = weight.shape
    m, d = poly.A.shape
    prev = poly.last_columns
    eye = np.eye(n_new)
    block = np.zeros((3 * n_new, d + n_new))
    block[:n_new, d:] = -eye
    block[n_new:2 * n_new, prev] = weight
    block[n_new:2 * n_new, d:] = -eye
    block[2 * n_new:, prev] = -slope[:, None] * weight
    block[2 * n_new:, d:] = eye
    rhs = np.concatenate([np.zeros(n_new), -bias, slope * bias + intercept])
    A = np.zeros((m + 3 * n_new, d + n_new))
    A[:m, :d] = poly.A
    A[m:] = block
    rows = LayerRows(slice(m, m + n_new), slice(m + n_new, m + 2 * n_new),
                     slice(m + 2 * n_new, m + 3 * n_new))
    return LayeredPolytope(A, np.concatenate([poly.b, rhs]), poly.widths + (n_new,),
                           poly.box_rows, poly.blocks + (rows,))


def build_polytope(net: ReluNetwork, box: InputBox, coeffs: EnvelopeCoefficients,
                   depth: int) -> LayeredPolytope:
    """Polytope ``A~_depth z <= b~_depth``; needs coefficients for layers ``< depth``."""
    if depth < 1 or depth > net.layer_count - 1:
        raise ValueError(f"depth must lie in 1..{net.layer_count - 1}")
    if len(coeffs) < depth - 1:
        raise ValueError(f"polytope of depth {depth} needs {depth - 1} envelope layers, "
                         f"got {len(coeffs)}")
    if box.dim != net.n_inputs:
        raise ValueError("box dimension does not match the network input size")
    poly = box_polytope(box)
    for j in range(depth - 1):
        poly = extend_polytope(poly, net.weights[j], net.biases[j],
                               coeffs.slopes[j], coeffs.intercepts[j])
    return poly


@dataclass
class BoundsTable:
    """Pre-activation bounds per weight layer plus the LPs that produced them."""

    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    min_solutions: list = field(default_factory=list)
    max_solutions: list = field(default_factory=list)
    polytopes: list = field(default_factory=list)
    reduced: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.lower)

    def layers(self):
        return list(zip(self.lower, self.upper))

    def stability(self):
        return node_stability(self.layers())

    def unstable_count(self) -> int:
        return sum(s is Stability.UNSTABLE for layer in self.stability() for s in layer)

    def to_json(self) -> str:
        rows = []
        for j, (lo, up) in enumerate(self.layers(), start=1):
            for k, (l, u) in enumerate(zip(lo, up)):
                rows.append({"layer": j, "node": k, "l": float(l), "u": float(u),
                             "stability": classify_node(l, u).value})
        return json.dumps(rows, indent=1)


class _ReducedSystem:
    """The layered polytope with stable nodes substituted out.

    A stable node's variable is pinned (``z = 0`` or ``z = W z_prev + b``), so
    every block is an affine image ``E v + f`` of the reduced variables ``v``
    (inputs and unstable nodes only). The box rows and the three rows of every
    unstable node are kept; ``full_rows`` maps them back into ``A~_j``.
    """

    def __init__(self, box: InputBox):
        n = box.dim
        self.A = box.constraint_matrix()
        self.b = box.bias.copy()
        self.full_rows = list(range(2 * n))
        self.E = [np.eye(n)]
        self.f = [np.zeros(n)]
        self.n_inputs = n
        self.layers = []   # (first row, unstable indices, G rows, g entries) per hidden layer

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    def add_layer(self, weight, bias, slope, intercept, unstable, rows: LayerRows):
        nv = self.n_vars
        G = weight @ self.E[-1]
        g = weight @ self.f[-1] + bias
        idx = np.flatnonzero(unstable)
        nu = len(idx)
        new_cols = nv + np.arange(nu)
        E = np.zeros((len(bias), nv + nu))
        f = np.zeros(len(bias))
        active = ~unstable & (slope == 1.0)
        E[active, :nv] = G[active]
        f[active] = g[active]
        E[idx, new_cols] = 1.0

        block = np.zeros((3 * nu, nv + nu))
        unit = np.eye(nu)
        block[:nu, nv:] = -unit
        block[nu:2 * nu, :nv] = G[idx]
        block[nu:2 * nu, nv:] = -unit
        block[2 * nu:, :nv] = -slope[idx, None] * G[idx]
        block[2 * nu:, nv:] = unit
        rhs = np.concatenate([np.zeros(nu), -g[idx], slope[idx] * g[idx] + intercept[idx]])

        self.A = np.vstack([np.hstack([self.A, np.zeros((self.A.shape[0], nu))]), block])
        self.b = np.concatenate([self.b, rhs])
        self.E = [np.hstack([e, np.zeros((e.shape[0], nu))]) for e in self.E] + [E]
        self.f.append(f)
        self.full_rows += ([rows.nonneg.start + t for t in idx] + [rows.lower.start + t for t in idx]
                           + [rows.upper.start + t for t in idx])
        self.layers.append((self.A.shape[0] - 3 * nu, idx, G[idx], g[idx]))

    def objective(self, w):
        return w @ self.E[-1], float(w @ self.f[-1])

    def corner_vertex(self, upper: bool = True):
        """Basis rows of the vertex above a box corner (ReLU applied exactly)."""
        n = self.n_inputs
        rows = list(range(n)) if upper else list(range(n, 2 * n))
        x = self.b[:n] if upper else -self.b[n:2 * n]
        v = np.asarray(x, dtype=float)
        for base, idx, G, g in self.layers:
            zhat = G @ v + g
            nu = len(idx)
            rows += [base + i if zhat[i] < 0.0 else base + nu + i for i in range(nu)]
            v = np.concatenate([v, np.maximum(zhat, 0.0)])
        return rows

    def lift_primal(self, v):
        return np.concatenate([e @ v + f for e, f in zip(self.E, self.f)])


def _lift_dual(poly: LayeredPolytope, coeff_slopes, unstable, full_rows, lam_reduced,
               cost_full):
    """Complete a reduced-system dual into an optimal dual of the full polytope.

    ``cost_full`` is the minimization cost (negated objective for a max LP).
    Each stable node owns a row pair with coefficients ``-1``/``+1`` on its
    own column, so the pair absorbs that column's stationarity residual.
    """
    lam = np.zeros(poly.A.shape[0])
    lam[full_rows] = lam_reduced
    for blk in range(len(poly.blocks) - 1, -1, -1):
        rows = poly.blocks[blk]
        cols = poly.block_columns(blk + 1)
        resid = poly.A[:, cols].T @ lam + cost_full[cols]
        stable = ~unstable[blk]
        active = stable & (coeff_slopes[blk] == 1.0)
        inactive = stable & ~active
        need = -resid
        for mask, other in ((inactive, rows.nonneg), (active, rows.lower)):
            ks = np.flatnonzero(mask)
            pos = need[ks] >= 0.0
            lam[rows.upper.start + ks[pos]] = need[ks[pos]]
            lam[other.start + ks[~pos]] = -need[ks[~pos]]
    return lam


def compute_bounds(net: ReluNetwork, box: InputBox, backend: str = "simplex",
                   presolve: bool = True):
    """Layer-by-layer bound LPs; returns ``(BoundsTable, EnvelopeCoefficients)``.

    With ``presolve`` the LPs are solved over the stable-node-free reduced
    system and the stored solutions are lifted back to the full polytope.
    """
    if box.dim != net.n_inputs:
        raise ValueError("box dimension does not match the network input size")
    n_in = box.dim
    poly = box_polytope(box)
    reduced = _ReducedSystem(box)
    # both senses start at the upper corner of the box
    start = (list(range(n_in)), box.upper.copy())
    warm = {Sense.MINIMIZE: start, Sense.MAXIMIZE: start}

    table = BoundsTable()
    slopes, intercepts, lows, ups, unstable = [], [], [], [], []
    for j in range(net.layer_count - 2):
        weight, bias = net.weights[j], net.biases[j]
        d_full = poly.A.shape[1]
        cols = poly.last_columns
        lower = np.empty(len(bias))
        upper = np.empty(len(bias))
        sols = {Sense.MINIMIZE: [], Sense.MAXIMIZE: []}
        for k in range(len(bias)):
            c_full = np.zeros(d_full)
            c_full[cols] = weight[k]
            if presolve:
                c_red, const = reduced.objective(weight[k])
            for sense in (Sense.MINIMIZE, Sense.MAXIMIZE):
                if presolve:
                    lp = LinearProgram(c_red, reduced.A, reduced.b, sense)
                    red = _bound_lp(lp, warm[sense][0], backend, j + 1, k)
                    if red.basis:
                        warm[sense] = (list(red.basis), red.primal)
                    cost = c_full if sense is Sense.MINIMIZE else -c_full
                    lam = _lift_dual(poly, slopes, unstable, reduced.full_rows, red.dual, cost)
                    sol = LpSolution(red.status, red.objective_value + const,
                                     reduced.lift_primal(red.primal), lam,
                                     tuple(reduced.full_rows[r] for r in red.basis),
                                     red.iterations)
                else:
                    lp = LinearProgram(c_full, poly.A, poly.b, sense)
                    sol = _bound_lp(lp, warm[sense][0], backend, j + 1, k)
                    if sol.basis:
                        warm[sense] = (list(sol.basis), sol.primal)
                sols[sense].append(sol)
            lower[k] = sols[Sense.MINIMIZE][k].objective_value + bias[k]
            upper[k] = sols[Sense.MAXIMIZE][k].objective_value + bias[k]
        table.lower.append(lower)
        table.upper.append(upper)
        table.min_solutions.append(sols[Sense.MINIMIZE])
        table.max_solutions.append(sols[Sense.MAXIMIZE])
        table.polytopes.append(poly)

        s, ic, lc, uc, un = envelope(lower, upper)
        for lst, val in zip((slopes, intercepts, lows, ups, unstable), (s, ic, lc, uc, un)):
            lst.append(val)
        new_poly = extend_polytope(poly, weight, bias, s, ic)
        for sense in warm:
            rows, point = warm[sense]
            if presolve:
                zhat = weight @ (reduced.E[-1] @ point + reduced.f[-1]) + bias
                base = reduced.A.shape[0]
                nu = int(un.sum())
                ext = [base + i if zhat[t] < 0.0 else base + nu + i
                       for i, t in enumerate(np.flatnonzero(un))]
                warm[sense] = (rows + ext, np.concatenate([point, np.maximum(zhat[un], 0.0)]))
            else:
                zhat = weight @ point[cols] + bias
                m = poly.A.shape[0]
                n = len(bias)
                ext = [m + t if zhat[t] < 0.0 else m + n + t for t in range(n)]
                warm[sense] = (rows + ext, np.concatenate([point, np.maximum(zhat, 0.0)]))
        if presolve:
            reduced.add_layer(weight, bias, s, ic, un, new_poly.blocks[-1])
        poly = new_poly

    if presolve:
        table.reduced = reduced
    coeffs = EnvelopeCoefficients(tuple(slopes), tuple(intercepts), tuple(lows),
                                  tuple(ups), tuple(unstable))
    return table, coeffs


def _bound_lp(lp: LinearProgram, basis, backend, layer, node) -> LpSolution:
    try:
        sol = solve(lp, basis=basis, backend=backend)
    except SolverStalled as exc:
        raise RelaxationError(f"bound LP failed at layer {layer}, node {node}, "
                              f"{lp.sense.value}: {exc}") from exc
    if sol.status is not Status.OPTIMAL:
        raise RelaxationError(f"bound LP at layer {layer}, node {node}, {lp.sense.value} "
                              f"returned {sol.status.value}; the box polytope is never "
                              f"empty, so this is an internal invariant violation")
    return sol


def is_exact(bounds) -> bool:
    """True when every hidden node is stable (``u <= 0`` or ``l >= 0``)."""
    pairs = bounds.layers() if hasattr(bounds, "layers") else bounds
    return all(np.all((np.asarray(u) <= 0.0) | (np.asarray(l) >= 0.0)) for l, u in pairs)


def output_polytope(net: ReluNetwork, box: InputBox, bounds: BoundsTable,
                    coeffs: EnvelopeCoefficients) -> LayeredPolytope:
    """Full-depth polytope over ``[x | z_2 | ... | z_{K-1}]`` with the output map."""
    if len(coeffs) < net.layer_count - 2:
        raise ValueError("bounds are incomplete for an output polytope")
    if bounds.polytopes and len(bounds.polytopes) == net.layer_count - 2:
        j = net.layer_count - 3
        poly = extend_polytope(bounds.polytopes[j], net.weights[j], net.biases[j],
                               coeffs.slopes[j], coeffs.intercepts[j])
    else:
        poly = build_polytope(net, box, coeffs, net.layer_count - 1)
    return LayeredPolytope(poly.A, poly.b, poly.widths, poly.box_rows, poly.blocks,
                           (np.asarray(net.weights[-1]), np.asarray(net.biases[-1])))


def output_bounds(poly: LayeredPolytope, backend: str = "simplex"):
    """Interval hull of the relaxed output set (one LP pair per output)."""
    W, bias = poly.output_map
    d = poly.A.shape[1]
    lo, hi = np.empty(len(bias)), np.empty(len(bias))
    for k in range(len(bias)):
        c = np.zeros(d)
        c[poly.last_columns] = W[k]
        lo[k] = _bound_lp(LinearProgram(c, poly.A, poly.b, Sense.MINIMIZE), None,
                          backend, poly.depth, k).objective_value + bias[k]
        hi[k] = _bound_lp(LinearProgram(c, poly.A, poly.b, Sense.MAXIMIZE), None,
                          backend, poly.depth, k).objective_value + bias[k]
    return lo, hi


def relu_vertex(poly: LayeredPolytope, x, net: ReluNetwork, input_rows):
    """Basis rows for the vertex reached by pushing input corner ``x`` forward."""
    rows = list(input_rows)
    point = np.asarray(x, float)
    for j, blk in enumerate(poly.blocks):
        zhat = net.weights[j] @ point[poly.block_columns(j)] + net.biases[j]
        n = len(zhat)
        rows += [blk.nonneg.start + k if zhat[k] < 0.0 else blk.lower.start + k for k in range(n)]
        point = np.concatenate([point, np.maximum(zhat, 0.0)])
    return rows, point
