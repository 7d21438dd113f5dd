"""Depth-first input-splitting verification of ``forall x in B: f(x) not in S``."""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lp import LinearProgram, Sense, Status, solve
from .network import InputBox, ReluNetwork, forward
from .rates import bound_rates
from .relaxation import (BoundsTable, LayeredPolytope, compute_bounds, is_exact,
                         output_polytope, relu_vertex)
from .splitting import DegenerateBox, be_split, iog_split

log = logging.getLogger(__name__)

WITNESS_BOX_TOL = 1e-9
WITNESS_SPEC_TOL = 1e-6
DEFAULT_TIMEOUT_S = 3 * 3600.0


class Verdict(enum.Enum):
    INTERSECTS = "intersects"
    DOES_NOT_INTERSECT = "does_not_intersect"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class OutputSpec:
    """Forbidden output set: a union of polytopes ``A_s y <= b_s``."""

    disjuncts: tuple
    name: str = ""

    def __post_init__(self):
        parts = []
        for A, b in self.disjuncts:
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.asarray(b, dtype=float).reshape(-1)
            if A.shape[0] < 1 or A.shape[0] != b.shape[0]:
                raise ValueError("every disjunct needs at least one row and matching rhs")
            parts.append((A, b))
        if not parts:
            raise ValueError("an output spec needs at least one disjunct")
        widths = {A.shape[1] for A, _ in parts}
        if len(widths) != 1:
            raise ValueError("disjuncts disagree on the output dimension")
        object.__setattr__(self, "disjuncts", tuple(parts))

    @property
    def n_outputs(self) -> int:
        return self.disjuncts[0][0].shape[1]

    def violation(self, y) -> np.ndarray:
        """Per-disjunct worst row residual (``<= 0`` means ``y`` lies inside)."""
        y = np.asarray(y, dtype=float)
        return np.array([float(np.max(A @ y - b)) for A, b in self.disjuncts])

    def contains(self, y, tol: float = WITNESS_SPEC_TOL) -> bool:
        return bool(np.min(self.violation(y)) <= tol)


@dataclass
class RunStats:
    nodes_explored: int = 0
    leaf_depths: list = field(default_factory=list)
    wall_time: float = 0.0
    inconclusive: int = 0
    lp_count: int = 0
    log: Optional[list] = None

    @property
    def depth_mean(self) -> float:
        return float(np.mean(self.leaf_depths)) if self.leaf_depths else float("nan")

    @property
    def depth_std(self) -> float:
        return float(np.std(self.leaf_depths)) if self.leaf_depths else float("nan")

    def depth_histogram(self) -> list:
        depths, counts = np.unique(np.asarray(self.leaf_depths, dtype=int), return_counts=True)
        return [[int(d), int(c)] for d, c in zip(depths, counts)]

    def merge(self, other: "RunStats") -> "RunStats":
        merged_log = None
        if self.log is not None or other.log is not None:
            merged_log = (self.log or []) + (other.log or [])
        return RunStats(self.nodes_explored + other.nodes_explored,
                        self.leaf_depths + other.leaf_depths,
                        self.wall_time + other.wall_time,
                        self.inconclusive + other.inconclusive,
                        self.lp_count + other.lp_count, merged_log)


@dataclass(frozen=True)
class VerificationOutcome:
    verdict: Verdict
    witness: Optional[np.ndarray]
    stats: RunStats
    on_boundary: bool = False

    def to_json(self) -> dict:
        s = self.stats

        def clean(v):
            return None if v != v else round(v, 12)

        data = {
            "verdict": self.verdict.value,
            "nodes": s.nodes_explored,
            "wall_ms": round(1000.0 * s.wall_time, 3),
            "depth_mean": clean(s.depth_mean),
            "depth_std": clean(s.depth_std),
            "depth_histogram": s.depth_histogram(),
            "inconclusive_leaves": s.inconclusive,
        }
        if self.witness is not None:
            data["witness"] = [float(v) for v in self.witness]
            data["witness_on_boundary"] = self.on_boundary
        return data


@dataclass(frozen=True)
class VerifyConfig:
    timeout: float = DEFAULT_TIMEOUT_S
    splitter: str = "be"
    width_floor: float = 1e-9
    early_counterexample: bool = False
    record_log: bool = False
    backend: str = "simplex"

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.splitter not in ("be", "iog"):
            raise ValueError(f"unknown splitter {self.splitter!r}")


@dataclass(frozen=True)
class Intersection:
    empty: bool
    point: Optional[np.ndarray] = None
    disjunct: Optional[int] = None


def check_witness(net: ReluNetwork, box: InputBox, spec: OutputSpec, x,
                  box_tol: float = WITNESS_BOX_TOL, spec_tol: float = WITNESS_SPEC_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_inputs,) or not box.contains(x, box_tol):
        return False
    return spec.contains(forward(net, x), spec_tol)


def intersect(poly: LayeredPolytope, spec: OutputSpec, bounds: Optional[BoundsTable] = None,
              net: Optional[ReluNetwork] = None, backend: str = "simplex") -> Intersection:
    """One feasibility LP per disjunct over the joint variables of ``poly``.

    When ``bounds`` carries the stable-node reduction the LPs run on the
    reduced system and the point is lifted back to the joint space.
    """
    W, bias = poly.output_map
    reduced = getattr(bounds, "reduced", None) if bounds is not None else None
    if reduced is not None:
        E, f = reduced.E[-1], reduced.f[-1]
        base_A, base_b = reduced.A, reduced.b
        out_A, out_b = W @ E, W @ f + bias
        basis = reduced.corner_vertex()
    else:
        d = poly.A.shape[1]
        base_A, base_b = poly.A, poly.b
        out_A = np.zeros((len(bias), d))
        out_A[:, poly.last_columns] = W
        out_b = bias
        basis = None
        if net is not None:
            n = poly.widths[0]
            basis, _ = relu_vertex(poly, -poly.b[n:2 * n], net, range(n, 2 * n))
    zero = np.zeros(base_A.shape[1])
    for idx, (A_s, b_s) in enumerate(spec.disjuncts):
        A = np.vstack([base_A, A_s @ out_A])
        b = np.concatenate([base_b, b_s - A_s @ out_b])
        sol = solve(LinearProgram(zero, A, b, Sense.MINIMIZE), basis=basis, backend=backend)
        if sol.status is Status.OPTIMAL:
            point = reduced.lift_primal(sol.primal) if reduced is not None else sol.primal
            return Intersection(False, point, idx)
    return Intersection(True)


@dataclass(frozen=True)
class NodeResult:
    """Outcome of expanding one box: ``kind`` in empty/exact/split/inconclusive/found."""

    kind: str
    witness: Optional[np.ndarray] = None
    decision: object = None
    lp_count: int = 0


def expand_node(net: ReluNetwork, box: InputBox, spec: OutputSpec,
                config: VerifyConfig) -> NodeResult:
    """Pure single-box step of the search (no shared state)."""
    bounds, coeffs = compute_bounds(net, box, backend=config.backend)
    lp_count = 2 * sum(len(l) for l in bounds.lower)
    poly = output_polytope(net, box, bounds, coeffs)
    hit = intersect(poly, spec, bounds, net=net, backend=config.backend)
    lp_count += len(spec.disjuncts) if hit.empty else hit.disjunct + 1
    if hit.empty:
        return NodeResult("empty", lp_count=lp_count)
    x = np.clip(hit.point[poly.input_columns], box.lower, box.upper)
    if is_exact(bounds):
        if check_witness(net, box, spec, x):
            return NodeResult("exact", witness=x, lp_count=lp_count)
        log.warning("exact relaxation produced a point that fails the witness check")
    elif config.early_counterexample and check_witness(net, box, spec, x):
        return NodeResult("found", witness=x, lp_count=lp_count)
    try:
        if config.splitter == "be":
            rates = bound_rates(net, bounds, coeffs) if len(bounds) else None
            if rates is None:
                decision = iog_split(net, box, bounds, config.width_floor)
            else:
                decision = be_split(box, bounds, rates, config.width_floor)
        else:
            decision = iog_split(net, box, bounds, config.width_floor)
    except DegenerateBox:
        return NodeResult("inconclusive", lp_count=lp_count)
    return NodeResult("split", decision=decision, lp_count=lp_count)


def verify(net: ReluNetwork, box: InputBox, spec: OutputSpec,
           config: VerifyConfig = VerifyConfig(), deadline: Optional[float] = None
           ) -> VerificationOutcome:
    """Decide whether ``f(box)`` meets ``spec``; depth-first, low child first."""
    if spec.n_outputs != net.n_outputs:
        raise ValueError("spec output dimension does not match the network")
    t0 = time.perf_counter()
    if deadline is None:
        deadline = t0 + config.timeout
    stats = RunStats(log=[] if config.record_log else None)
    stack = [(box, 0)]
    verdict, witness = Verdict.DOES_NOT_INTERSECT, None
    while stack:
        if time.perf_counter() >= deadline:
            verdict = Verdict.TIMEOUT
            break
        node_box, depth = stack.pop()
        result = expand_node(net, node_box, spec, config)
        stats.nodes_explored += 1
        stats.lp_count += result.lp_count
        if stats.log is not None:
            stats.log.append({
                "depth": depth, "lower": node_box.lower.tolist(), "upper": node_box.upper.tolist(),
                "result": result.kind,
                "axis": None if result.decision is None else result.decision.axis,
            })
        if result.kind == "split":
            stack.append((result.decision.child_high, depth + 1))
            stack.append((result.decision.child_low, depth + 1))
            continue
        stats.leaf_depths.append(depth)
        if result.kind in ("exact", "found"):
            verdict, witness = Verdict.INTERSECTS, result.witness
            break
        if result.kind == "inconclusive":
            stats.inconclusive += 1
    if verdict is Verdict.DOES_NOT_INTERSECT and stats.inconclusive:
        verdict = Verdict.TIMEOUT
    stats.wall_time = time.perf_counter() - t0
    boundary = False
    if witness is not None:
        boundary = bool(np.min(spec.violation(forward(net, witness))) > -WITNESS_BOX_TOL)
    return VerificationOutcome(verdict, witness, stats, boundary)


def verify_boxes(net: ReluNetwork, boxes, spec: OutputSpec,
                 config: VerifyConfig = VerifyConfig()) -> VerificationOutcome:
    """Verify a union of boxes under one shared time budget."""
    deadline = time.perf_counter() + config.timeout
    total = RunStats(log=[] if config.record_log else None)
    verdict = Verdict.DOES_NOT_INTERSECT
    witness, boundary = None, False
    for b in boxes:
        out = verify(net, b, spec, config, deadline=deadline)
        total = total.merge(out.stats)
        if out.verdict is Verdict.INTERSECTS:
            verdict, witness, boundary = out.verdict, out.witness, out.on_boundary
            break
        if out.verdict is Verdict.TIMEOUT:
            verdict = Verdict.TIMEOUT
            if time.perf_counter() >= deadline:
                break
    return VerificationOutcome(verdict, witness, total, boundary)
