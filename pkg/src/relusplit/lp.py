"""Dense LP solver for ``min/max c.z  s.t.  A z <= b`` with free variables.

The solver is a primal simplex that works directly on the inequality form:
a vertex is described by ``d`` active rows of ``A`` (the basis), the free
variables never leave the basis, and the optimal multipliers of the active
rows are read off the final basis. This is the slack-form simplex with every
decision variable kept basic, so duals come at no extra cost.

Dual convention (both senses return ``dual >= 0``):

* minimize: ``A^T dual + c = 0`` and ``value = -b . dual``
* maximize: ``A^T dual - c = 0`` and ``value = +b . dual``

so ``d value / d b_i`` is ``-dual_i`` for minimization and ``+dual_i`` for
maximization at non-degenerate optima.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10
REFACTOR_EVERY = 50


class Sense(enum.Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverStalled(RuntimeError):
    """The simplex iteration limit was hit or the basis became singular."""


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).reshape(-1)
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.ndim != 2:
            A = A.reshape(-1, c.shape[0])
        if A.shape != (b.shape[0], c.shape[0]):
            raise ValueError(f"inconsistent LP shapes: A {A.shape}, b {b.shape}, c {c.shape}")
        for name, arr in (("c", c), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"LP data {name} contains non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def shape(self):
        return self.A.shape


@dataclass(frozen=True)
class LpSolution:
    status: Status
    objective_value: float
    primal: np.ndarray
    dual: np.ndarray
    basis: tuple = ()
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def certificate_residuals(lp: LinearProgram, sol: LpSolution) -> dict:
    """Worst violations of the optimality certificate of an optimal solution."""
    A, b, c, z, lam = lp.A, lp.b, lp.c, sol.primal, sol.dual
    resid = A @ z - b
    sign = 1.0 if lp.sense is Sense.MINIMIZE else -1.0
    stationarity = A.T @ lam + sign * c
    dual_value = -sign * float(b @ lam)
    lagrangian = float(c @ z) + sign * float(resid @ lam)
    return {
        "primal_infeasibility": float(max(0.0, resid.max(initial=0.0))),
        "dual_negativity": float(max(0.0, -lam.min(initial=0.0))),
        "complementarity": float(np.abs(lam * resid).max(initial=0.0)),
        "stationarity": float(np.abs(stationarity).max(initial=0.0)),
        "duality_gap": abs(sol.objective_value - dual_value),
        "lagrangian_gap": abs(sol.objective_value - lagrangian),
    }


def solve(lp: LinearProgram, basis: Optional[Sequence[int]] = None,
          backend: str = "simplex", verbose: bool = False) -> LpSolution:
    """Solve ``lp``; ``basis`` optionally names ``d`` rows forming a starting vertex."""
    if backend == "highs":
        return _solve_highs(lp)
    if backend != "simplex":
        raise ValueError(f"unknown LP backend {backend!r}")
    cost = lp.c if lp.sense is Sense.MINIMIZE else -lp.c
    status, z, lam, rows, iters = _minimize(lp.A, lp.b, cost, basis, verbose)
    m = lp.A.shape[0]
    if status is Status.INFEASIBLE:
        return LpSolution(status, float("nan"), np.full(lp.A.shape[1], np.nan),
                          np.zeros(m), (), iters)
    if status is Status.UNBOUNDED:
        value = -np.inf if lp.sense is Sense.MINIMIZE else np.inf
        return LpSolution(status, value, z, np.zeros(m), tuple(rows), iters)
    return LpSolution(status, float(lp.c @ z), z, lam, tuple(rows), iters)


# -- core simplex ----------------------------------------------------------------


def _minimize(A, b, c, basis, verbose):
    m, d = A.shape
    if d == 0:
        feasible = bool(np.all(b >= -FEAS_TOL * (1 + np.abs(b))))
        status = Status.OPTIMAL if feasible else Status.INFEASIBLE
        return status, np.zeros(0), np.zeros(m), [], 0

    start = z0 = None
    if basis is not None and len(basis) == d and len(set(basis)) == d:
        start = [int(r) for r in basis]
        try:
            z0 = np.linalg.solve(A[start], b[start])
        except np.linalg.LinAlgError:
            start = None
        else:
            if not np.all(np.isfinite(z0)) or np.abs(A[start] @ z0 - b[start]).max() > 1e-6 * (
                    1 + np.abs(b[start]).max()):
                start = None
    if start is None:
        start, rank = _independent_rows(A)
        if rank < d:
            return _minimize_rank_deficient(A, b, c, rank, verbose)
        z0 = np.linalg.solve(A[start], b[start])

    solver = _Simplex(A, b, verbose)
    viol = A @ z0 - b
    if viol.max() > FEAS_TOL * (1 + np.abs(b).max()):
        feasible_basis = solver.phase_one(start, z0, viol)
        if feasible_basis is None:
            return Status.INFEASIBLE, None, None, [], solver.iterations
        start = feasible_basis
    status, rows, z, lam_b = solver.run(c, start)
    lam = np.zeros(m)
    if status is Status.OPTIMAL:
        lam[rows] = lam_b
    return status, z, lam, rows, solver.iterations


def _independent_rows(A):
    d = A.shape[1]
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return [], 0
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    return [int(r) for r in piv[:d]], rank


def _minimize_rank_deficient(A, b, c, rank, verbose):
    # z = Y y + N t with N spanning null(A): t never touches the constraints.
    _, _, vt = np.linalg.svd(A)
    Y, N = vt[:rank].T, vt[rank:].T
    unbounded_dir = N.T @ c
    reduced = LinearProgram(Y.T @ c, A @ Y, b)
    if rank == 0:
        status, y, lam, rows, iters = _minimize(np.zeros((A.shape[0], 0)), b, np.zeros(0), None, verbose)
    else:
        status, y, lam, rows, iters = _minimize(reduced.A, b, reduced.c, None, verbose)
    if status is Status.INFEASIBLE:
        return status, None, None, [], iters
    z = Y @ y
    if np.abs(unbounded_dir).max(initial=0.0) > OPT_TOL * max(1.0, np.abs(c).max()):
        return Status.UNBOUNDED, z, np.zeros(A.shape[0]), [], iters
    return status, z, lam, rows, iters


class _Simplex:
    def __init__(self, A, b, verbose=False):
        self.A = A
        self.b = b
        self.m, self.d = A.shape
        self.iterations = 0
        self.verbose = verbose
        self.max_iter = 50 * (self.m + self.d) + 1000

    def phase_one(self, start, z0, viol):
        """Return a feasible basis, or ``None`` if the polytope is empty.

        Minimizes an artificial ``t >= 0`` that relaxes every row outside
        ``start``; ``start`` rows stay hard so the initial vertex is explicit.
        """
        A, b, m, d = self.A, self.b, self.m, self.d
        t_col = np.full(m, -1.0)
        t_col[start] = 0.0
        A_aux = np.zeros((m + 1, d + 1))
        A_aux[:m, :d] = A
        A_aux[:m, d] = t_col
        A_aux[m, d] = -1.0
        b_aux = np.append(b, 0.0)
        masked = viol.copy()
        masked[start] = -np.inf
        worst = int(np.argmax(masked))
        rows = list(start) + [worst if masked[worst] > 0 else m]
        cost = np.zeros(d + 1)
        cost[d] = 1.0
        aux = _Simplex(A_aux, b_aux, self.verbose)
        status, rows, zt, _ = aux.run(cost, rows)
        self.iterations += aux.iterations
        if status is not Status.OPTIMAL:
            raise SolverStalled(f"phase one ended with status {status.value}")
        if zt[d] > FEAS_TOL * (1 + np.abs(b).max()):
            return None
        if m not in rows:
            # degenerate t = 0 vertex: swap the t >= 0 row in without moving
            minv = np.linalg.inv(A_aux[rows])
            v = A_aux[m] @ minv
            q = int(np.argmax(np.abs(v)))
            rows[q] = m
        return [r for r in rows if r != m]

    def run(self, c, rows):
        A, m, d = self.A, self.m, self.d
        rows = list(rows)
        in_basis = np.zeros(m, dtype=bool)
        in_basis[rows] = True
        c_scale = max(1.0, float(np.abs(c).max()))
        opt_tol = OPT_TOL * c_scale
        minv, z, slack = self._refactor(rows)
        since_refactor = 0
        degenerate = 0
        bland = False
        bland_after = 3 * (m + d)

        while True:
            if self.iterations >= self.max_iter:
                raise SolverStalled(f"no convergence after {self.iterations} pivots (m={m}, d={d})")
            lam = -(c @ minv)
            neg = lam < -opt_tol
            if not neg.any():
                if since_refactor:
                    minv, z, slack = self._refactor(rows)
                    since_refactor = 0
                    continue
                lam = np.linalg.solve(A[rows].T, -c)
                if np.all(lam >= -opt_tol):
                    return Status.OPTIMAL, rows, z, lam
                # refined multipliers disagree with the updated inverse; keep going
                neg = lam < -opt_tol
            if bland:
                q = min(np.flatnonzero(neg), key=lambda k: rows[k])
            else:
                q = int(np.argmin(lam))
            p = -minv[:, q]
            rates = A @ p
            pscale = max(1.0, float(np.abs(p).max()))
            cand = (rates > PIVOT_TOL * pscale) & ~in_basis
            if not cand.any():
                return Status.UNBOUNDED, rows, z, None
            idx = np.flatnonzero(cand)
            ratios = np.maximum(slack[idx], 0.0) / rates[idx]
            step = float(ratios.min())
            ties = idx[ratios <= step + 1e-12 * (1.0 + step)]
            if bland or len(ties) == 1:
                enter = int(ties[0])
            else:
                enter = int(ties[np.argmax(rates[ties])])
            leave = rows[q]
            if self.verbose:
                log.debug("pivot %d: row %d leaves, row %d enters, step %.3e",
                          self.iterations, leave, enter, step)

            z = z + step * p
            slack = slack - step * rates
            slack[enter] = 0.0
            v = (A[enter] - A[leave]) @ minv
            denom = 1.0 + v[q]
            if abs(denom) < 1e-14:
                raise SolverStalled("basis update became singular")
            minv = minv - np.outer(minv[:, q], v) / denom
            rows[q] = enter
            in_basis[leave] = False
            in_basis[enter] = True
            self.iterations += 1
            since_refactor += 1
            if step <= 1e-12:
                degenerate += 1
                if degenerate >= bland_after:
                    bland = True
            if since_refactor >= REFACTOR_EVERY:
                minv, z, slack = self._refactor(rows)
                since_refactor = 0

    def _refactor(self, rows):
        M = self.A[rows]
        try:
            minv = np.linalg.inv(M)
        except np.linalg.LinAlgError:
            raise SolverStalled("singular basis matrix") from None
        z = minv @ self.b[rows]
        z = z + minv @ (self.b[rows] - M @ z)
        slack = self.b - self.A @ z
        slack[rows] = 0.0
        return minv, z, slack


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    cost = lp.c if lp.sense is Sense.MINIMIZE else -lp.c
    res = linprog(cost, A_ub=lp.A, b_ub=lp.b, bounds=(None, None), method="highs")
    m, d = lp.A.shape
    if res.status == 2:
        return LpSolution(Status.INFEASIBLE, float("nan"), np.full(d, np.nan), np.zeros(m))
    if res.status == 3:
        value = -np.inf if lp.sense is Sense.MINIMIZE else np.inf
        return LpSolution(Status.UNBOUNDED, value, np.full(d, np.nan), np.zeros(m))
    if res.status != 0:
        raise SolverStalled(f"HiGHS failed: {res.message}")
    z = np.asarray(res.x, dtype=float)
    return LpSolution(Status.OPTIMAL, float(lp.c @ z), z, -np.asarray(res.ineqlin.marginals))
