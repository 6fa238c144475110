"""Thin solver layer for the two convex program classes the toolkit needs.

Strictly convex quadratic programs with linear inequalities are solved by
cvxopt's interior-point QP (plus an active-set polish), small semidefinite
programs by cvxpy.  Callers depend only on the status taxonomy and the
tolerances documented here, never on the backing solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cvxopt
import cvxopt.solvers
import cvxpy as cp
import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

# required of any returned optimal point
FEAS_TOL = 1e-7
# relative objective accuracy required of SDP optima
OBJ_TOL = 1e-6

# one-sided LMI senses
NSD = "nsd"
PSD = "psd"

cvxopt.solvers.options["show_progress"] = False


class ConicError(Exception):
    """Base class for solver-layer failures."""


class InfeasibleError(ConicError):
    """A problem a caller required to be feasible is not."""


class NumericalError(ConicError):
    """The backend did not converge to the requested accuracy."""


@dataclass
class SolveResult:
    """Outcome of a conic solve.

    ``primal`` is a vector for quadratic programs and a name->value dict for
    semidefinite programs.  ``duals`` carries per-constraint multipliers when
    the backend exposes them.
    """

    status: str
    primal: object = None
    objective: float | None = None
    duals: dict | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class QuadraticProgram:
    """min 0.5 u'Hu + q'u  s.t.  G u <= h.

    ``hessian`` must be symmetric PSD; zero inequality rows are allowed.
    """

    hessian: np.ndarray
    linear_term: np.ndarray
    ineq_lhs: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.linear_term = np.asarray(self.linear_term, dtype=float).ravel()
        n = self.hessian.shape[0]
        if self.hessian.shape != (n, n):
            raise ValueError("hessian must be square")
        if self.linear_term.shape != (n,):
            raise ValueError("linear term length does not match hessian")
        scale = max(1.0, float(np.abs(self.hessian).max()))
        if np.abs(self.hessian - self.hessian.T).max() > 1e-10 * scale:
            raise ValueError("hessian must be symmetric to 1e-10")
        self.hessian = 0.5 * (self.hessian + self.hessian.T)
        if self.ineq_lhs is None:
            self.ineq_lhs = np.zeros((0, n))
            self.ineq_rhs = np.zeros(0)
        else:
            self.ineq_lhs = np.atleast_2d(np.asarray(self.ineq_lhs, dtype=float))
            self.ineq_rhs = np.asarray(self.ineq_rhs, dtype=float).ravel()
        if self.ineq_lhs.shape[1] != n and self.ineq_lhs.shape[0] > 0:
            raise ValueError("constraint matrix width does not match hessian")
        if self.ineq_lhs.shape[0] != self.ineq_rhs.shape[0]:
            raise ValueError("constraint rows and rhs length differ")

    @property
    def n(self) -> int:
        return self.hessian.shape[0]

    @property
    def m(self) -> int:
        return self.ineq_lhs.shape[0]

    def objective_at(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.hessian @ u + self.linear_term @ u)


def _kkt_residual(qp: QuadraticProgram, u, z):
    """Max violation of stationarity, feasibility and complementarity."""
    slack = qp.ineq_lhs @ u - qp.ineq_rhs
    r = np.abs(qp.hessian @ u + qp.linear_term + qp.ineq_lhs.T @ z).max(initial=0.0)
    r = max(r, slack.max(initial=0.0))
    if z.size:
        r = max(r, np.abs(z * slack).max(), -z.min(initial=0.0))
    return r


def _polish_qp(qp: QuadraticProgram, u, z):
    """Resolve the active-set KKT system exactly; keep whichever point is better."""
    slack = qp.ineq_lhs @ u - qp.ineq_rhs
    act = (z > 1e-6 * max(1.0, z.max(initial=0.0))) | (slack > -1e-9 * max(1.0, np.abs(qp.ineq_rhs).max(initial=0.0)))
    n, na = qp.n, int(act.sum())
    Ga = qp.ineq_lhs[act]
    kkt = np.block([[qp.hessian, Ga.T], [Ga, np.zeros((na, na))]])
    rhs = np.concatenate([-qp.linear_term, qp.ineq_rhs[act]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    u_new = sol[:n]
    z_new = np.zeros(qp.m)
    z_new[act] = np.maximum(sol[n:], 0.0)
    if _kkt_residual(qp, u_new, z_new) < _kkt_residual(qp, u, z):
        return u_new, z_new
    return u, z


def _qp_feasible(qp: QuadraticProgram) -> bool:
    """Phase-1 LP: is {u : Gu <= h} nonempty?"""
    m, n = qp.ineq_lhs.shape
    c = cvxopt.matrix(np.concatenate([np.zeros(n), [1.0]]))
    G = cvxopt.matrix(np.hstack([qp.ineq_lhs, -np.ones((m, 1))]))
    h = cvxopt.matrix(qp.ineq_rhs)
    try:
        sol = cvxopt.solvers.lp(c, G, h)
    except (ValueError, ArithmeticError):
        return False
    if sol["status"] == "dual infeasible":
        return True  # slack unbounded below, so the polytope has interior
    if sol["x"] is not None:
        return sol["x"][n] < FEAS_TOL
    return False


def solve_qp(qp: QuadraticProgram) -> SolveResult:
    """Solve a strictly convex QP; optimal points satisfy the KKT system to 1e-7."""
    if qp.m == 0:
        try:
            L = np.linalg.cholesky(qp.hessian)
            u = np.linalg.solve(L.T, np.linalg.solve(L, -qp.linear_term))
        except np.linalg.LinAlgError:
            u, *_ = np.linalg.lstsq(qp.hessian, -qp.linear_term, rcond=None)
            resid = np.abs(qp.hessian @ u + qp.linear_term).max(initial=0.0)
            if resid > FEAS_TOL * max(1.0, np.abs(qp.linear_term).max()):
                return SolveResult(status=UNBOUNDED)
        return SolveResult(OPTIMAL, primal=u, objective=qp.objective_at(u), duals={"ineq": np.zeros(0)})

    opts = {"show_progress": False, "abstol": 1e-10, "reltol": 1e-10, "feastol": 1e-9, "maxiters": 200}
    try:
        sol = cvxopt.solvers.qp(
            cvxopt.matrix(qp.hessian),
            cvxopt.matrix(qp.linear_term),
            cvxopt.matrix(qp.ineq_lhs),
            cvxopt.matrix(qp.ineq_rhs),
            options=opts,
        )
    except (ValueError, ArithmeticError) as err:
        log.debug("cvxopt qp raised %s; falling back to phase-1 classification", err)
        sol = {"status": "unknown", "x": None}

    if sol["status"] == "optimal":
        u = np.asarray(sol["x"]).ravel()
        z = np.asarray(sol["z"]).ravel()
        u, z = _polish_qp(qp, u, z)
        if _kkt_residual(qp, u, z) > FEAS_TOL * max(1.0, np.abs(qp.ineq_rhs).max(initial=0.0)):
            return SolveResult(NUMERICAL_FAILURE)
        return SolveResult(OPTIMAL, primal=u, objective=qp.objective_at(u), duals={"ineq": z})
    if sol["status"] == "primal infeasible":
        return SolveResult(INFEASIBLE)
    if sol["status"] == "dual infeasible":
        return SolveResult(UNBOUNDED)
    # unknown: classify by feasibility, salvage a near-optimal point if present
    if not _qp_feasible(qp):
        return SolveResult(INFEASIBLE)
    if sol.get("x") is not None:
        u = np.asarray(sol["x"]).ravel()
        z = np.asarray(sol["z"]).ravel()
        u, z = _polish_qp(qp, u, z)
        if _kkt_residual(qp, u, z) <= FEAS_TOL * max(1.0, np.abs(qp.ineq_rhs).max(initial=0.0)):
            return SolveResult(OPTIMAL, primal=u, objective=qp.objective_at(u), duals={"ineq": z})
    return SolveResult(NUMERICAL_FAILURE)


@dataclass
class SemidefiniteProgram:
    """Linear objective over scalar/vector/matrix variable blocks with affine LMIs.

    ``lmi_constraints`` holds (expression, sense) pairs where sense is
    ``PSD`` (expression must be >= 0) or ``NSD`` (<= 0); every expression
    must evaluate to a symmetric matrix for any variable assignment.
    """

    variables: list
    objective: cp.Expression
    lmi_constraints: list = field(default_factory=list)
    linear_ineqs: list = field(default_factory=list)
    nonneg_vars: list = field(default_factory=list)

    def __post_init__(self):
        names = [v.name() for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        if not self.objective.is_affine():
            raise ValueError("objective must be affine in the variables")
        for expr, sense in self.lmi_constraints:
            if sense not in (PSD, NSD):
                raise ValueError(f"unknown LMI sense {sense!r}")
            if expr.ndim != 2 or expr.shape[0] != expr.shape[1]:
                raise ValueError("LMI expressions must be square matrices")
            if not expr.is_affine():
                raise ValueError("LMI expressions must be affine in the variables")
        self._check_symmetry()

    def _check_symmetry(self):
        """Evaluate every LMI at a random assignment and verify symmetry."""
        rng = np.random.default_rng(0)
        saved = [v.value for v in self.variables]
        try:
            for v in self.variables:
                if v.is_symmetric():
                    m = rng.normal(size=v.shape)
                    v.value = 0.5 * (m + m.T)
                else:
                    v.value = rng.normal(size=v.shape) if v.shape else float(rng.normal())
            for expr, _ in self.lmi_constraints:
                val = np.atleast_2d(expr.value)
                if np.abs(val - val.T).max() > 1e-8 * max(1.0, np.abs(val).max()):
                    raise ValueError("LMI expression is not symmetric")
        finally:
            for v, old in zip(self.variables, saved):
                v.value = old


_STATUS_MAP = {
    cp.OPTIMAL: OPTIMAL,
    cp.INFEASIBLE: INFEASIBLE,
    cp.UNBOUNDED: UNBOUNDED,
    cp.INFEASIBLE_INACCURATE: INFEASIBLE,
    cp.UNBOUNDED_INACCURATE: UNBOUNDED,
}


def solve_sdp(sdp: SemidefiniteProgram, solvers: tuple = ("CLARABEL", "SCS")) -> SolveResult:
    """Solve an SDP; optimal points satisfy every LMI to eigenvalue tolerance 1e-7."""
    constraints = []
    lmis = []
    for expr, sense in sdp.lmi_constraints:
        sym = 0.5 * (expr + expr.T)
        lmis.append((sym, sense))
        constraints.append(sym >> 0 if sense == PSD else sym << 0)
    constraints.extend(sdp.linear_ineqs)
    constraints.extend(v >= 0 for v in sdp.nonneg_vars)
    problem = cp.Problem(cp.Minimize(sdp.objective), constraints)

    solver_opts = {
        "CLARABEL": {"tol_gap_abs": 1e-11, "tol_gap_rel": 1e-11, "tol_feas": 1e-9},
        "SCS": {"eps": 1e-9, "max_iters": 200_000},
    }
    status = None
    for solver in solvers:
        try:
            problem.solve(solver=solver, verbose=False, **solver_opts.get(solver, {}))
        except cp.error.SolverError as err:
            log.debug("solver %s failed: %s", solver, err)
            continue
        status = problem.status
        if status in (cp.OPTIMAL, cp.INFEASIBLE, cp.UNBOUNDED):
            break
    if status is None:
        return SolveResult(NUMERICAL_FAILURE)
    mapped = _STATUS_MAP.get(status, NUMERICAL_FAILURE)
    if status == cp.OPTIMAL_INACCURATE:
        mapped = OPTIMAL
    if mapped != OPTIMAL:
        return SolveResult(mapped)

    primal = {v.name(): np.asarray(v.value) if v.shape else float(v.value) for v in sdp.variables}
    for (sym, sense), con in zip(lmis, constraints):
        val = np.atleast_2d(np.asarray(sym.value, dtype=float))
        val = 0.5 * (val + val.T)
        eigs = np.linalg.eigvalsh(val)
        worst = -eigs.min() if sense == PSD else eigs.max()
        if worst > FEAS_TOL * max(1.0, np.abs(val).max()):
            log.warning("optimal point violates an LMI by %.2e; reporting numerical failure", worst)
            return SolveResult(NUMERICAL_FAILURE)
    duals = {
        "lmi": [np.asarray(c.dual_value) if c.dual_value is not None else None for c in constraints[: len(lmis)]],
        "linear": [np.asarray(c.dual_value) if c.dual_value is not None else None
                   for c in constraints[len(lmis): len(lmis) + len(sdp.linear_ineqs)]],
    }
    return SolveResult(OPTIMAL, primal=primal, objective=float(problem.value), duals=duals)


def psd_sqrt(M: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues in [-tol*scale, 0) are clamped to zero; anything lower raises.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = max(1.0, float(np.abs(M).max()))
    if M.shape[0] != M.shape[1] or np.abs(M - M.T).max() > 1e-10 * scale:
        raise ValueError("psd_sqrt requires a symmetric matrix")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.min() < -tol * max(1.0, w.max()):
        raise ValueError(f"matrix has negative eigenvalue {w.min():.3e}")
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (R + R.T)


def pseudo_inverse(E: np.ndarray) -> np.ndarray:
    """Left pseudo-inverse of a full-column-rank matrix, so that pinv(E) @ E = I."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    svals = np.linalg.svd(E, compute_uv=False)
    if E.shape[0] < E.shape[1] or svals.min() <= 1e-12 * max(1.0, svals.max()):
        raise ValueError("matrix is rank deficient; no left inverse exists")
    pinv = np.linalg.pinv(E)
    err = np.abs(pinv @ E - np.eye(E.shape[1])).max()
    if err > 1e-10:
        raise NumericalError(f"left-inverse identity residual {err:.3e} exceeds 1e-10")
    return pinv
