"""Horizon-N expert controllers.

Three experts share the condensed data of :mod:`hindsight.system`:

* deterministic MPC (zero assumed disturbance),
* disturbance-aware MPC fed a full stacked disturbance trajectory,
* robust disturbance-aware MPC that optimizes the worst case over an
  ellipsoid around that trajectory.

The robust problem is an exact SDP (two LMIs); it is solved here through an
equivalent SOCP obtained by whitening the first LMI with P^{-1/2},
diagonalizing its constant block and Schur-complementing the resulting arrow
matrix, followed by a coordinate-descent polish (exact scalar search in the
multiplier, exact QP in the inputs).  The literal LMI construction is kept in
:func:`nc_rmpc_sdp` so the two routes can be checked against each other.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.linalg

from . import conic
from .conic import InfeasibleError, NumericalError, QuadraticProgram, SemidefiniteProgram, solve_qp
from .system import StackedMpcData, h_of_w

log = logging.getLogger(__name__)

_CLARABEL_OPTS = {"tol_gap_abs": 1e-10, "tol_gap_rel": 1e-10, "tol_feas": 1e-10}


@dataclass(eq=False)
class UncertaintySet:
    """Ellipsoid {wbar : |wbar - center|_P^2 <= rho^2} of stacked disturbances."""

    P: np.ndarray
    rho: float
    center: np.ndarray

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.center = np.asarray(self.center, dtype=float).ravel()
        self.rho = float(self.rho)
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.P.shape != (self.center.size, self.center.size):
            raise ValueError("P must be square with the center's dimension")
        if np.abs(self.P - self.P.T).max() > 1e-10 * max(1.0, np.abs(self.P).max()):
            raise ValueError("P must be symmetric")
        if np.linalg.eigvalsh(self.P).min() <= 0:
            raise ValueError("P must be positive definite")


@dataclass
class ExpertSolution:
    """Full-horizon solution; ``value`` is the horizon objective (x_0 stage cost excluded)."""

    ubold: np.ndarray | None
    value: float | None
    status: str
    n_u: int
    duals: dict | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status == conic.OPTIMAL


def solve_nc_mpc(data: StackedMpcData, x, wbold=None) -> ExpertSolution:
    """Disturbance-aware MPC over the horizon; ``wbold=None`` (or zeros) is plain MPC."""
    x = np.asarray(x, dtype=float).ravel()
    if wbold is None:
        wbold = np.zeros(data.N * data.n_w)
    wbold = np.asarray(wbold, dtype=float).ravel()
    if x.size != data.n_x or wbold.size != data.N * data.n_w:
        raise ValueError("state or disturbance dimension mismatch")
    r = data.Abold @ x + data.Ebold @ wbold
    qp = QuadraticProgram(
        hessian=2.0 * data.input_hessian,
        linear_term=2.0 * data.Bbold.T @ (data.Qxbold @ r),
        ineq_lhs=data.G if data.G.shape[0] else None,
        ineq_rhs=(h_of_w(data, wbold) - data.F @ x) if data.G.shape[0] else None,
    )
    res = solve_qp(qp)
    if not res.is_optimal:
        return ExpertSolution(None, None, res.status, data.n_u)
    u = res.primal
    pred = r + data.Bbold @ u
    value = float(pred @ data.Qxbold @ pred + u @ data.Qubold @ u)
    return ExpertSolution(u, value, conic.OPTIMAL, data.n_u, duals={"ineq": res.duals["ineq"]})


def tighten(data: StackedMpcData, uset: UncertaintySet) -> np.ndarray:
    """Worst-case constraint rhs over the ellipsoid: state rows lose
    rho*|P^{-1/2} g_i| + g_i' center, input rows are disturbance-free."""
    gxe = data._grams["GxE"]
    if gxe.shape[0]:
        L = np.linalg.cholesky(uset.P)
        z = scipy.linalg.solve_triangular(L, gxe.T, lower=True)
        support = uset.rho * np.linalg.norm(z, axis=0) + gxe @ uset.center
        state_rows = data.hxbold - support
    else:
        state_rows = data.hxbold
    return np.concatenate([state_rows, data.hubold])


# ---------------------------------------------------------------------------
# robust expert


class _Whitened:
    """Constant pieces of the arrow reduction for one (data, P) pair."""

    def __init__(self, data: StackedMpcData, P: np.ndarray):
        g = data._grams
        ew, V = np.linalg.eigh(P)
        self.P = P
        self.P_half = (V * np.sqrt(ew)) @ V.T
        P_inv_half = (V / np.sqrt(ew)) @ V.T
        S_w = P_inv_half @ g["EQE"] @ P_inv_half
        d, U = np.linalg.eigh(0.5 * (S_w + S_w.T))
        self.d = d
        self.W1 = U.T @ P_inv_half          # whitens M(u, lam) into the arrow border
        self.W1_EQA = self.W1 @ g["EQA"]
        self.W1_EQB = self.W1 @ g["EQB"]


_whiten_cache: "weakref.WeakKeyDictionary[StackedMpcData, dict]" = weakref.WeakKeyDictionary()


def _whitened(data: StackedMpcData, P: np.ndarray) -> _Whitened:
    per_data = _whiten_cache.setdefault(data, {})
    key = P.tobytes()
    if key not in per_data:
        per_data[key] = _Whitened(data, P)
    return per_data[key]


def _secular_lambda(r2, d, rho, lam_floor):
    """Root of sum r_i^2/(lam-d_i)^2 = rho^2 on (max d, inf) by safeguarded bisection."""
    def excess(lam):
        return np.sum(r2 / (lam - d) ** 2) - rho ** 2

    lo = lam_floor
    if excess(lo) <= 0:
        return lo
    hi = max(lo * 2, lo + 1.0)
    while excess(hi) > 0:
        hi = hi * 4 + 1.0
        if hi > 1e300:
            return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _rmpc_polish(data, x, uset, wh, u, lam, hbar, rounds=8):
    """Coordinate descent on the exact dual upper bound d(lam, u).

    For fixed lam the bound is a strictly convex QP in u over the tightened
    polytope; for fixed u the multiplier solves a one-dimensional secular
    equation.  Both steps are solved to machine accuracy.
    """
    g = data._grams
    P, w, rho = uset.P, uset.center, uset.rho
    c1 = float(w @ P @ w - rho ** 2)
    q_w = wh.W1 @ (P @ w)           # border coefficient of lam
    m_x = wh.W1_EQA @ x             # constant border part from the state
    d = wh.d
    lam_floor = d.max() * (1 + 1e-12) + 1e-12
    BQAx = g["BQA"] @ x
    const2 = float(x @ g["AQA"] @ x)

    def dual_value(lam, u):
        b = m_x + wh.W1_EQB @ u + lam * q_w
        nu2 = float(u @ data.input_hessian @ u + 2 * BQAx @ u + const2)
        return float(np.sum(b ** 2 / (lam - d))) - lam * c1 + nu2

    lam = max(lam, lam_floor)
    best = dual_value(lam, u)
    for _ in range(rounds):
        # multiplier step: secular equation with residues fixed by u
        b_u = m_x + wh.W1_EQB @ u
        r = b_u + d * q_w
        lam_new = _secular_lambda(r ** 2, d, rho, lam_floor)
        # input step: QP in u at fixed lam
        K = (wh.W1_EQB.T / (lam_new - d)) @ wh.W1_EQB
        kq = wh.W1_EQB.T @ ((m_x + lam_new * q_w) / (lam_new - d))
        qp = QuadraticProgram(
            hessian=2.0 * (K + data.input_hessian),
            linear_term=2.0 * (kq + BQAx),
            ineq_lhs=data.G if data.G.shape[0] else None,
            ineq_rhs=(hbar - data.F @ x) if data.G.shape[0] else None,
        )
        res = solve_qp(qp)
        if not res.is_optimal:
            break
        val = dual_value(lam_new, res.primal)
        if val <= best + 1e-12 * max(1.0, abs(best)):
            improved = best - val
            u, lam, best = res.primal, lam_new, val
            if improved < 1e-12 * max(1.0, abs(best)):
                break
        else:
            break
    b = m_x + wh.W1_EQB @ u + lam * q_w
    gamma1 = float(np.sum(b ** 2 / (lam - d))) - lam * c1
    gamma2 = float(u @ data.input_hessian @ u + 2 * BQAx @ u + const2)
    return u, lam, gamma1, gamma2


def solve_nc_rmpc(data: StackedMpcData, x, uset: UncertaintySet) -> ExpertSolution:
    """Robust disturbance-aware MPC: worst-case objective over the ellipsoid,
    constraints tightened exactly.  Infeasibility of the tightened polytope is
    reported, never silently relaxed."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != data.n_x:
        raise ValueError("state dimension mismatch")
    if uset.center.size != data.N * data.n_w:
        raise ValueError("uncertainty set dimension mismatch")
    if uset.rho == 0.0:
        sol = solve_nc_mpc(data, x, uset.center)
        if sol.is_optimal:
            sol.duals = {"lam": None, "gamma1": None, "gamma2": None}
        return sol

    wh = _whitened(data, uset.P)
    hbar = tighten(data, uset)
    g = data._grams
    w, rho = uset.center, uset.rho
    c1 = float(w @ uset.P @ w - rho ** 2)
    q_w = wh.W1 @ (uset.P @ w)
    m_x = wh.W1_EQA @ x
    BQAx = g["BQA"] @ x
    const2 = float(x @ g["AQA"] @ x)

    n_u = data.N * data.n_u
    u = cp.Variable(n_u, name="u")
    lam = cp.Variable(name="lam", nonneg=True)
    g1 = cp.Variable(name="gamma1")
    g2 = cp.Variable(name="gamma2")
    t = cp.Variable(wh.d.size, name="t", nonneg=True)
    border = m_x + wh.W1_EQB @ u + lam * q_w
    slack = lam - wh.d
    constraints = [
        slack >= 0,
        cp.sum(t) <= g1 + lam * c1,
        g2 >= cp.sum_squares(data.input_hessian_sqrt @ u) + 2 * BQAx @ u + const2,
        cp.SOC(
            t + slack,
            cp.vstack([2 * cp.reshape(border, (1, wh.d.size), order="C"),
                       cp.reshape(t - slack, (1, wh.d.size), order="C")]),
            axis=0,
        ),
    ]
    if data.G.shape[0]:
        constraints.append(data.F @ x + data.G @ u <= hbar)
    problem = cp.Problem(cp.Minimize(g1 + g2), constraints)
    try:
        problem.solve(solver="CLARABEL", **_CLARABEL_OPTS)
    except cp.error.SolverError:
        try:
            problem.solve(solver="SCS", eps=1e-9, max_iters=100_000)
        except cp.error.SolverError:
            return ExpertSolution(None, None, conic.NUMERICAL_FAILURE, data.n_u)
    if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return ExpertSolution(None, None, conic.INFEASIBLE, data.n_u)
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return ExpertSolution(None, None, conic.NUMERICAL_FAILURE, data.n_u)

    u_val, lam_val, gamma1, gamma2 = _rmpc_polish(data, x, uset, wh, u.value, float(lam.value), hbar)
    if data.G.shape[0]:
        resid = (data.F @ x + data.G @ u_val - hbar).max()
        if resid > conic.FEAS_TOL * max(1.0, np.abs(hbar).max()):
            return ExpertSolution(None, None, conic.NUMERICAL_FAILURE, data.n_u)
    return ExpertSolution(
        u_val, gamma1 + gamma2, conic.OPTIMAL, data.n_u,
        duals={"lam": lam_val, "gamma1": gamma1, "gamma2": gamma2},
    )


def nc_rmpc_sdp(data: StackedMpcData, x, uset: UncertaintySet) -> SemidefiniteProgram:
    """The literal two-LMI semidefinite reformulation of the robust expert.

    Reference construction for cross-validation; :func:`solve_nc_rmpc` solves
    an equivalent but much smaller conic program.  Variable names: ``u``,
    ``lam``, ``gamma1``, ``gamma2``.
    """
    x = np.asarray(x, dtype=float).ravel()
    g = data._grams
    n_u, n_wN = data.N * data.n_u, data.N * data.n_w
    P, w, rho = uset.P, uset.center, uset.rho

    u = cp.Variable(n_u, name="u")
    lam = cp.Variable(name="lam")
    g1 = cp.Variable(name="gamma1")
    g2 = cp.Variable(name="gamma2")

    M = g["EQA"] @ x + g["EQB"] @ u + lam * (P @ w)
    corner1 = -g1 - lam * (float(w @ P @ w) - rho ** 2)
    lmi1 = cp.bmat([
        [cp.Constant(g["EQE"]) - lam * P, cp.reshape(M, (n_wN, 1), order="C")],
        [cp.reshape(M, (1, n_wN), order="C"), cp.reshape(corner1, (1, 1), order="C")],
    ])
    Ru = data.input_hessian_sqrt @ u
    corner2 = 2 * (g["BQA"] @ x) @ u + float(x @ g["AQA"] @ x) - g2
    lmi2 = cp.bmat([
        [cp.Constant(-np.eye(n_u)), cp.reshape(Ru, (n_u, 1), order="C")],
        [cp.reshape(Ru, (1, n_u), order="C"), cp.reshape(corner2, (1, 1), order="C")],
    ])
    linear = []
    if data.G.shape[0]:
        linear.append(data.F @ x + data.G @ u <= tighten(data, uset))
    return SemidefiniteProgram(
        variables=[u, lam, g1, g2],
        objective=g1 + g2,
        lmi_constraints=[(lmi1, conic.NSD), (lmi2, conic.NSD)],
        linear_ineqs=linear,
        nonneg_vars=[lam],
    )


def first_action(sol: ExpertSolution) -> np.ndarray:
    """First input block of an optimal horizon solution (the receding-horizon action)."""
    if not sol.is_optimal:
        if sol.status == conic.INFEASIBLE:
            raise InfeasibleError("expert problem is infeasible")
        raise NumericalError(f"expert solve ended with status {sol.status!r}")
    return np.array(sol.ubold[: sol.n_u])


def oblivious_policy(data: StackedMpcData, x) -> np.ndarray:
    """MPC that measures only the state: assumes zero disturbance over the horizon."""
    return first_action(solve_nc_mpc(data, x, None))


def dst_policy(data: StackedMpcData, x, w_next, w_forecast) -> np.ndarray:
    """MPC that measures the next disturbance and forecasts the remaining N-1 steps."""
    w_next = np.asarray(w_next, dtype=float).ravel()
    w_forecast = np.asarray(w_forecast, dtype=float).ravel()
    if w_next.size != data.n_w or w_forecast.size != (data.N - 1) * data.n_w:
        raise ValueError("disturbance preview has wrong length")
    return first_action(solve_nc_mpc(data, x, np.concatenate([w_next, w_forecast])))
