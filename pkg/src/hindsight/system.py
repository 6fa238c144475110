"""Linear nominal models, quadratic horizon costs, polytopic constraints,
and the condensed (stacked) horizon-N matrices used by every controller."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .conic import psd_sqrt, pseudo_inverse


def _as_matrix(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    return M


@dataclass(eq=False)
class LinearModel:
    """x+ = A x + B u + E w with E of full column rank (so pinv(E) E = I)."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        self.A = _as_matrix(self.A, "A")
        self.B = _as_matrix(self.B, "B")
        self.E = _as_matrix(self.E, "E")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n or self.E.shape[0] != n:
            raise ValueError("B and E must have as many rows as A")
        # raises if E is rank deficient
        self.E_pinv = pseudo_inverse(self.E)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.E.shape[1]

    def step(self, x, u, w) -> np.ndarray:
        return self.A @ x + self.B @ u + self.E @ w


@dataclass(eq=False)
class QuadraticCost:
    """Stage cost |x|^2_Qx + |u|^2_Qu and terminal cost |x|^2_Qf."""

    Qx: np.ndarray
    Qu: np.ndarray
    Qf: np.ndarray

    def __post_init__(self):
        self.Qx = _as_matrix(self.Qx, "Qx")
        self.Qu = _as_matrix(self.Qu, "Qu")
        self.Qf = _as_matrix(self.Qf, "Qf")
        for name, M in (("Qx", self.Qx), ("Qf", self.Qf)):
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-10 * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.Qu + self.Qu.T)).min() <= 0:
            raise ValueError("Qu must be positive definite")

    def stage(self, x, u) -> float:
        return float(x @ self.Qx @ x + u @ self.Qu @ u)


@dataclass(eq=False)
class PolytopicConstraints:
    """Per-step sets {x : Gx x <= hx} and {u : Gu u <= hu}; zero rows mean unconstrained."""

    Gx: np.ndarray = None
    hx: np.ndarray = None
    Gu: np.ndarray = None
    hu: np.ndarray = None

    def __post_init__(self):
        def norm(G, h, dim_hint):
            if G is None:
                return np.zeros((0, dim_hint)), np.zeros(0)
            G = _as_matrix(G, "constraint matrix")
            h = np.asarray(h, dtype=float).ravel()
            if G.shape[0] != h.shape[0]:
                raise ValueError("constraint rows and rhs length differ")
            if not np.all(np.isfinite(h)):
                raise ValueError("constraint rhs must be finite")
            return G, h

        self.Gx, self.hx = norm(self.Gx, self.hx, 0)
        self.Gu, self.hu = norm(self.Gu, self.hu, 0)

    @classmethod
    def empty(cls, n_x: int, n_u: int) -> "PolytopicConstraints":
        c = cls()
        c.Gx = np.zeros((0, n_x))
        c.Gu = np.zeros((0, n_u))
        return c

    @classmethod
    def box(cls, n_x: int, n_u: int, x_bounds: dict | None = None, u_bounds: dict | None = None):
        """Interval constraints per coordinate, e.g. ``x_bounds={0: 1.0}`` for |x_0| <= 1."""
        def rows(bounds, dim):
            G, h = [], []
            for idx, lim in (bounds or {}).items():
                row = np.zeros(dim)
                row[idx] = 1.0
                G.extend([row, -row])
                h.extend([float(lim), float(lim)])
            if not G:
                return np.zeros((0, dim)), np.zeros(0)
            return np.vstack(G), np.asarray(h)

        Gx, hx = rows(x_bounds, n_x)
        Gu, hu = rows(u_bounds, n_u)
        c = cls(Gx=Gx, hx=hx, Gu=Gu, hu=hu)
        if Gx.shape[0] == 0:
            c.Gx = np.zeros((0, n_x))
        if Gu.shape[0] == 0:
            c.Gu = np.zeros((0, n_u))
        return c


def toeplitz_blocks(A: np.ndarray, B: np.ndarray, N: int) -> np.ndarray:
    """Block lower-triangular Toeplitz [[B, 0, ...], [AB, B, ...], ..., [A^{N-1}B, ..., B]]."""
    n, m = B.shape
    blocks = [B]
    for _ in range(1, N):
        blocks.append(A @ blocks[-1])
    T = np.zeros((N * n, N * m))
    for i in range(N):
        for j in range(i + 1):
            T[i * n:(i + 1) * n, j * m:(j + 1) * m] = blocks[i - j]
    return T


@dataclass(eq=False)
class StackedMpcData:
    """Condensed horizon-N data: predicted states are Abold x + Bbold u + Ebold w,
    the horizon objective is |.|^2_Qxbold + |u|^2_Qubold, and the constraint set is
    {u : F x + G u <= h(w)} with h assembled by :func:`h_of_w`."""

    Abold: np.ndarray
    Bbold: np.ndarray
    Ebold: np.ndarray
    Qxbold: np.ndarray
    Qubold: np.ndarray
    F: np.ndarray
    G: np.ndarray
    Gxbold: np.ndarray
    hxbold: np.ndarray
    hubold: np.ndarray
    N: int
    model: LinearModel = None
    cost: QuadraticCost = None
    cons: PolytopicConstraints = None

    @property
    def n_x(self) -> int:
        return self.Abold.shape[1]

    @property
    def n_u(self) -> int:
        return self.Bbold.shape[1] // self.N

    @property
    def n_w(self) -> int:
        return self.Ebold.shape[1] // self.N

    @cached_property
    def input_hessian(self) -> np.ndarray:
        """Bbold' Qxbold Bbold + Qubold, the quadratic weight on stacked inputs."""
        H = self.Bbold.T @ self.Qxbold @ self.Bbold + self.Qubold
        return 0.5 * (H + H.T)

    @cached_property
    def input_hessian_sqrt(self) -> np.ndarray:
        return psd_sqrt(self.input_hessian)

    @cached_property
    def _grams(self) -> dict:
        """Constant products reused by the expert solvers."""
        QE = self.Qxbold @ self.Ebold
        return {
            "EQE": self.Ebold.T @ QE,
            "EQA": self.Ebold.T @ self.Qxbold @ self.Abold,
            "EQB": self.Ebold.T @ self.Qxbold @ self.Bbold,
            "BQA": self.Bbold.T @ self.Qxbold @ self.Abold,
            "AQA": self.Abold.T @ self.Qxbold @ self.Abold,
            "GxE": self.Gxbold @ self.Ebold,
        }


def stack(model: LinearModel, cost: QuadraticCost, cons: PolytopicConstraints, N: int) -> StackedMpcData:
    """Condense model, cost and per-step constraints over an N-step horizon.

    State constraints apply to the predicted states x_1..x_N; x_0 is data.
    """
    if N < 1:
        raise ValueError("horizon must be at least 1")
    n_x, n_u = model.n_x, model.n_u
    if cost.Qx.shape[0] != n_x or cost.Qu.shape[0] != n_u:
        raise ValueError("cost dimensions do not match the model")
    Gx = cons.Gx if cons.Gx.size else np.zeros((0, n_x))
    Gu = cons.Gu if cons.Gu.size else np.zeros((0, n_u))
    if Gx.shape[0] and Gx.shape[1] != n_x:
        raise ValueError("state constraint width does not match the model")
    if Gu.shape[0] and Gu.shape[1] != n_u:
        raise ValueError("input constraint width does not match the model")

    powers = [model.A]
    for _ in range(1, N):
        powers.append(model.A @ powers[-1])
    Abold = np.vstack(powers)
    Bbold = toeplitz_blocks(model.A, model.B, N)
    Ebold = toeplitz_blocks(model.A, model.E, N)

    if N == 1:
        Qxbold = cost.Qf.copy()
    else:
        Qxbold = np.zeros((N * n_x, N * n_x))
        for k in range(N - 1):
            Qxbold[k * n_x:(k + 1) * n_x, k * n_x:(k + 1) * n_x] = cost.Qx
        Qxbold[(N - 1) * n_x:, (N - 1) * n_x:] = cost.Qf
    Qubold = np.kron(np.eye(N), cost.Qu)

    Gxbold = np.kron(np.eye(N), Gx) if Gx.shape[0] else np.zeros((0, N * n_x))
    Gubold = np.kron(np.eye(N), Gu) if Gu.shape[0] else np.zeros((0, N * n_u))
    hxbold = np.tile(cons.hx, N)
    hubold = np.tile(cons.hu, N)

    F = np.vstack([Gxbold @ Abold, np.zeros((Gubold.shape[0], n_x))])
    G = np.vstack([Gxbold @ Bbold, Gubold])
    return StackedMpcData(Abold, Bbold, Ebold, Qxbold, Qubold, F, G,
                          Gxbold, hxbold, hubold, N, model, cost, cons)


def rollout(model: LinearModel, x0, useq, wseq) -> np.ndarray:
    """Propagate x_{k+1} = A x_k + B u_k + E w_{k+1}; returns states x_1..x_N."""
    useq = np.atleast_2d(np.asarray(useq, dtype=float))
    wseq = np.atleast_2d(np.asarray(wseq, dtype=float))
    if useq.shape[0] != wseq.shape[0]:
        raise ValueError("input and disturbance sequences must have equal length")
    x = np.asarray(x0, dtype=float)
    states = np.zeros((useq.shape[0], model.n_x))
    for k in range(useq.shape[0]):
        x = model.step(x, useq[k], wseq[k])
        states[k] = x
    return states


def stacked_prediction(data: StackedMpcData, x, ubold, wbold) -> np.ndarray:
    """Abold x + Bbold u + Ebold w, the stacked predicted states x_1..x_N."""
    ubold = np.asarray(ubold, dtype=float).ravel()
    wbold = np.asarray(wbold, dtype=float).ravel()
    if ubold.shape[0] != data.N * data.n_u:
        raise ValueError("stacked input has wrong length")
    if wbold.shape[0] != data.N * data.n_w:
        raise ValueError("stacked disturbance has wrong length")
    return data.Abold @ np.asarray(x, dtype=float) + data.Bbold @ ubold + data.Ebold @ wbold


def h_of_w(data: StackedMpcData, wbold) -> np.ndarray:
    """Constraint rhs [hx - Gx E w ; hu] for a given stacked disturbance."""
    wbold = np.asarray(wbold, dtype=float).ravel()
    if wbold.shape[0] != data.N * data.n_w:
        raise ValueError("stacked disturbance has wrong length")
    return np.concatenate([data.hxbold - data._grams["GxE"] @ wbold, data.hubold])


def stack_vec(seq) -> np.ndarray:
    """(N, n) sequence -> flat stacked vector of length N*n."""
    return np.asarray(seq, dtype=float).reshape(-1)


def unstack_vec(vec, n: int) -> np.ndarray:
    """Flat stacked vector -> (N, n) sequence."""
    vec = np.asarray(vec, dtype=float).ravel()
    return vec.reshape(-1, n)
