"""Reference solutions: exact grid dynamic programming and the discrete-time LQ Riccati recursion."""

from __future__ import annotations

import csv
import itertools
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, ConfigurationError
from .problem import ControlProblem

MAX_GRID_DIM = 3


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Product state lattice, finite control grid and discrete noise law.

    ``axes`` holds one sorted coordinate array per state dimension; the state
    grid is their Cartesian product in C order.
    """

    axes: tuple
    controls: np.ndarray  # (C, q)
    noise_atoms: np.ndarray  # (J, d_E)
    noise_probs: np.ndarray  # (J,)

    def __post_init__(self):
        axes = tuple(np.sort(np.asarray(a, dtype=float).ravel()) for a in self.axes)
        if not axes or any(len(a) == 0 for a in axes):
            raise ConfigurationError("grid DP needs a non-empty state grid")
        if len(axes) > MAX_GRID_DIM:
            raise ConfigurationError(f"grid DP is limited to d <= {MAX_GRID_DIM}")
        controls = np.asarray(self.controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        atoms = np.asarray(self.noise_atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        probs = np.asarray(self.noise_probs, dtype=float)
        if controls.shape[0] == 0 or atoms.shape[0] == 0:
            raise ConfigurationError("grid DP needs non-empty control and noise grids")
        if probs.shape != (atoms.shape[0],) or np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
            raise ConfigurationError("noise probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "noise_atoms", atoms)
        object.__setattr__(self, "noise_probs", probs)

    @property
    def states(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.axes)), dtype=float)

    @property
    def num_states(self) -> int:
        return int(np.prod([len(a) for a in self.axes]))

    def nearest(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the nearest lattice point, coordinate by coordinate."""
        flat = np.zeros(x.shape[0], dtype=np.int64)
        for j, ax in enumerate(self.axes):
            pos = np.clip(np.searchsorted(ax, x[:, j]), 1, max(len(ax) - 1, 1))
            if len(ax) == 1:
                idx = np.zeros(x.shape[0], dtype=np.int64)
            else:
                left, right = ax[pos - 1], ax[pos]
                idx = np.where(x[:, j] - left <= right - x[:, j], pos - 1, pos)
            flat = flat * len(ax) + idx
        return flat

    def clipped(self, x: np.ndarray) -> bool:
        for j, ax in enumerate(self.axes):
            half = 0.5 * (ax[1] - ax[0]) if len(ax) > 1 else 0.0
            if np.any(x[:, j] < ax[0] - half - 1e-12) or np.any(x[:, j] > ax[-1] + half + 1e-12):
                return True
        return False

    @classmethod
    def from_quantizer(cls, axes, controls, quantizer) -> "GridSpec":
        return cls(tuple(axes), controls, quantizer.grid, quantizer.weights)


@dataclass(frozen=True, eq=False)
class GridSolution:
    values: np.ndarray  # (N+1, S)
    actions: np.ndarray  # (N, S) control indices
    q_values: np.ndarray  # (N, S, C)
    grid: GridSpec

    def value(self, n: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.values[n][self.grid.nearest(x)]

    def policy(self, n: int):
        """Feedback map at time ``n``: nearest lattice point's optimal control."""
        def act(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return self.grid.controls[self.actions[n][self.grid.nearest(x)]]
        return act

    def value_fn(self, n: int):
        return lambda x: self.value(n, x)


def grid_dp_solve(problem: ControlProblem, grid: GridSpec) -> GridSolution:
    """Exact backward induction on the finite model; ties go to the smallest control index."""
    S, C, J = grid.num_states, grid.controls.shape[0], grid.noise_atoms.shape[0]
    N = problem.horizon
    states = grid.states
    # successor table is time-homogeneous, so build it once
    xs = np.repeat(states, C * J, axis=0)
    acts = np.tile(np.repeat(grid.controls, J, axis=0), (S, 1))
    noise = np.tile(grid.noise_atoms, (S * C, 1))
    succ_x = problem.next_state(xs, acts, noise)
    if grid.clipped(succ_x):
        warnings.warn("successor states leave the grid; nearest-neighbour clipping applied",
                      RuntimeWarning, stacklevel=2)
    succ = grid.nearest(succ_x).reshape(S, C, J)
    stage = problem.cost(np.repeat(states, C, axis=0), np.tile(grid.controls, (S, 1))).reshape(S, C)

    values = np.empty((N + 1, S))
    actions = np.empty((N, S), dtype=np.int64)
    qs = np.empty((N, S, C))
    values[N] = problem.terminal(states)
    for n in range(N - 1, -1, -1):
        q = stage + values[n + 1][succ] @ grid.noise_probs
        qs[n] = q
        actions[n] = np.argmin(q, axis=1)
        values[n] = q[np.arange(S), actions[n]]
    return GridSolution(values, actions, qs, grid)


def dp_residual(problem: ControlProblem, sol: GridSolution) -> float:
    """Max |V_n - min_a Q_n| recomputed from scratch; zero for an exact solve."""
    redo = grid_dp_solve(problem, sol.grid)
    return float(np.max(np.abs(redo.values - sol.values)))


def export_grid_csv(sol: GridSolution, path) -> None:
    states = sol.grid.states
    d = states.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n"] + [f"x{j}" for j in range(d)] + ["value", "action_index"])
        for n in range(sol.values.shape[0]):
            for s in range(states.shape[0]):
                act = sol.actions[n, s] if n < sol.actions.shape[0] else ""
                w.writerow([n] + [repr(float(v)) for v in states[s]]
                           + [repr(float(sol.values[n, s])), act])


# ---------------------------------------------------------------------------
# linear-quadratic


@dataclass(frozen=True, eq=False)
class LqSpec:
    """``x' = A x + B a + Sigma eps``, stage cost ``x'Qx + a'Ra``, terminal ``x'Q_T x``."""

    A: np.ndarray
    B: np.ndarray
    Sigma: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    QT: np.ndarray
    horizon: int

    def __post_init__(self):
        def mat(v):
            return np.atleast_2d(np.asarray(v, dtype=float))

        A, B, Sig, Q, R, QT = (mat(v) for v in (self.A, self.B, self.Sigma, self.Q, self.R, self.QT))
        d, q = B.shape
        if A.shape != (d, d) or Q.shape != (d, d) or QT.shape != (d, d) or R.shape != (q, q):
            raise ConfigurationError("inconsistent LQ matrix shapes")
        if Sig.shape[0] != d:
            raise ConfigurationError("Sigma must have d rows")
        for name, m in (("Q", Q), ("R", R), ("QT", QT)):
            if not np.allclose(m, m.T):
                raise ConfigurationError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ConfigurationError("R must be positive definite")
        if min(np.linalg.eigvalsh(Q).min(), np.linalg.eigvalsh(QT).min()) < -1e-12:
            raise ConfigurationError("Q and QT must be positive semidefinite")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")
        for name, m in zip(("A", "B", "Sigma", "Q", "R", "QT"), (A, B, Sig, Q, R, QT)):
            object.__setattr__(self, name, m)

    @property
    def state_dim(self) -> int:
        return self.B.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.Sigma.shape[1]


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    gains: np.ndarray  # (N, q, d); a_n(x) = -K_n x
    P: np.ndarray  # (N+1, d, d)
    c: np.ndarray  # (N+1,)

    def value(self, n: int, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.einsum("md,de,me->m", x, self.P[n], x) + self.c[n]

    def policy(self, n: int):
        K = self.gains[n]
        return lambda x: -np.atleast_2d(np.asarray(x, dtype=float)) @ K.T

    def value_fn(self, n: int):
        return lambda x: self.value(n, x)


def riccati_solve(spec: LqSpec, cond_limit: float = 1e12) -> RiccatiSolution:
    A, B, Sig, Q, R = spec.A, spec.B, spec.Sigma, spec.Q, spec.R
    N, d, q = spec.horizon, spec.state_dim, spec.control_dim
    P = np.empty((N + 1, d, d))
    c = np.empty(N + 1)
    K = np.empty((N, q, d))
    P[N], c[N] = spec.QT, 0.0
    for n in range(N - 1, -1, -1):
        Pn = P[n + 1]
        S = R + B.T @ Pn @ B
        if np.linalg.cond(S) > cond_limit:
            raise ConditioningError(f"R + B'PB is singular at step {n}")
        K[n] = np.linalg.solve(S, B.T @ Pn @ A)
        new = Q + A.T @ Pn @ A - A.T @ Pn @ B @ K[n]
        P[n] = 0.5 * (new + new.T)
        c[n] = c[n + 1] + np.trace(Sig.T @ Pn @ Sig)
    return RiccatiSolution(K, P, c)
