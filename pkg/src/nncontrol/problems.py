"""Built-in problems selectable by name."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .oracle import GridSpec, LqSpec
from .problem import BoxControls, ControlProblem, FiniteControls, discrete_noise, gaussian_noise


def lq_problem(spec: LqSpec, control_box=None) -> ControlProblem:
    """Linear dynamics with Gaussian noise and quadratic costs, with exact derivatives."""
    A, B, Sig, Q, R, QT = spec.A, spec.B, spec.Sigma, spec.Q, spec.R, spec.QT
    d, q = spec.state_dim, spec.control_dim

    def F(x, a, e):
        return x @ A.T + a @ B.T + e @ Sig.T

    def f(x, a):
        return np.einsum("md,de,me->m", x, Q, x) + np.einsum("mq,qr,mr->m", a, R, a)

    def g(x):
        return np.einsum("md,de,me->m", x, QT, x)

    def F_jac(x, a, e):
        M = x.shape[0]
        return np.broadcast_to(A, (M, d, d)), np.broadcast_to(B, (M, d, q))

    def f_grad(x, a):
        return x @ (Q + Q.T), a @ (R + R.T)

    def g_grad(x):
        return x @ (QT + QT.T)

    box = None if control_box is None else BoxControls(*control_box)
    return ControlProblem(
        spec.horizon, d, q, F, f, g, gaussian_noise(spec.noise_dim), box,
        F_jac, f_grad, g_grad, name="lq",
    )


def scalar_lq_spec(A=1.0, B=1.0, Sigma=1.0, Q=0.1, R=1.0, QT=1.0, horizon=3) -> LqSpec:
    return LqSpec(A, B, Sigma, Q, R, QT, horizon)


# ---------------------------------------------------------------------------
# finite 1-D inventory-style problem with an exact finite model

TOY_ATOMS = np.array([-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0])
TOY_PROBS = np.array([0.02, 0.05, 0.13, 0.25, 0.25, 0.17, 0.10, 0.03])


def grid_toy_problem(
    horizon: int = 4,
    half_width: int = 10,
    actions=(-3.0, 0.0, 3.0),
    action_cost: float = 1.0,
    state_cost: float = 0.05,
    terminal_weight: float = 0.1,
    relaxed: bool = False,
) -> ControlProblem:
    """Integer state on ``[-half_width, half_width]``, three pushes, eight noise atoms.

    ``x' = clip(x + a + e)`` stays on the integer lattice, so the grid DP on
    ``2*half_width + 1`` states is the exact finite MDP of the simulated problem.
    ``relaxed=True`` replaces the finite action set by its bounding box and
    attaches (sub)derivatives, for continuous-policy solvers.
    """
    acts = np.asarray(actions, dtype=float)
    noise = discrete_noise(TOY_ATOMS, TOY_PROBS)
    lo, hi = -float(half_width), float(half_width)

    def F(x, a, e):
        return np.clip(x + a + e, lo, hi)

    def f(x, a):
        return state_cost * x[:, 0] ** 2 + action_cost * np.abs(a[:, 0])

    def g(x):
        return terminal_weight * x[:, 0] ** 2

    if not relaxed:
        return ControlProblem(horizon, 1, 1, F, f, g, noise, FiniteControls(acts), name="grid_toy")

    def F_jac(x, a, e):
        inside = ((x + a + e > lo) & (x + a + e < hi)).astype(float)[:, :, None]
        return inside, inside

    def f_grad(x, a):
        return 2 * state_cost * x, action_cost * np.sign(a)

    def g_grad(x):
        return 2 * terminal_weight * x

    box = BoxControls([acts.min()], [acts.max()])
    return ControlProblem(horizon, 1, 1, F, f, g, noise, box, F_jac, f_grad, g_grad,
                          name="grid_toy_relaxed")


def grid_toy_spec(problem: ControlProblem, half_width: int = 10) -> GridSpec:
    axis = np.arange(-half_width, half_width + 1, dtype=float)
    return GridSpec((axis,), problem.control_set.actions, problem.noise.atoms, problem.noise.probs)


def separable_problem(horizon: int = 3, target: float = 1.0, box=(-3.0, 3.0)) -> ControlProblem:
    """Deterministic ``f = (a - target)^2``, ``g = 0``, ``x' = x``; optimum is ``a = target``."""
    def F(x, a, e):
        return x.copy()

    def f(x, a):
        return (a[:, 0] - target) ** 2

    def g(x):
        return np.zeros(x.shape[0])

    def F_jac(x, a, e):
        M = x.shape[0]
        return np.broadcast_to(np.eye(1), (M, 1, 1)), np.zeros((M, 1, 1))

    def f_grad(x, a):
        return np.zeros_like(x), 2 * (a - target)

    def g_grad(x):
        return np.zeros_like(x)

    return ControlProblem(horizon, 1, 1, F, f, g, gaussian_noise(1, 0.0),
                          BoxControls([box[0]], [box[1]]), F_jac, f_grad, g_grad, name="separable")


def build_problem(name: str, params: dict | None = None) -> ControlProblem:
    params = dict(params or {})
    if name == "lq":
        box = params.pop("control_box", None)
        return lq_problem(scalar_lq_spec(**params), box)
    if name == "grid_toy":
        return grid_toy_problem(**params)
    if name == "separable":
        return separable_problem(**params)
    raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}")


PROBLEMS = ("lq", "grid_toy", "separable")
