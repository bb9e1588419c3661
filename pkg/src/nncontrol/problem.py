"""Finite-horizon MDP data model: dynamics, costs, simulation and diagnostics.

All user callables are batched. States are arrays of shape ``(M, d)``, controls
``(M, q)`` and noises ``(M, d_E)``. Stage costs return ``(M,)``, the terminal
cost returns ``(M,)``.

Optional derivative callables (needed by the gradient-based solvers):

* ``dynamics_jac(x, a, e) -> (dF/dx of shape (M, d, d), dF/da of shape (M, d, q))``
* ``stage_cost_grad(x, a) -> (df/dx (M, d), df/da (M, q))``
* ``terminal_cost_grad(x) -> dg/dx (M, d)``
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ConditioningError, DomainViolationError
from .rng import seed_stream

CONTROL_TOL = 1e-9

Array = np.ndarray
Policy = Callable[[Array], Array]
ValueFn = Callable[[Array], Array]


# ---------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSampler:
    """i.i.d. noise law. ``sample(rng, size)`` must return ``(size, dim)``."""

    dim: int
    sample: Callable[[np.random.Generator, int], Array]
    name: str = "custom"

    def draw(self, rng: np.random.Generator, size: int) -> Array:
        out = np.asarray(self.sample(rng, size), dtype=float).reshape(size, self.dim)
        return out


def gaussian_noise(dim: int, scale: float = 1.0) -> NoiseSampler:
    def _sample(rng, size):
        return scale * rng.standard_normal((size, dim))

    return NoiseSampler(dim, _sample, name=f"gaussian(dim={dim},scale={scale})")


@dataclass(frozen=True)
class DiscreteNoise(NoiseSampler):
    """Noise supported on finitely many atoms; exposes the law for exact oracles."""

    atoms: Array = field(default=None, repr=False)
    probs: Array = field(default=None, repr=False)


def discrete_noise(atoms, probs) -> DiscreteNoise:
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (atoms.shape[0],) or np.any(probs < 0):
        raise ConfigurationError("discrete noise needs one non-negative probability per atom")
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ConfigurationError(f"noise probabilities sum to {probs.sum()}, not 1")
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0

    def _sample(rng, size):
        idx = np.searchsorted(cdf, rng.random(size), side="right")
        return atoms[np.minimum(idx, len(probs) - 1)]

    return DiscreteNoise(atoms.shape[1], _sample, name="discrete", atoms=atoms, probs=probs)


# ---------------------------------------------------------------------------
# control sets


@dataclass(frozen=True)
class BoxControls:
    low: Array
    high: Array

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        if low.shape != high.shape or np.any(high <= low):
            raise ConfigurationError("box controls need low < high componentwise")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    def contains(self, a: Array, tol: float = CONTROL_TOL) -> Array:
        return np.all((a >= self.low - tol) & (a <= self.high + tol), axis=-1)


@dataclass(frozen=True)
class FiniteControls:
    actions: Array  # (L, q)

    def __post_init__(self):
        acts = np.asarray(self.actions, dtype=float)
        if acts.ndim == 1:
            acts = acts[:, None]
        if acts.shape[0] < 1:
            raise ConfigurationError("finite control set must contain at least one action")
        object.__setattr__(self, "actions", acts)

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    def contains(self, a: Array, tol: float = CONTROL_TOL) -> Array:
        d = np.abs(a[:, None, :] - self.actions[None, :, :]).max(axis=-1)
        return d.min(axis=1) <= tol


# ---------------------------------------------------------------------------
# problem


@dataclass(frozen=True)
class ControlProblem:
    horizon: int
    state_dim: int
    control_dim: int
    dynamics: Callable[[Array, Array, Array], Array]
    stage_cost: Callable[[Array, Array], Array]
    terminal_cost: Callable[[Array], Array]
    noise: NoiseSampler
    control_set: BoxControls | FiniteControls | None = None
    dynamics_jac: Optional[Callable] = None
    stage_cost_grad: Optional[Callable] = None
    terminal_cost_grad: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.horizon < 1 or self.state_dim < 1 or self.control_dim < 1:
            raise ConfigurationError("horizon, state_dim and control_dim must be positive")
        cs = self.control_set
        if isinstance(cs, BoxControls) and cs.low.shape != (self.control_dim,):
            raise ConfigurationError("control box dimension differs from control_dim")
        if isinstance(cs, FiniteControls) and cs.actions.shape[1] != self.control_dim:
            raise ConfigurationError("finite actions dimension differs from control_dim")

    @property
    def differentiable(self) -> bool:
        return None not in (self.dynamics_jac, self.stage_cost_grad, self.terminal_cost_grad)

    def require_gradients(self) -> None:
        if not self.differentiable:
            raise ConfigurationError(
                f"problem {self.name!r} does not supply dynamics/cost derivatives"
            )

    def check_controls(self, a: Array) -> None:
        if self.control_set is None:
            return
        ok = self.control_set.contains(a)
        if not np.all(ok):
            bad = a[~ok][0]
            raise DomainViolationError(f"control {bad} outside the declared control set")

    # batched evaluation helpers -------------------------------------------------

    def next_state(self, x: Array, a: Array, e: Array) -> Array:
        return np.asarray(self.dynamics(x, a, e), dtype=float).reshape(x.shape[0], self.state_dim)

    def cost(self, x: Array, a: Array) -> Array:
        return np.asarray(self.stage_cost(x, a), dtype=float).reshape(x.shape[0])

    def terminal(self, x: Array) -> Array:
        return np.asarray(self.terminal_cost(x), dtype=float).reshape(x.shape[0])


def _as_point(v, dim: int, what: str) -> Array:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (dim,):
        raise ConfigurationError(f"{what} has shape {v.shape}, expected ({dim},)")
    return v


def step(problem: ControlProblem, x, a, e) -> Array:
    """One transition ``F(x, a, e)`` for a single state."""
    x = _as_point(x, problem.state_dim, "state")
    a = _as_point(a, problem.control_dim, "control")
    e = _as_point(e, problem.noise.dim, "noise")
    return problem.next_state(x[None], a[None], e[None])[0]


@dataclass(frozen=True)
class Trajectory:
    states: Array  # (N+1, d)
    controls: Array  # (N, q)
    noises: Array  # (N, d_E); noises[n] drives the move n -> n+1
    realized_cost: float

    def recompute_cost(self, problem: ControlProblem) -> float:
        stage = sum(
            float(problem.cost(self.states[n][None], self.controls[n][None])[0])
            for n in range(len(self.controls))
        )
        return stage + float(problem.terminal(self.states[-1][None])[0])

    def replay_states(self, problem: ControlProblem) -> Array:
        xs = [self.states[0]]
        for n in range(len(self.controls)):
            xs.append(step(problem, xs[-1], self.controls[n], self.noises[n]))
        return np.array(xs)


def draw_noise_paths(problem: ControlProblem, steps: int, size: int, rng) -> Array:
    """Noise block of shape ``(steps, size, d_E)``; row k drives step k."""
    return np.stack([problem.noise.draw(rng, size) for _ in range(steps)]) if steps else np.zeros(
        (0, size, problem.noise.dim)
    )


def rollout(
    problem: ControlProblem,
    policies: Sequence[Policy],
    x: Array,
    noises: Array,
    start: int = 0,
    check: bool = True,
) -> tuple[Array, Array, Array]:
    """Simulate a batch of paths from time ``start`` to the horizon.

    ``policies`` is indexed by absolute time. ``noises[k]`` drives step
    ``start + k``. Returns ``(states (steps+1, M, d), controls (steps, M, q),
    costs (M,))``.
    """
    N = problem.horizon
    steps = N - start
    states = [np.asarray(x, dtype=float)]
    controls = []
    total = np.zeros(x.shape[0])
    for k in range(steps):
        n = start + k
        xn = states[-1]
        a = np.asarray(policies[n](xn), dtype=float).reshape(xn.shape[0], problem.control_dim)
        if check:
            problem.check_controls(a)
        total = total + problem.cost(xn, a)
        states.append(problem.next_state(xn, a, noises[k]))
        controls.append(a)
    total = total + problem.terminal(states[-1])
    if not np.all(np.isfinite(total)):
        raise ConditioningError("non-finite simulated cost")
    ctrl = np.stack(controls) if controls else np.zeros((0, x.shape[0], problem.control_dim))
    return np.stack(states), ctrl, total


def simulate(problem: ControlProblem, policies: Sequence[Policy], x0, seed: int) -> Trajectory:
    if len(policies) != problem.horizon:
        raise ConfigurationError(f"need {problem.horizon} policies, got {len(policies)}")
    x0 = _as_point(x0, problem.state_dim, "initial state")
    noises = draw_noise_paths(problem, problem.horizon, 1, seed_stream(seed, "simulate"))
    states, controls, cost = rollout(problem, policies, x0[None], noises)
    return Trajectory(states[:, 0], controls[:, 0], noises[:, 0], float(cost[0]))


# ---------------------------------------------------------------------------
# penalties


@dataclass(frozen=True)
class PenaltySpec:
    """Relaxed state/control constraints ``h_k(x, a) = 0`` and ``h_k(x, a) >= 0``.

    ``coefficients`` lists the equality weights first, then inequality weights.
    ``terminal_penalty`` is an optional state-only penalty added to ``g``.
    Optional ``*_grads`` give ``(dh/dx, dh/da)`` per constraint so the relaxed
    problem keeps its derivatives.
    """

    equality: tuple = ()
    inequality: tuple = ()
    coefficients: tuple = ()
    terminal_penalty: Optional[Callable[[Array], Array]] = None
    equality_grads: Optional[tuple] = None
    inequality_grads: Optional[tuple] = None
    terminal_penalty_grad: Optional[Callable[[Array], Array]] = None

    def __post_init__(self):
        n = len(self.equality) + len(self.inequality)
        if len(self.coefficients) != n:
            raise ConfigurationError(f"expected {n} penalty coefficients, got {len(self.coefficients)}")
        if any(not (mu > 0) for mu in self.coefficients):
            raise ConfigurationError("penalty coefficients must be positive")

    def value(self, x: Array, a: Array) -> Array:
        out = np.zeros(x.shape[0])
        p = len(self.equality)
        for mu, h in zip(self.coefficients[:p], self.equality):
            out += mu * np.asarray(h(x, a), dtype=float).reshape(-1) ** 2
        for mu, h in zip(self.coefficients[p:], self.inequality):
            out += mu * np.maximum(0.0, -np.asarray(h(x, a), dtype=float).reshape(-1))
        return out

    def gradient(self, x: Array, a: Array) -> tuple[Array, Array]:
        gx = np.zeros_like(x)
        ga = np.zeros_like(a)
        p = len(self.equality)
        for mu, h, dh in zip(self.coefficients[:p], self.equality, self.equality_grads):
            hv = np.asarray(h(x, a), dtype=float).reshape(-1, 1)
            hx, ha = dh(x, a)
            gx += 2 * mu * hv * hx
            ga += 2 * mu * hv * ha
        for mu, h, dh in zip(self.coefficients[p:], self.inequality, self.inequality_grads):
            active = (np.asarray(h(x, a), dtype=float).reshape(-1, 1) < 0).astype(float)
            hx, ha = dh(x, a)
            gx -= mu * active * hx
            ga -= mu * active * ha
        return gx, ga


def penalized_costs(problem: ControlProblem, penalty: PenaltySpec) -> ControlProblem:
    """Return ``problem`` with stage cost ``f + L`` (and ``g + L_T`` if given)."""
    f, g = problem.stage_cost, problem.terminal_cost
    lt = penalty.terminal_penalty

    def stage(x, a):
        return np.asarray(f(x, a), dtype=float).reshape(-1) + penalty.value(x, a)

    def terminal(x):
        base = np.asarray(g(x), dtype=float).reshape(-1)
        return base if lt is None else base + np.asarray(lt(x), dtype=float).reshape(-1)

    has_grads = (
        problem.stage_cost_grad is not None
        and (not penalty.equality or penalty.equality_grads is not None)
        and (not penalty.inequality or penalty.inequality_grads is not None)
    )
    stage_grad = None
    if has_grads:
        def stage_grad(x, a):
            fx, fa = problem.stage_cost_grad(x, a)
            px, pa = penalty.gradient(x, a)
            return fx + px, fa + pa

    term_grad = problem.terminal_cost_grad
    if lt is not None:
        if term_grad is not None and penalty.terminal_penalty_grad is not None:
            base_grad = term_grad

            def term_grad(x):
                return base_grad(x) + penalty.terminal_penalty_grad(x)
        else:
            term_grad = None

    return replace(
        problem,
        stage_cost=stage,
        terminal_cost=terminal,
        stage_cost_grad=stage_grad,
        terminal_cost_grad=term_grad,
        name=f"{problem.name}+penalty",
    )


# ---------------------------------------------------------------------------
# localization


@dataclass(frozen=True)
class LocalizationSpec:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigurationError("localization radius must be positive")


def localize(spec: LocalizationSpec, x) -> Array:
    """Euclidean projection onto the closed ball of radius ``spec.radius``.

    Works on a single state ``(d,)`` or a batch ``(M, d)``.
    """
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norm > spec.radius, spec.radius / np.where(norm > 0, norm, 1.0), 1.0)
    return x * scale


def _localize_jac(spec: LocalizationSpec, y: Array) -> Array:
    M, d = y.shape
    norm = np.linalg.norm(y, axis=1)
    jac = np.broadcast_to(np.eye(d), (M, d, d)).copy()
    out = norm > spec.radius
    if np.any(out):
        u = y[out] / norm[out, None]
        jac[out] = (spec.radius / norm[out])[:, None, None] * (
            np.eye(d)[None] - u[:, :, None] * u[:, None, :]
        )
    return jac


def localized(problem: ControlProblem, spec: LocalizationSpec) -> ControlProblem:
    """Problem whose successor states are projected onto the ball of radius R."""
    F, jac = problem.dynamics, problem.dynamics_jac

    def dynamics(x, a, e):
        return localize(spec, F(x, a, e))

    loc_jac = None
    if jac is not None:
        def loc_jac(x, a, e):
            Fx, Fa = jac(x, a, e)
            P = _localize_jac(spec, problem.next_state(x, a, e))
            return P @ Fx, P @ Fa

    return replace(problem, dynamics=dynamics, dynamics_jac=loc_jac,
                   name=f"{problem.name}@R={spec.radius}")


# ---------------------------------------------------------------------------
# martingale diagnostic


def martingale_drift(
    problem: ControlProblem,
    policies: Sequence[Policy],
    value_estimates: Sequence[ValueFn],
    n: int,
    x,
    num_samples: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[S_{n+1} - S_n | X_n = x]``.

    The drift is ``E[V_{n+1}(X_{n+1})] + f(x, a_n(x)) - V_n(x)``. It vanishes for
    the exact value function under an optimal policy and is non-negative under
    any policy. Returns ``(drift, standard_error)``.
    """
    N = problem.horizon
    if not 0 <= n < N:
        raise ConfigurationError(f"time index {n} outside [0, {N})")
    if len(value_estimates) != N + 1:
        raise ConfigurationError("value_estimates must hold V_0..V_N")
    if num_samples < 1:
        raise ConfigurationError("num_samples must be >= 1")
    x = _as_point(x, problem.state_dim, "state")[None]
    a = np.asarray(policies[n](x), dtype=float).reshape(1, problem.control_dim)
    problem.check_controls(a)
    e = problem.noise.draw(seed_stream(seed, "drift", n), num_samples)
    xs = np.repeat(x, num_samples, axis=0)
    x1 = problem.next_state(xs, np.repeat(a, num_samples, axis=0), e)
    nxt = np.asarray(value_estimates[n + 1](x1), dtype=float).reshape(-1)
    base = float(problem.cost(x, a)[0]) - float(np.asarray(value_estimates[n](x)).reshape(-1)[0])
    terms = nxt + base
    se = float(terms.std(ddof=1) / np.sqrt(num_samples)) if num_samples > 1 else 0.0
    return float(terms.mean()), se
