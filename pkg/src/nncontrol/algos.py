"""Backward-recursive neural solvers: NNContPI, Hybrid-Now, Hybrid-LaterQ and classification PI.

Every solver walks ``n = N-1, ..., 0``. At each step it draws a frozen training
sample (states from the training distribution, noises from the problem) and
fits a policy network by projected gradient descent. The hybrid solvers also
refresh a value estimate that the next (earlier) step optimizes against.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn
from .errors import ConfigurationError
from .optim import GdConfig, run_gd
from .problem import (
    BoxControls,
    ControlProblem,
    DiscreteNoise,
    FiniteControls,
    LocalizationSpec,
    draw_noise_paths,
    localize,
    localized,
    rollout,
)
from .quantize import Quantizer, clvq_train, quantizer_from_dict, quantizer_to_dict
from .rng import seed_stream

ALGORITHMS = ("nncontpi", "hybrid_now", "hybrid_laterq", "classification_pi")
MAX_ACTIONS = 64


# ---------------------------------------------------------------------------
# training distributions


@dataclass(frozen=True, eq=False)
class TrainingDistribution:
    """Law of the time-n training states.

    kinds: ``gaussian`` (per-step mean and std), ``uniform`` (box),
    ``empirical`` (per-step state clouds) and ``custom`` (callable).
    """

    kind: str
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    low: Optional[np.ndarray] = None
    high: Optional[np.ndarray] = None
    clouds: Optional[tuple] = None
    sampler: Optional[Callable] = None

    def draw(self, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            mean = self.mean[min(n, len(self.mean) - 1)]
            std = self.std[min(n, len(self.std) - 1)]
            return mean + std * rng.standard_normal((size, mean.shape[0]))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, (size, self.low.shape[0]))
        if self.kind == "empirical":
            cloud = self.clouds[n]
            if cloud.shape[0] == size:
                return cloud.copy()
            return cloud[rng.integers(0, cloud.shape[0], size)]
        return np.asarray(self.sampler(n, rng, size), dtype=float)

    def to_dict(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean.tolist(), "std": self.std.tolist()}
        if self.kind == "uniform":
            return {"kind": "uniform", "low": self.low.tolist(), "high": self.high.tolist()}
        return {"kind": self.kind}


def gaussian_training(mean, std) -> TrainingDistribution:
    """Exploitation design: ``N(m_n, r_n^2 I)`` per step (a single row applies to all steps)."""
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    std = np.atleast_1d(np.asarray(std, dtype=float))
    if np.any(std < 0):
        raise ConfigurationError("training std must be non-negative")
    if np.any(std == 0):
        warnings.warn("zero training radius: training states collapse onto the mean",
                      RuntimeWarning, stacklevel=2)
    return TrainingDistribution("gaussian", mean=mean, std=std)


def uniform_training(low, high) -> TrainingDistribution:
    low = np.atleast_1d(np.asarray(low, dtype=float))
    high = np.atleast_1d(np.asarray(high, dtype=float))
    if low.shape != high.shape or np.any(high <= low):
        raise ConfigurationError("uniform training box has zero volume")
    return TrainingDistribution("uniform", low=low, high=high)


def empirical_training(clouds: Sequence[np.ndarray]) -> TrainingDistribution:
    return TrainingDistribution("empirical", clouds=tuple(np.asarray(c, dtype=float) for c in clouds))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class NetworkShape:
    hidden_units: int = 16
    eta: float = 10.0
    gamma: float = 10.0
    init: str = "default"
    bias_scale: float = 1.0


@dataclass(frozen=True, eq=False)
class SolverConfig:
    algorithm: str
    sample_size: int
    training: TrainingDistribution
    policy_net: NetworkShape = field(default_factory=NetworkShape)
    value_net: NetworkShape = field(default_factory=NetworkShape)
    policy_gd: GdConfig = field(default_factory=GdConfig)
    value_gd: GdConfig = field(default_factory=GdConfig)
    quantizer_size: int = 64
    quantizer_steps: int = 1_000_000
    cost_bounds: Optional[tuple] = None  # (sup |f|, sup |g|)
    localization_radius: Optional[float] = None
    seed: int = 0
    max_actions: int = MAX_ACTIONS
    warm_start: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.sample_size < 1:
            raise ConfigurationError("sample size M must be >= 1")
        self.policy_gd.validate_for(self.sample_size)
        if self.algorithm in ("hybrid_now", "hybrid_laterq"):
            self.value_gd.validate_for(self.sample_size)
            if self.cost_bounds is None:
                raise ConfigurationError("hybrid solvers need cost_bounds (sup|f|, sup|g|)")
            fb, gb = self.cost_bounds
            if not (np.isfinite(fb) and np.isfinite(gb) and fb > 0 and gb > 0):
                raise ConfigurationError("cost bounds must be finite and positive")
        if self.algorithm == "hybrid_laterq" and self.quantizer_size < 1:
            raise ConfigurationError("quantizer size L must be >= 1")

    def value_bound(self, n: int, horizon: int) -> float:
        fb, gb = self.cost_bounds
        return (horizon - n) * fb + gb

    def echo(self) -> dict:
        def gd(c: GdConfig):
            d = asdict(c)
            return d

        return {
            "algorithm": self.algorithm,
            "sample_size": self.sample_size,
            "training": self.training.to_dict(),
            "policy_net": asdict(self.policy_net),
            "value_net": asdict(self.value_net),
            "policy_gd": gd(self.policy_gd),
            "value_gd": gd(self.value_gd),
            "quantizer_size": self.quantizer_size,
            "quantizer_steps": self.quantizer_steps,
            "cost_bounds": None if self.cost_bounds is None else list(self.cost_bounds),
            "localization_radius": self.localization_radius,
            "seed": self.seed,
            "max_actions": self.max_actions,
            "warm_start": self.warm_start,
        }


# ---------------------------------------------------------------------------
# value functions with input gradients


class TerminalValue:
    def __init__(self, problem: ControlProblem):
        self.problem = problem

    def __call__(self, x):
        return self.problem.terminal(np.atleast_2d(x))

    def grad(self, x):
        return self.problem.terminal_cost_grad(x)


class TruncatedValue:
    """Network output clamped to ``[-bound, bound]``."""

    def __init__(self, net: nn.ValueNetwork, bound: float):
        self.net, self.bound = net, bound

    def __call__(self, x):
        return np.clip(self.net(x), -self.bound, self.bound)

    def grad(self, x):
        raw = self.net(x)
        _, dx = self.net.backward(x, (np.abs(raw) < self.bound).astype(float), params=False)
        return dx


class QuantizedValue:
    """``x -> f(x, pi(x)) + sum_l p_l W(F(x, pi(x), e_l))``."""

    def __init__(self, problem: ControlProblem, policy, quantizer: Quantizer, nxt):
        self.problem, self.policy, self.quantizer, self.nxt = problem, policy, quantizer, nxt

    def __call__(self, x):
        x = np.atleast_2d(x)
        a = self.policy(x)
        total = self.problem.cost(x, a)
        for p, e in zip(self.quantizer.weights, self.quantizer.grid):
            ee = np.broadcast_to(e, (x.shape[0], e.shape[0]))
            total = total + p * self.nxt(self.problem.next_state(x, a, ee))
        return total

    def grad(self, x):
        pb = self.problem
        a = self.policy(x)
        fx, fa = pb.stage_cost_grad(x, a)
        gx, ga = fx.copy(), fa.copy()
        for p, e in zip(self.quantizer.weights, self.quantizer.grid):
            ee = np.broadcast_to(e, (x.shape[0], e.shape[0]))
            Fx, Fa = pb.dynamics_jac(x, a, ee)
            lam = p * self.nxt.grad(pb.next_state(x, a, ee))
            gx += np.einsum("mde,md->me", Fx, lam)
            ga += np.einsum("mdq,md->mq", Fa, lam)
        _, dx = self.policy.backward(x, ga, params=False)
        return gx + dx


class ArgmaxPolicy:
    """Pure strategy from a softmax network: play the most likely action (ties -> smallest index)."""

    def __init__(self, net: nn.SoftmaxPolicyNetwork, actions: np.ndarray):
        self.net, self.actions = net, np.asarray(actions, dtype=float)

    def indices(self, x):
        return np.argmax(self.net(x), axis=1)

    def __call__(self, x):
        return self.actions[self.indices(x)]


class ConstantPolicy:
    def __init__(self, action):
        self.action = np.atleast_1d(np.asarray(action, dtype=float))

    def __call__(self, x):
        return np.broadcast_to(self.action, (np.atleast_2d(x).shape[0], self.action.shape[0])).copy()


def rounded_policy(policy, actions) -> Callable:
    """Snap a continuous policy to the nearest element of a finite action set."""
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.shape[0] == 1 and actions.shape[1] > 1:
        actions = actions.T

    def act(x):
        a = policy(x)
        d = ((a[:, None, :] - actions[None]) ** 2).sum(axis=-1)
        return actions[np.argmin(d, axis=1)]

    return act


# ---------------------------------------------------------------------------
# solved sequence


@dataclass(eq=False)
class SolvedPolicySequence:
    problem: ControlProblem
    algorithm: str
    policies: list
    value_nets: Optional[list] = None
    value_bounds: Optional[list] = None
    quantizer: Optional[Quantizer] = None
    actions: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)  # per-step LossTrace objects, not serialized

    @property
    def horizon(self) -> int:
        return self.problem.horizon

    def policy_fns(self) -> list:
        if self.actions is not None:
            return [p if isinstance(p, ConstantPolicy) else ArgmaxPolicy(p, self.actions)
                    for p in self.policies]
        return list(self.policies)

    def value_function(self, n: int):
        """Estimated value ``V_n`` as a callable (hybrid solvers only)."""
        N = self.horizon
        if n == N:
            return TerminalValue(self.problem)
        if self.algorithm == "hybrid_now":
            return TruncatedValue(self.value_nets[n], self.value_bounds[n])
        if self.algorithm == "hybrid_laterq":
            nxt = TruncatedValue(self.value_nets[n + 1], self.value_bounds[n + 1])
            return QuantizedValue(self.problem, self.policies[n], self.quantizer, nxt)
        raise ConfigurationError(f"{self.algorithm} keeps no value networks; use estimate_value_pi")

    # -- persistence ----------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {
            "format": "nncontrol.solved",
            "version": 1,
            "algorithm": self.algorithm,
            "horizon": self.horizon,
            "value_bounds": self.value_bounds,
            "actions": None if self.actions is None else self.actions.tolist(),
            "metadata": self.metadata,
            "policies": [],
            "values": [],
        }
        for n, p in enumerate(self.policies):
            if isinstance(p, ConstantPolicy):
                manifest["policies"].append({"constant": p.action.tolist()})
                continue
            name = f"policy_{n}.json"
            _write_json(os.path.join(directory, name), nn.network_to_dict(p))
            manifest["policies"].append({"file": name})
        for n, v in enumerate(self.value_nets or []):
            if v is None:
                manifest["values"].append(None)
                continue
            name = f"value_{n}.json"
            _write_json(os.path.join(directory, name), nn.network_to_dict(v))
            manifest["values"].append(name)
        if self.quantizer is not None:
            _write_json(os.path.join(directory, "quantizer.json"), quantizer_to_dict(self.quantizer))
            manifest["quantizer"] = "quantizer.json"
        _write_json(os.path.join(directory, "manifest.json"), manifest)

    @classmethod
    def load(cls, directory, problem: ControlProblem) -> "SolvedPolicySequence":
        man = _read_json(os.path.join(directory, "manifest.json"))
        policies = []
        for entry in man["policies"]:
            if "constant" in entry:
                policies.append(ConstantPolicy(entry["constant"]))
            else:
                policies.append(nn.network_from_dict(_read_json(os.path.join(directory, entry["file"]))))
        values = None
        if man["values"]:
            values = [None if v is None else nn.network_from_dict(_read_json(os.path.join(directory, v)))
                      for v in man["values"]]
        quant = None
        if man.get("quantizer"):
            quant = quantizer_from_dict(_read_json(os.path.join(directory, man["quantizer"])))
        actions = None if man["actions"] is None else np.array(man["actions"], dtype=float)
        return cls(problem, man["algorithm"], policies, values, man["value_bounds"], quant, actions,
                   man["metadata"])


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# shared machinery


def _prepare(problem: ControlProblem, config: SolverConfig) -> ControlProblem:
    if config.localization_radius is not None:
        problem = localized(problem, LocalizationSpec(config.localization_radius))
    return problem


def _training_sample(problem, config, n, steps):
    M = config.sample_size
    X = config.training.draw(n, M, seed_stream(config.seed, "states", n))
    X = np.asarray(X, dtype=float).reshape(M, problem.state_dim)
    if config.localization_radius is not None:
        X = localize(LocalizationSpec(config.localization_radius), X)
    E = draw_noise_paths(problem, steps, M, seed_stream(config.seed, "noise", n))
    return X, E


def _policy_box(problem: ControlProblem):
    cs = problem.control_set
    if isinstance(cs, BoxControls):
        return cs.low, cs.high
    if cs is None:
        return None, None
    raise ConfigurationError("continuous policy networks need a box or unbounded control set; "
                             "use classification_pi for finite control sets")


def _new_policy(problem, config, n, previous):
    if config.warm_start and previous is not None:
        return previous
    low, high = _policy_box(problem)
    sh = config.policy_net
    return nn.init_policy(problem.state_dim, sh.hidden_units, problem.control_dim, sh.eta, sh.gamma,
                          seed=_net_seed(config, "policy", n), low=low, high=high,
                          scheme=sh.init, bias_scale=sh.bias_scale)


def _new_value(problem, config, n, previous):
    if config.warm_start and previous is not None:
        return previous
    sh = config.value_net
    return nn.init_value(problem.state_dim, sh.hidden_units, sh.eta, sh.gamma,
                         seed=_net_seed(config, "value", n), scheme=sh.init,
                         bias_scale=sh.bias_scale)


def _net_seed(config, what, n) -> int:
    return int(seed_stream(config.seed, "init-seed", what, n).integers(0, 2**31 - 1))


def _gd_config(gd: GdConfig, config: SolverConfig, what: str, n: int) -> GdConfig:
    return replace(gd, seed=_net_seed(config, f"gd-{what}", n) ^ gd.seed)


def _fit(template, loss_and_grad, M, gd):
    def post(theta):
        return template.with_params(theta).project().get_params()

    theta, trace = run_gd(loss_and_grad, template.get_params(), M, gd, post_step=post)
    return template.with_params(theta), trace


def _fit_regression(net, X, y, M, gd):
    def loss_and_grad(theta, idx):
        cur = net.with_params(theta)
        x = X[idx]
        r = cur(x) - y[idx]
        grads, _ = cur.backward(x, 2.0 * r / len(idx))
        return float(np.mean(r * r)), grads

    return _fit(net, loss_and_grad, M, gd)


def _fit_one_step_policy(problem, net, X, E0, value, M, gd):
    """Minimize mean f(x, A(x)) + V(F(x, A(x), e)) over the policy parameters."""
    def loss_and_grad(theta, idx):
        cur = net.with_params(theta)
        x, e = X[idx], E0[idx]
        a = cur(x)
        x1 = problem.next_state(x, a, e)
        loss = problem.cost(x, a) + value(x1)
        _, fa = problem.stage_cost_grad(x, a)
        _, Fa = problem.dynamics_jac(x, a, e)
        ga = fa + np.einsum("mdq,md->mq", Fa, value.grad(x1))
        grads, _ = cur.backward(x, ga / len(idx))
        return float(loss.mean()), grads

    return _fit(net, loss_and_grad, M, gd)


def _trace_record(trace) -> dict:
    return {"final_loss": trace.loss[-1], "steps": len(trace)}


# ---------------------------------------------------------------------------
# NNContPI


def solve_nncontpi(problem: ControlProblem, config: SolverConfig) -> SolvedPolicySequence:
    """Performance iteration: each policy minimizes the simulated full future cost."""
    if config.algorithm != "nncontpi":
        raise ConfigurationError("config.algorithm must be 'nncontpi'")
    problem = _prepare(problem, config)
    problem.require_gradients()
    N, M = problem.horizon, config.sample_size
    policies: list = [None] * N
    traces = {}
    for n in range(N - 1, -1, -1):
        X, E = _training_sample(problem, config, n, N - n)
        net = _new_policy(problem, config, n, policies[n + 1] if n + 1 < N else None)
        frozen = policies

        def loss_and_grad(theta, idx, n=n, X=X, E=E, net=net):
            cur = net.with_params(theta)
            x = X[idx]
            e = E[:, idx]
            xs, acts = [x], [cur(x)]
            cost = problem.cost(x, acts[0])
            xk = problem.next_state(x, acts[0], e[0])
            for k in range(n + 1, N):
                xs.append(xk)
                ak = frozen[k](xk)
                acts.append(ak)
                cost = cost + problem.cost(xk, ak)
                xk = problem.next_state(xk, ak, e[k - n])
            cost = cost + problem.terminal(xk)
            lam = problem.terminal_cost_grad(xk)
            for j in range(len(xs) - 1, 0, -1):
                k = n + j
                Fx, Fa = problem.dynamics_jac(xs[j], acts[j], e[j])
                fx, fa = problem.stage_cost_grad(xs[j], acts[j])
                u = fa + np.einsum("mdq,md->mq", Fa, lam)
                _, dpol = frozen[k].backward(xs[j], u, params=False)
                lam = fx + np.einsum("mde,md->me", Fx, lam) + dpol
            _, Fa = problem.dynamics_jac(x, acts[0], e[0])
            _, fa = problem.stage_cost_grad(x, acts[0])
            ga = fa + np.einsum("mdq,md->mq", Fa, lam)
            grads, _ = cur.backward(x, ga / len(idx))
            return float(cost.mean()), grads

        policies[n], trace = _fit(net, loss_and_grad, M, _gd_config(config.policy_gd, config, "policy", n))
        traces[n] = {"policy": _trace_record(trace), "policy_trace": trace}
    return SolvedPolicySequence(problem, "nncontpi", policies, metadata=_metadata(config, traces),
                                traces=_traces(traces))


def _metadata(config: SolverConfig, traces: dict) -> dict:
    losses = {str(n): {k: v for k, v in t.items() if not k.endswith("_trace")}
              for n, t in sorted(traces.items())}
    return {
        "M": config.sample_size,
        "K": config.policy_net.hidden_units,
        "gamma": config.policy_net.gamma,
        "eta": config.policy_net.eta,
        "seed": config.seed,
        "losses": losses,
        "config": config.echo(),
    }


def _traces(traces: dict) -> dict:
    return {n: {k[:-len("_trace")]: v for k, v in t.items() if k.endswith("_trace")}
            for n, t in traces.items()}


# ---------------------------------------------------------------------------
# hybrid solvers


def solve_hybrid_now(problem: ControlProblem, config: SolverConfig) -> SolvedPolicySequence:
    """One-step policy learning against the previous value estimate, then regress-now."""
    if config.algorithm != "hybrid_now":
        raise ConfigurationError("config.algorithm must be 'hybrid_now'")
    problem = _prepare(problem, config)
    problem.require_gradients()
    N, M = problem.horizon, config.sample_size
    policies: list = [None] * N
    value_nets: list = [None] * N
    bounds = [config.value_bound(n, N) for n in range(N + 1)]
    nxt = TerminalValue(problem)
    traces = {}
    for n in range(N - 1, -1, -1):
        X, E = _training_sample(problem, config, n, 1)
        net = _new_policy(problem, config, n, policies[n + 1] if n + 1 < N else None)
        pol, ptrace = _fit_one_step_policy(problem, net, X, E[0], nxt, M,
                                           _gd_config(config.policy_gd, config, "policy", n))
        policies[n] = pol
        a = pol(X)
        y = problem.cost(X, a) + nxt(problem.next_state(X, a, E[0]))
        vnet = _new_value(problem, config, n, value_nets[n + 1] if n + 1 < N else None)
        vnet, vtrace = _fit_regression(vnet, X, y, M, _gd_config(config.value_gd, config, "value", n))
        value_nets[n] = vnet
        nxt = TruncatedValue(vnet, bounds[n])
        traces[n] = {"policy": _trace_record(ptrace), "value": _trace_record(vtrace),
                     "policy_trace": ptrace, "value_trace": vtrace}
    return SolvedPolicySequence(problem, "hybrid_now", policies, value_nets, bounds,
                                metadata=_metadata(config, traces), traces=_traces(traces))


def noise_quantizer(problem: ControlProblem, config: SolverConfig) -> Quantizer:
    noise = problem.noise
    if isinstance(noise, DiscreteNoise):
        return Quantizer(noise.atoms, noise.probs, {"method": "exact_atoms"})
    return clvq_train(noise, config.quantizer_size, config.quantizer_steps,
                      seed=_net_seed(config, "quantizer", 0))


def solve_hybrid_laterq(problem: ControlProblem, config: SolverConfig,
                        quantizer: Optional[Quantizer] = None) -> SolvedPolicySequence:
    """One-step policy learning, later interpolation of V_{n+1}, quantized conditional expectation."""
    if config.algorithm != "hybrid_laterq":
        raise ConfigurationError("config.algorithm must be 'hybrid_laterq'")
    problem = _prepare(problem, config)
    problem.require_gradients()
    N, M = problem.horizon, config.sample_size
    quant = quantizer if quantizer is not None else noise_quantizer(problem, config)
    policies: list = [None] * N
    interp: list = [None] * (N + 1)  # interp[k] approximates V_k at later points, k = 1..N
    bounds = [config.value_bound(n, N) for n in range(N + 1)]
    nxt = TerminalValue(problem)
    traces = {}
    for n in range(N - 1, -1, -1):
        X, E = _training_sample(problem, config, n, 1)
        net = _new_policy(problem, config, n, policies[n + 1] if n + 1 < N else None)
        pol, ptrace = _fit_one_step_policy(problem, net, X, E[0], nxt, M,
                                           _gd_config(config.policy_gd, config, "policy", n))
        policies[n] = pol
        X1 = problem.next_state(X, pol(X), E[0])
        y = nxt(X1)
        vnet = _new_value(problem, config, n, interp[n + 2] if n + 2 <= N else None)
        vnet, vtrace = _fit_regression(vnet, X1, y, M, _gd_config(config.value_gd, config, "value", n))
        interp[n + 1] = vnet
        nxt = QuantizedValue(problem, pol, quant, TruncatedValue(vnet, bounds[n + 1]))
        traces[n] = {"policy": _trace_record(ptrace), "value": _trace_record(vtrace),
                     "policy_trace": ptrace, "value_trace": vtrace}
    meta = _metadata(config, traces)
    meta["quantizer_size"] = quant.size
    return SolvedPolicySequence(problem, "hybrid_laterq", policies, interp, bounds, quant,
                                metadata=meta, traces=_traces(traces))


# ---------------------------------------------------------------------------
# classification


def solve_classification_pi(problem: ControlProblem, config: SolverConfig) -> SolvedPolicySequence:
    """Performance iteration over a finite action set with a softmax policy."""
    if config.algorithm != "classification_pi":
        raise ConfigurationError("config.algorithm must be 'classification_pi'")
    cs = problem.control_set
    if not isinstance(cs, FiniteControls):
        raise ConfigurationError("classification_pi needs a finite control set")
    if cs.size > config.max_actions:
        raise ConfigurationError(
            f"{cs.size} actions exceed the limit of {config.max_actions} (cost grows as L*M*N)"
        )
    problem = _prepare(problem, config)
    N, M, L = problem.horizon, config.sample_size, cs.size
    actions = cs.actions
    nets: list = [None] * N
    policies: list = [None] * N
    traces = {}
    for n in range(N - 1, -1, -1):
        X, E = _training_sample(problem, config, n, N - n)
        if L == 1:
            nets[n] = ConstantPolicy(actions[0])
            policies[n] = nets[n]
            continue
        Y = np.empty((M, L))
        for l in range(L):
            pols = list(policies)
            pols[n] = ConstantPolicy(actions[l])
            _, _, Y[:, l] = rollout(problem, pols, X, E, start=n, check=False)
        sh = config.policy_net
        prev = nets[n + 1] if n + 1 < N and isinstance(nets[n + 1], nn.SoftmaxPolicyNetwork) else None
        net = prev if (config.warm_start and prev is not None) else nn.init_softmax(
            problem.state_dim, sh.hidden_units, L, sh.eta, sh.gamma,
            seed=_net_seed(config, "policy", n), scheme=sh.init, bias_scale=sh.bias_scale)

        def loss_and_grad(theta, idx, net=net, X=X, Y=Y):
            cur = net.with_params(theta)
            p = cur(X[idx])
            y = Y[idx]
            grads, _ = cur.backward(X[idx], y / len(idx))
            return float((p * y).sum(axis=1).mean()), grads

        nets[n], trace = _fit(net, loss_and_grad, M, _gd_config(config.policy_gd, config, "policy", n))
        policies[n] = ArgmaxPolicy(nets[n], actions)
        traces[n] = {"policy": _trace_record(trace), "policy_trace": trace}
    return SolvedPolicySequence(problem, "classification_pi", nets, actions=actions,
                                metadata=_metadata(config, traces), traces=_traces(traces))


SOLVERS = {
    "nncontpi": solve_nncontpi,
    "hybrid_now": solve_hybrid_now,
    "hybrid_laterq": solve_hybrid_laterq,
    "classification_pi": solve_classification_pi,
}


def solve(problem: ControlProblem, config: SolverConfig) -> SolvedPolicySequence:
    return SOLVERS[config.algorithm](problem, config)


# ---------------------------------------------------------------------------
# evaluation


def estimate_value_pi(problem: ControlProblem, solved, n: int, x, num_samples: int,
                      seed: int) -> tuple[float, float]:
    """Monte Carlo cost-to-go of the learned policies from ``X_n = x``: ``(mean, stderr)``."""
    policies = solved.policy_fns() if isinstance(solved, SolvedPolicySequence) else list(solved)
    if isinstance(solved, SolvedPolicySequence):
        problem = solved.problem if problem is None else problem
    N = problem.horizon
    if not 0 <= n <= N:
        raise ConfigurationError(f"time index {n} outside [0, {N}]")
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, problem.state_dim)
    if n == N:
        return float(problem.terminal(x)[0]), 0.0
    X = np.repeat(x, num_samples, axis=0)
    E = draw_noise_paths(problem, N - n, num_samples, seed_stream(seed, "evaluate", n))
    _, _, cost = rollout(problem, policies, X, E, start=n)
    if num_samples == 1:
        return float(cost[0]), 0.0
    return float(cost.mean()), float(cost.std(ddof=1) / np.sqrt(num_samples))


def policy_suboptimality(problem: ControlProblem, policies, reference, n: int, x,
                         num_samples: int, seed: int) -> tuple[float, float]:
    """Paired estimate of ``V^pi_n(x) - V^ref_n(x)``: both policy sequences see the same noise."""
    if isinstance(policies, SolvedPolicySequence):
        policies = policies.policy_fns()
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, problem.state_dim)
    X = np.repeat(x, num_samples, axis=0)
    E = draw_noise_paths(problem, problem.horizon - n, num_samples, seed_stream(seed, "evaluate", n))
    _, _, c1 = rollout(problem, list(policies), X, E, start=n)
    _, _, c0 = rollout(problem, list(reference), X, E, start=n)
    diff = c1 - c0
    se = diff.std(ddof=1) / np.sqrt(num_samples) if num_samples > 1 else 0.0
    return float(diff.mean()), float(se)


def simulate_state_clouds(problem: ControlProblem, policies, X0: np.ndarray, seed: int) -> list:
    """States visited at every time step by paths started at ``X0`` under ``policies``."""
    E = draw_noise_paths(problem, problem.horizon, X0.shape[0], seed_stream(seed, "clouds"))
    states, _, _ = rollout(problem, policies, X0, E)
    return [states[n] for n in range(problem.horizon)]


@dataclass(eq=False)
class TwoPhaseResult:
    phase1: SolvedPolicySequence
    phase2: SolvedPolicySequence
    training: TrainingDistribution


def design_training_sets(strategy: str, problem: ControlProblem, config: SolverConfig, **params):
    """Training-set strategies.

    ``exploit`` (params ``mean``, ``std``) and ``explore_uniform`` (``low``,
    ``high``) return a :class:`TrainingDistribution`. ``explore_then_exploit``
    (``low``, ``high``, optional ``x0``) solves once on uniform states, simulates
    ``M`` paths under the phase-1 policies, re-solves on those state clouds and
    returns a :class:`TwoPhaseResult`.
    """
    if strategy == "exploit":
        return gaussian_training(params["mean"], params["std"])
    if strategy == "explore_uniform":
        return uniform_training(params["low"], params["high"])
    if strategy != "explore_then_exploit":
        raise ConfigurationError(f"unknown training strategy {strategy!r}")
    uniform = uniform_training(params["low"], params["high"])
    phase1 = solve(problem, replace(config, training=uniform))
    M = config.sample_size
    x0 = params.get("x0")
    if x0 is None:
        X0 = uniform.draw(0, M, seed_stream(config.seed, "phase2-start"))
    else:
        X0 = np.repeat(np.atleast_1d(np.asarray(x0, dtype=float))[None], M, axis=0)
    clouds = simulate_state_clouds(phase1.problem, phase1.policy_fns(), X0, config.seed)
    training = empirical_training(clouds)
    phase2 = solve(problem, replace(config, training=training))
    return TwoPhaseResult(phase1, phase2, training)


# ---------------------------------------------------------------------------
# rho_M diagnostic for F(x, a, e) = b(x, a) + sigma(x, a) e with e ~ N(0, I_d)


def rho_bound(b_lip: float, sigma_lip: float, d: int, M: int) -> float:
    """Analytic bound ``[b]_L + d [sigma]_L sqrt(2 log(2 d M))``."""
    return b_lip + d * sigma_lip * np.sqrt(2.0 * np.log(2.0 * d * M))


def rho_empirical(b_lip: float, sigma_lip: float, d: int, M: int, replications: int,
                  seed: int) -> tuple[float, float]:
    """Mean over replications of ``max_m C(eps^m)`` with ``C(e) = [b]_L + [sigma]_L |e|``."""
    rng = seed_stream(seed, "rho", d, M)
    sups = np.empty(replications)
    for r in range(replications):
        eps = rng.standard_normal((M, d))
        sups[r] = b_lip + sigma_lip * np.linalg.norm(eps, axis=1).max()
    se = sups.std(ddof=1) / np.sqrt(replications) if replications > 1 else 0.0
    return float(sups.mean()), float(se)
