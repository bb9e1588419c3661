"""Batch, stochastic and mini-batch gradient descent with optional projection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .rng import seed_stream

VARIANTS = ("batch", "stochastic", "minibatch")


@dataclass(frozen=True)
class Schedule:
    """Learning rate ``gamma_k``: constant ``c`` or inverse-time ``c / (k + k0)``."""

    kind: str = "constant"
    c: float = 0.1
    k0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "inverse_time"):
            raise ConfigurationError(f"unknown schedule kind {self.kind!r}")
        if not self.c > 0 or (self.kind == "inverse_time" and not self.k0 > 0):
            raise ConfigurationError("schedule parameters must be positive")

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self.c
        return self.c / (k + self.k0)


def schedule(kind: str, **params) -> Schedule:
    return Schedule(kind, **params)


@dataclass(frozen=True)
class GdConfig:
    """Gradient descent settings.

    ``iterations`` counts update steps for the batch variant and epochs (full
    passes over the sample) for the stochastic and mini-batch variants.
    ``num_batches`` is the number of mini-batches per epoch and must divide M.
    """

    variant: str = "minibatch"
    iterations: int = 100
    num_batches: int = 1
    lr: Schedule = field(default_factory=Schedule)
    seed: int = 0
    early_stop: bool = False
    early_stop_tol: float = 1e-10
    early_stop_window: int = 50

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown gradient descent variant {self.variant!r}")
        if self.iterations < 1 or self.num_batches < 1:
            raise ConfigurationError("iterations and num_batches must be >= 1")

    def validate_for(self, M: int) -> None:
        if M < 1:
            raise ConfigurationError("sample size M must be >= 1")
        if self.variant == "minibatch" and M % self.num_batches:
            raise ConfigurationError(
                f"num_batches={self.num_batches} does not divide sample size M={M}"
            )


@dataclass
class LossTrace:
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss)

    def rows(self):
        return [(k, l, g) for k, (l, g) in enumerate(zip(self.loss, self.grad_norm))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "gradient_norm"])
            for row in self.rows():
                w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])


def _index_blocks(variant: str, M: int, cfg: GdConfig, rng):
    """Yield the sample indices used by each update step."""
    if variant == "batch":
        idx = np.arange(M)
        for _ in range(cfg.iterations):
            yield idx
    elif variant == "stochastic":
        for _ in range(cfg.iterations):
            for m in range(M):
                yield np.array([m])
    else:
        size = M // cfg.num_batches
        for _ in range(cfg.iterations):
            perm = rng.permutation(M)
            for b in range(cfg.num_batches):
                yield perm[b * size:(b + 1) * size]


def run_gd(
    loss_and_grad: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    M: int,
    config: GdConfig,
    post_step: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> tuple[np.ndarray, LossTrace]:
    """Minimize an empirical loss over a sample of size ``M``.

    ``loss_and_grad(params, idx)`` returns the mean loss over the samples
    ``idx`` and its gradient. ``post_step`` (typically a constraint projection)
    is applied after every update. The loss recorded for step ``k`` is the one
    evaluated at the iterate before that update.
    """
    config.validate_for(M)
    theta = np.array(params, dtype=float, copy=True)
    rng = seed_stream(config.seed, "gd", config.variant)
    trace = LossTrace()
    w = config.early_stop_window
    for k, idx in enumerate(_index_blocks(config.variant, M, config, rng)):
        loss, grad = loss_and_grad(theta, idx)
        loss = float(loss)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(k)
        trace.loss.append(loss)
        with np.errstate(over="ignore", invalid="ignore"):
            trace.grad_norm.append(float(np.linalg.norm(grad)))
            theta = theta - config.lr(k) * grad
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(k)
        if post_step is not None:
            theta = post_step(theta)
        if config.early_stop and k >= w and trace.loss[k - w] - loss < config.early_stop_tol:
            break
    return theta, trace
