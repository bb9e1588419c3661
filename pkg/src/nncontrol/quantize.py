"""L2 vector quantization of the noise law (CLVQ / Lloyd) and quantized expectations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .errors import ConfigurationError, DegenerateGridError
from .problem import NoiseSampler
from .rng import seed_stream

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Quantizer:
    grid: np.ndarray  # (K, d_E)
    weights: np.ndarray  # (K,)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        w = np.asarray(self.weights, dtype=float)
        if grid.shape[0] < 1 or w.shape != (grid.shape[0],):
            raise ConfigurationError("quantizer needs a non-empty grid and one weight per point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("quantizer weights must be non-negative and sum to 1")
        if grid.shape[0] > 1 and _min_pairwise(grid) <= 0:
            raise DegenerateGridError("quantizer grid has repeated points")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.shape[1]


def _min_pairwise(grid: np.ndarray) -> float:
    d = np.linalg.norm(grid[:, None, :] - grid[None, :, :], axis=-1)
    d[np.diag_indices_from(d)] = np.inf
    return float(d.min())


def nearest_indices(grid: np.ndarray, points: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Index of the nearest grid point for each row of ``points`` (ties -> smallest index)."""
    out = np.empty(points.shape[0], dtype=np.int64)
    for s in range(0, points.shape[0], chunk):
        p = points[s:s + chunk]
        d2 = ((p[:, None, :] - grid[None, :, :]) ** 2).sum(axis=-1)
        out[s:s + chunk] = np.argmin(d2, axis=1)
    return out


def project(quantizer: Quantizer, e) -> tuple[int, np.ndarray]:
    """Voronoi projection of one noise point. Returns the 0-based index and the grid point."""
    e = np.atleast_1d(np.asarray(e, dtype=float)).reshape(1, quantizer.dim)
    i = int(nearest_indices(quantizer.grid, e)[0])
    return i, quantizer.grid[i].copy()


@numba.njit(cache=True)
def _clvq_loop(grid, draws, a, b):
    K, d = grid.shape
    for t in range(draws.shape[0]):
        best, best_d = 0, np.inf
        for k in range(K):
            s = 0.0
            for j in range(d):
                diff = draws[t, j] - grid[k, j]
                s += diff * diff
            if s < best_d:
                best_d, best = s, k
        g = a / (b + t)
        for j in range(d):
            grid[best, j] += g * (draws[t, j] - grid[best, j])
    return grid


def estimate_weights(grid: np.ndarray, samples: np.ndarray) -> np.ndarray:
    counts = np.bincount(nearest_indices(grid, samples), minlength=grid.shape[0]).astype(float)
    return counts / counts.sum()


def lloyd_refine(grid: np.ndarray, samples: np.ndarray, iterations: int = 50) -> np.ndarray:
    """Alternate nearest-point partition and centroid update on a fixed sample."""
    grid = np.array(grid, dtype=float, copy=True)
    for _ in range(iterations):
        idx = nearest_indices(grid, samples)
        for k in range(grid.shape[0]):
            cell = samples[idx == k]
            if len(cell):
                grid[k] = cell.mean(axis=0)
    return grid


def clvq_train(
    sampler: NoiseSampler,
    K: int,
    steps: int,
    seed: int,
    a: float | None = None,
    b: float | None = None,
    weight_samples: int = 100_000,
    lloyd_iterations: int = 0,
) -> Quantizer:
    """Competitive learning vector quantization (Kohonen) for ``sampler``.

    The grid starts at ``K`` draws from the sampler and moves the winning point
    by ``gamma_t (eps - e_win)`` with ``gamma_t = a / (b + t)``; ``a`` and ``b``
    default to ``20 K`` since each cell only sees about ``1/K`` of the draws and
    a smaller gain leaves tail cells unconverged. Weights are the
    empirical Voronoi frequencies of a fresh sample. ``lloyd_iterations > 0``
    polishes the grid with Lloyd steps on that same fresh sample.
    """
    if K < 1 or steps < 1:
        raise ConfigurationError("K and steps must be >= 1")
    a = 20.0 * K if a is None else float(a)
    b = 20.0 * K if b is None else float(b)
    if not (a > 0 and b > 0):
        raise ConfigurationError("CLVQ step parameters must be positive")
    rng = seed_stream(seed, "clvq", K)
    init = sampler.draw(rng, K)
    if K > 1:
        probe = np.vstack([init, sampler.draw(rng, 256)])
        if np.all(probe == probe[0]):
            raise DegenerateGridError("sampler is constant; cannot place more than one grid point")
    draws = sampler.draw(rng, steps)
    grid = _clvq_loop(init.copy(), draws, a, b)
    fresh = sampler.draw(seed_stream(seed, "clvq-weights", K), weight_samples)
    if lloyd_iterations:
        grid = lloyd_refine(grid, fresh, lloyd_iterations)
    if K > 1 and _min_pairwise(grid) <= 0:
        raise DegenerateGridError("CLVQ grid collapsed onto repeated points")
    order = np.lexsort(grid.T[::-1])
    grid = grid[order]
    return Quantizer(grid, estimate_weights(grid, fresh),
                     {"K": K, "steps": steps, "seed": seed, "a": a, "b": b,
                      "lloyd_iterations": lloyd_iterations})


def distortion(quantizer: Quantizer, sampler: NoiseSampler, num_samples: int, seed: int) -> float:
    """Empirical mean squared distance ``E|eps - Proj(eps)|^2``."""
    if num_samples < 1:
        raise ConfigurationError("num_samples must be >= 1")
    x = sampler.draw(seed_stream(seed, "distortion"), num_samples)
    return sample_distortion(quantizer, x)


def sample_distortion(quantizer: Quantizer, samples: np.ndarray) -> float:
    idx = nearest_indices(quantizer.grid, samples)
    return float(((samples - quantizer.grid[idx]) ** 2).sum(axis=1).mean())


def quantized_expectation(quantizer: Quantizer, W, F, x, a) -> np.ndarray:
    """``sum_l p_l W(F(x, a, e_l))`` for a batch of states ``x (M, d)`` and controls ``a (M, q)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    total = np.zeros(x.shape[0])
    for p, e in zip(quantizer.weights, quantizer.grid):
        if p == 0.0:
            continue
        ee = np.broadcast_to(e, (x.shape[0], e.shape[0]))
        total += p * np.asarray(W(F(x, a, ee)), dtype=float).reshape(-1)
    return total


def lloyd_normal_1d(K: int, iterations: int = 10_000, tol: float = 1e-14) -> Quantizer:
    """Optimal K-point quantizer of N(0, 1) by exact Lloyd iteration on the density.

    Cell probabilities and centroids use the closed-form normal cdf/pdf, so no
    sampling is involved.
    """
    x = stats.norm.ppf((np.arange(K) + 0.5) / K)
    for _ in range(iterations):
        edges = np.concatenate([[-np.inf], 0.5 * (x[1:] + x[:-1]), [np.inf]])
        p = np.diff(stats.norm.cdf(edges))
        new = (stats.norm.pdf(edges[:-1]) - stats.norm.pdf(edges[1:])) / p
        done = np.max(np.abs(new - x)) < tol
        x = new
        if done:
            break
    edges = np.concatenate([[-np.inf], 0.5 * (x[1:] + x[:-1]), [np.inf]])
    p = np.diff(stats.norm.cdf(edges))
    return Quantizer(x[:, None], p / p.sum(), {"K": K, "method": "lloyd_normal_1d"})


def lloyd_normal_1d_distortion(q: Quantizer) -> float:
    """Exact distortion of a 1-D stationary quantizer of N(0, 1): ``1 - sum p e^2``."""
    return float(1.0 - np.sum(q.weights * q.grid[:, 0] ** 2))


# ---------------------------------------------------------------------------
# serialization


def quantizer_to_dict(q: Quantizer) -> dict:
    return {
        "format": "nncontrol.quantizer",
        "version": FORMAT_VERSION,
        "grid": q.grid.tolist(),
        "weights": q.weights.tolist(),
        "metadata": dict(q.metadata),
    }


def quantizer_from_dict(data: dict) -> Quantizer:
    if data.get("format") != "nncontrol.quantizer" or data.get("version") != FORMAT_VERSION:
        raise ConfigurationError("not a supported serialized quantizer")
    return Quantizer(np.array(data["grid"], dtype=float), np.array(data["weights"], dtype=float),
                     dict(data.get("metadata", {})))


def dumps(q: Quantizer) -> str:
    return json.dumps(quantizer_to_dict(q), sort_keys=True)


def loads(text: str) -> Quantizer:
    return quantizer_from_dict(json.loads(text))
