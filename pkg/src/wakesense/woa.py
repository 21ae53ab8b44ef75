"""Whale optimisation over the task-weight box.

Each iteration shrinks the coefficient ``a`` linearly from 2 to 0. With
probability one half an agent follows a logarithmic spiral around the best
whale. Otherwise each coordinate either closes in on the best whale
(``|A| < 1``) or moves relative to a randomly picked whale to explore.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dataset import LabeledDataset
from .estimator import (ModelConfig, TaskWeights, TrainHyper, evaluate, fitness, train)
from .estimator.losses import WEIGHT_BOUNDS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WoaConfig:
    population: int = 6
    max_iters: int = 10
    lower: float = WEIGHT_BOUNDS[0]
    upper: float = WEIGHT_BOUNDS[1]
    dim: int = 3
    spiral_b: float = 1.0
    seed: int = 0
    max_resamples: int = 10  # attempts to replace an agent whose objective is NaN

    def __post_init__(self):
        if self.population < 1 or self.max_iters < 1 or self.dim < 1:
            raise ValueError("population, max_iters and dim must be >= 1")
        if not self.lower < self.upper:
            raise ValueError(f"empty bounds [{self.lower}, {self.upper}]")


@dataclass
class WoaResult:
    best_position: np.ndarray
    best_fitness: float
    trace: list[float]  # best-so-far after initialisation and after each iteration
    positions: list[np.ndarray] = field(default_factory=list)  # population per iteration
    n_evals: int = 0
    eval_seconds: list[float] = field(default_factory=list)


def update_agent(x, best, partner, a, rng, b=1.0, force=None):
    """One WOA move of position ``x``.

    ``A = 2a*r1 - a`` and ``C = 2*r2`` are drawn per component, so the
    choice between circling the best whale (``|A| < 1``) and exploring
    around ``partner`` is made per component too. ``force`` pins the move to
    "encircle", "search" or "spiral" (testing aid).
    """
    x = np.asarray(x, dtype=float)
    A = 2.0 * a * rng.random(x.shape) - a
    C = 2.0 * rng.random(x.shape)
    p = rng.random()
    l = rng.uniform(-1.0, 1.0)
    if force is None:
        force = "spiral" if p >= 0.5 else "shrink"
    if force == "spiral":
        return np.abs(best - x) * math.exp(b * l) * math.cos(2.0 * math.pi * l) + best
    encircle = best - A * np.abs(C * best - x)
    search = partner - A * np.abs(C * partner - x)
    if force == "shrink":
        return np.where(np.abs(A) < 1.0, encircle, search)
    if force == "encircle":
        return encircle
    if force == "search":
        return search
    raise ValueError(f"unknown move {force!r}")


def woa_optimize(objective: Callable[[np.ndarray], float], config: WoaConfig = WoaConfig(),
                 on_iteration: Callable[[int, WoaResult], None] | None = None) -> WoaResult:
    """Minimise ``objective`` over the box ``[lower, upper]**dim``."""
    rng = np.random.default_rng(config.seed)
    lo, hi = config.lower, config.upper
    result = WoaResult(np.zeros(config.dim), math.inf, [])

    def sample():
        return rng.uniform(lo, hi, config.dim)

    def evaluate_agent(pos):
        for _ in range(config.max_resamples + 1):
            t0 = time.perf_counter()
            f = float(objective(pos.copy()))
            result.eval_seconds.append(time.perf_counter() - t0)
            result.n_evals += 1
            if not math.isnan(f):
                return pos, f
            log.warning("objective returned NaN at %s; resampling agent", pos)
            pos = sample()
        return pos, math.inf

    def absorb(pop, fit):
        j = int(np.argmin(fit))
        if fit[j] < result.best_fitness:
            result.best_fitness = float(fit[j])
            result.best_position = pop[j].copy()
        result.trace.append(result.best_fitness)
        result.positions.append(pop.copy())

    pop = np.array([sample() for _ in range(config.population)])
    fit = np.empty(config.population)
    for i in range(config.population):
        pop[i], fit[i] = evaluate_agent(pop[i])
    absorb(pop, fit)

    for it in range(config.max_iters):
        a = 2.0 - 2.0 * it / config.max_iters
        best = result.best_position.copy()
        for i in range(config.population):
            partner = pop[rng.integers(config.population)]
            pop[i] = np.clip(update_agent(pop[i], best, partner, a, rng, config.spiral_b), lo, hi)
        for i in range(config.population):
            pop[i], fit[i] = evaluate_agent(pop[i])
        absorb(pop, fit)
        if on_iteration is not None:
            on_iteration(it + 1, result)
    return result


@dataclass
class TuneResult:
    weights: TaskWeights
    proxy_fitness: float
    search: WoaResult
    evaluations: list[dict]


def tune_task_weights(dataset: LabeledDataset, config: ModelConfig, hyper: TrainHyper = TrainHyper(),
                      woa: WoaConfig = WoaConfig(), proxy_epochs: int = 20,
                      on_eval: Callable[[dict], None] | None = None) -> TuneResult:
    """Search task weights with WOA, scoring each by a short proxy training run.

    Every proxy run uses the same training seed, so differences between
    agents come from the weights alone. Scores are cached on the position
    rounded to four decimals.
    """
    proxy = TrainHyper(batch=hyper.batch, lr=hyper.lr, epochs=proxy_epochs, seed=hyper.seed,
                       eval_every=0)
    cache: dict[tuple, float] = {}
    evaluations: list[dict] = []

    def objective(pos: np.ndarray) -> float:
        key = tuple(np.round(pos, 4))
        if key in cache:
            return cache[key]
        w = TaskWeights(*np.clip(pos, woa.lower, woa.upper))
        t0 = time.perf_counter()
        params, _ = train(dataset, config, w, proxy)
        m = evaluate(params, config, dataset)
        g = fitness(m)
        rec = {"weights": list(w.as_tuple()), "fitness": g, "rmse_x": m.rmse_x,
               "acc_speed": m.acc_speed, "acc_dir": m.acc_dir,
               "seconds": time.perf_counter() - t0}
        evaluations.append(rec)
        if on_eval is not None:
            on_eval(rec)
        cache[key] = g
        return g

    search = woa_optimize(objective, woa)
    return TuneResult(TaskWeights(*search.best_position), search.best_fitness, search, evaluations)


def random_weights(n: int, seed: int, bounds: Sequence[float] = WEIGHT_BOUNDS) -> list[TaskWeights]:
    """Uniform baseline weights, drawn from a stream independent of ``woa_optimize(seed)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    return [TaskWeights(*rng.uniform(bounds[0], bounds[1], 3)) for _ in range(n)]
