"""Covariance Matrix Adaptation Evolution Strategy.

Full (mu/mu_w, lambda) CMA-ES with rank-one and rank-mu covariance updates and
cumulative step-size adaptation, using the usual default strategy constants.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CmaesError(ValueError):
    pass


def default_popsize(dim: int) -> int:
    return 4 + int(math.floor(3 * math.log(dim)))


class CMAES:
    """Ask/tell optimizer state.

    Fitness is minimised unless ``maximize=True``, in which case fitnesses are
    negated internally; ``best_f`` is always reported on the caller's scale.
    """

    def __init__(self, mean, sigma0: float, popsize: int | None = None, seed=None, maximize: bool = False):
        mean = np.array(mean, dtype=np.float64).ravel()
        if mean.size < 1:
            raise CmaesError("dimension must be >= 1")
        if not np.isfinite(mean).all():
            raise CmaesError("initial mean must be finite")
        if not sigma0 > 0:
            raise CmaesError("sigma0 must be > 0")
        n = mean.size
        lam = default_popsize(n) if popsize is None else int(popsize)
        if lam < 2:
            raise CmaesError("population size must be >= 2")
        self.dim = n
        self.popsize = lam
        self.mu = lam // 2
        w = math.log((lam + 1) / 2) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4 + self.mueff / n) / (n + 4 + 2 * self.mueff / n)
        self.cs = (self.mueff + 2) / (n + self.mueff + 5)
        self.c1 = 2 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((n + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (n + 1)) - 1) + self.cs
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self.maximize = maximize
        self.mean = mean
        self.sigma = float(sigma0)
        self.cov = np.eye(n)
        self.eig_basis = np.eye(n)
        self.eig_sqrt = np.ones(n)
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.generation = 0
        self.evals = 0
        self.rng = np.random.default_rng(seed)
        self.best_x = None
        self.best_f = -math.inf if maximize else math.inf

    def ask(self) -> np.ndarray:
        """(popsize, dim) candidates ``m + sigma * C^(1/2) z``."""
        z = self.rng.standard_normal((self.popsize, self.dim))
        return self.mean + self.sigma * (z * self.eig_sqrt) @ self.eig_basis.T

    def _better(self, f: float) -> bool:
        return f > self.best_f if self.maximize else f < self.best_f

    def tell(self, candidates, fitnesses) -> None:
        x = np.asarray(candidates, dtype=np.float64)
        f = np.asarray(fitnesses, dtype=np.float64).ravel()
        if x.shape != (self.popsize, self.dim) or f.size != self.popsize:
            raise CmaesError(f"expected {self.popsize} candidates of dimension {self.dim}")
        ok = np.isfinite(f)
        if not ok.any():
            raise CmaesError("every candidate of the generation has a non-finite fitness")
        self.evals += f.size
        x, f = x[ok], f[ok]
        key = -f if self.maximize else f
        order = np.argsort(key, kind="stable")
        if self._better(f[order[0]]):
            self.best_f = float(f[order[0]])
            self.best_x = x[order[0]].copy()

        k = min(self.mu, order.size)
        w = self.weights[:k] / self.weights[:k].sum()
        n = self.dim
        old = self.mean
        y = (x[order[:k]] - old) / self.sigma
        y_w = w @ y
        self.mean = old + self.sigma * y_w

        inv_sqrt = (self.eig_basis / self.eig_sqrt) @ self.eig_basis.T
        self.p_sigma = ((1 - self.cs) * self.p_sigma
                        + math.sqrt(self.cs * (2 - self.cs) * self.mueff) * inv_sqrt @ y_w)
        ps_norm = np.linalg.norm(self.p_sigma)
        h_sigma = (ps_norm / math.sqrt(1 - (1 - self.cs) ** (2 * (self.generation + 1))) / self.chi_n
                   < 1.4 + 2 / (n + 1))
        self.p_c = (1 - self.cc) * self.p_c + h_sigma * math.sqrt(self.cc * (2 - self.cc) * self.mueff) * y_w

        rank_one = np.outer(self.p_c, self.p_c) + (1 - h_sigma) * self.cc * (2 - self.cc) * self.cov
        rank_mu = (y * w[:, None]).T @ y
        self.cov = (1 - self.c1 - self.cmu) * self.cov + self.c1 * rank_one + self.cmu * rank_mu
        self.cov = (self.cov + self.cov.T) / 2
        self.sigma *= math.exp(self.cs / self.damps * (ps_norm / self.chi_n - 1))

        eigval, self.eig_basis = np.linalg.eigh(self.cov)
        floor = max(eigval.max(), 1e-300) * 1e-14
        if eigval.min() < floor:
            eigval = np.maximum(eigval, floor)
            self.cov = (self.eig_basis * eigval) @ self.eig_basis.T
            self.cov = (self.cov + self.cov.T) / 2
        self.eig_sqrt = np.sqrt(eigval)
        self.generation += 1


@dataclass(frozen=True)
class OptimizeResult:
    best_x: np.ndarray
    best_f: float
    evals_used: int
    generations: int


def optimize(objective, x0, sigma0: float, max_evals: int, seed=None, popsize: int | None = None,
             patience: int = 20, maximize: bool = False, vectorized: bool = False,
             initial_f: float | None = None) -> OptimizeResult:
    """Run ask/tell generations until ``max_evals`` or ``patience`` stale generations.

    With ``vectorized=True`` the objective receives the whole (popsize, dim)
    population and returns popsize values. Passing ``initial_f`` (the value of
    ``x0``) makes ``x0`` the starting incumbent, so the result never scores
    worse than it.
    """
    es = CMAES(x0, sigma0, popsize=popsize, seed=seed, maximize=maximize)
    if max_evals < es.popsize:
        raise CmaesError(f"max_evals={max_evals} is below the population size {es.popsize}")
    if initial_f is not None and math.isfinite(initial_f):
        es.best_x, es.best_f = np.array(x0, dtype=np.float64).ravel(), float(initial_f)
    stale = 0
    while es.evals + es.popsize <= max_evals and stale < patience:
        pop = es.ask()
        if vectorized:
            fit = np.asarray(objective(pop), dtype=np.float64)
        else:
            fit = np.array([objective(x) for x in pop], dtype=np.float64)
        before = es.best_f
        es.tell(pop, fit)
        stale = 0 if es.best_f != before else stale + 1
    return OptimizeResult(es.best_x, es.best_f, es.evals, es.generation)
