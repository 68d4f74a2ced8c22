"""
Chain configuration, storage of retained draws and the generic chain runner.

A sampler object supplies ``param_names``, ``initial_state(rng)``,
``sweep(state, rng)`` and ``record(state)``; the runner owns iteration,
burn-in, thinning and seeding. Chain ``k`` draws from stream ``k`` of the
configured seed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import warnings

import numpy as np

from .kernels import make_rng
from .mis import LOW_ACCEPTANCE


class ChainError(RuntimeError):
    """A numerical failure inside a chain, tagged with chain and iteration."""


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 50_000
    burnin: int = 10_000
    chains: int = 3
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.chains < 1 or self.thin < 1:
            raise ValueError("iterations, chains and thin must be positive")
        if not 0 <= self.burnin < self.iterations:
            raise ValueError("burnin must satisfy 0 <= burnin < iterations")

    @property
    def retained(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin))


@dataclass
class ChainStore:
    """Retained draws keyed by parameter name, shape ``(chains, draws)``."""

    draws: dict
    meta: dict = field(default_factory=dict)
    acceptance: list = field(default_factory=list)

    def __post_init__(self):
        shapes = {v.shape for v in self.draws.values()}
        if len(shapes) > 1:
            raise ValueError(f"parameters disagree on (chains, draws): {shapes}")

    @property
    def names(self):
        return list(self.draws)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0] if self.draws else 0

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1] if self.draws else 0

    def chains(self, name: str) -> np.ndarray:
        try:
            return self.draws[name]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}; have {self.names}") from None

    def pooled(self, name: str) -> np.ndarray:
        return self.chains(name).ravel()

    def min_acceptance(self) -> dict:
        """Lowest acceptance rate of every MIS site across chains."""
        out = {}
        for per_chain in self.acceptance:
            for site, rate in per_chain.items():
                out[site] = min(rate, out.get(site, np.inf))
        return out


def _run_one(sampler, cfg: McmcConfig, chain: int):
    rng = make_rng(cfg.seed, chain)
    state = sampler.initial_state(rng)
    out = np.empty((cfg.retained, len(sampler.param_names)))
    k = 0
    for it in range(cfg.iterations):
        try:
            sampler.sweep(state, rng)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as err:
            raise ChainError(f"chain {chain} failed at iteration {it}: {err}") from err
        if it >= cfg.burnin and (it - cfg.burnin) % cfg.thin == 0:
            out[k] = sampler.record(state)
            k += 1
    rates = {name: ctr.rate for name, ctr in getattr(state, "counters", {}).items()}
    return out, rates


def run_chains(sampler, cfg: McmcConfig, workers: int = 1, meta: dict = None) -> ChainStore:
    """Run ``cfg.chains`` chains of ``sampler`` and collect a :class:`ChainStore`.

    With ``workers > 1`` chains run in separate processes; results do not
    depend on the worker count.
    """
    if workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, [sampler] * cfg.chains, [cfg] * cfg.chains, range(cfg.chains)))
    else:
        results = [_run_one(sampler, cfg, c) for c in range(cfg.chains)]
    stacked = np.stack([r[0] for r in results])
    draws = {name: stacked[:, :, j].copy() for j, name in enumerate(sampler.param_names)}
    info = {
        "iterations": cfg.iterations,
        "burnin": cfg.burnin,
        "thin": cfg.thin,
        "seed": cfg.seed,
        "chains": cfg.chains,
    }
    info.update(meta or {})
    store = ChainStore(draws, info, [r[1] for r in results])
    for site, rate in store.min_acceptance().items():
        if rate < LOW_ACCEPTANCE:
            warnings.warn(f"MIS acceptance at site {site!r} fell to {rate:.3f}", RuntimeWarning, stacklevel=2)
    return store
