"""
Convergence diagnostics and posterior summaries over a :class:`ChainStore`.
"""

import numpy as np

from .chains import ChainStore


class DegenerateStatisticError(ValueError):
    """Within-chain variance is zero, so the statistic is undefined."""


def _split(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, -n:]], axis=0)


def potential_scale_reduction(chains, split: bool = True) -> float:
    """R-hat of a ``(chains, draws)`` array.

    Uses ``sqrt((W (n-1)/n + B/n) / W)`` on half-chains by default;
    ``split=False`` gives the classic whole-chain statistic.
    """
    chains = np.asarray(chains, dtype=float)
    if split:
        chains = _split(chains)
    m, n = chains.shape
    if m < 2 or n < 2:
        raise ValueError("need at least two chains with two draws each")
    means = chains.mean(axis=1)
    w = chains.var(axis=1, ddof=1).mean()
    if not w > 0:
        raise DegenerateStatisticError("zero within-chain variance")
    b = n * means.var(ddof=1)
    return float(np.sqrt(((n - 1) / n * w + b / n) / w))


def gelman_rubin(store: ChainStore, parameter: str, split: bool = True) -> float:
    """Potential scale reduction for one parameter (at least 2 chains, 50 draws)."""
    chains = store.chains(parameter)
    if chains.shape[0] < 2 or chains.shape[1] < 50:
        raise ValueError("gelman_rubin needs at least 2 chains of 50 retained draws")
    return potential_scale_reduction(chains, split)


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation of a 1-D series via FFT."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.ones(n)
    return acov / acov[0]


def effective_sample_size(chains) -> float:
    """Multi-chain effective sample size with Geyer's initial positive sequence."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float(m * n)
    w = chains.var(axis=1, ddof=1).mean()
    if not w > 0:
        return float(m * n)
    var_plus = (n - 1) / n * w + (chains.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    acov = np.mean([autocorrelation(c) * c.var(ddof=1) for c in chains], axis=0)
    rho = 1.0 - (w - acov) / var_plus
    rho[0] = 1.0
    # sum consecutive pairs while positive and monotone
    total = 0.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = -1.0 + 2.0 * total
    return float(m * n / max(tau, 1.0 / np.log10(max(m * n, 10))))


def quantiles(store: ChainStore, parameter: str, probs) -> np.ndarray:
    """Pooled quantiles with linear (type-7) interpolation."""
    draws = store.pooled(parameter)
    if draws.size == 0:
        raise ValueError(f"no draws for {parameter!r}")
    return np.quantile(draws, np.asarray(probs, dtype=float), method="linear")


def coverage_report(store: ChainStore, truth: dict, level: float = 0.95) -> dict:
    """Central credible interval per parameter and whether it contains ``truth``.

    Returns ``{name: {"lower", "upper", "truth", "covered"}}`` for every name
    present in both ``truth`` and the store.
    """
    tail = (1.0 - level) / 2.0
    out = {}
    for name, value in truth.items():
        if name not in store.draws:
            continue
        lo, hi = quantiles(store, name, [tail, 1.0 - tail])
        out[name] = {"lower": float(lo), "upper": float(hi), "truth": float(value),
                     "covered": bool(lo <= value <= hi)}
    return out


def summary_table(store: ChainStore, probs=(0.025, 0.5, 0.975)) -> list:
    """One row per parameter: mean, quantiles, split R-hat and ESS."""
    rows = []
    for name in store.names:
        chains = store.chains(name)
        row = {"parameter": name, "mean": float(chains.mean())}
        for p, v in zip(probs, quantiles(store, name, probs)):
            row[f"q{p:g}"] = float(v)
        try:
            row["rhat"] = potential_scale_reduction(chains) if chains.shape[0] > 1 else float("nan")
        except DegenerateStatisticError:
            row["rhat"] = float("nan")
        row["ess"] = effective_sample_size(chains)
        rows.append(row)
    return rows
