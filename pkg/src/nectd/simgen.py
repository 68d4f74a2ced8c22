"""
Deterministic generators for the three simulation designs.

Each generator returns ``(data, truth)``; ``truth`` maps parameter names as
they appear in a :class:`~nectd.chains.ChainStore` to generating values.
Random numbers are consumed in a fixed order: covariates, then mixing
weights, then Normal errors.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import make_rng
from .lmm import LmmData
from .robit import RobitData
from .selection import SelectionData


@dataclass(frozen=True)
class SimDesign:
    which: str
    size: int = None
    overrides: dict = field(default_factory=dict)
    seed: int = 0


SELECTION_DEFAULTS = {
    "n": 3000,
    "beta": (0.5, 1.0),
    "gamma": (2.0, 1.0, 1.5),
    "sigma": 1.0,
    "rho": 0.3,
    "nu": (30.0, 5.0),
    "x_sd": 2.0,
}

ROBIT_DEFAULTS = {
    "n": 3000,
    "beta": (0.5, 1.0),
    "rho": 0.2,
    "nu": (5.0, 30.0),
}

LMM_DEFAULTS = {
    "m": 500,
    "n_i": 2,
    "beta": (0.5, 1.0, -0.5),
    "omega": ((1.0, 0.5), (0.5, 1.0)),
    "sigma2": 1.0,
    "nu": (5.0, 30.0),
}


def _settings(defaults, design: SimDesign, size_key):
    unknown = set(design.overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown overrides {sorted(unknown)}; allowed {sorted(defaults)}")
    out = dict(defaults)
    out.update(design.overrides)
    if design.size is not None:
        out[size_key] = int(design.size)
    return out


def _weights(rng, nu, n):
    nu = np.asarray(nu, dtype=float)
    return rng.gamma(nu / 2.0, 2.0 / nu, size=(n, nu.size))


def gen_selection(design: SimDesign = SimDesign("selection")):
    """Selection design: outcome observed only when the selection latent is positive."""
    s = _settings(SELECTION_DEFAULTS, design, "n")
    rng = make_rng(design.seed)
    n = s["n"]
    x1 = s["x_sd"] * rng.standard_normal(n)
    x2 = s["x_sd"] * rng.standard_normal(n)
    q = _weights(rng, s["nu"], n)
    sig, rho = s["sigma"], s["rho"]
    chol = np.linalg.cholesky(np.array([[sig * sig, rho * sig], [rho * sig, 1.0]]))
    e = (rng.standard_normal((n, 2)) @ chol.T) / np.sqrt(q)
    x = np.column_stack([np.ones(n), x1])
    w = np.column_stack([np.ones(n), x1, x2])
    ystar = x @ np.asarray(s["beta"]) + e[:, 0]
    ustar = w @ np.asarray(s["gamma"]) + e[:, 1]
    u = (ustar > 0).astype(int)
    data = SelectionData(x, w, u, np.where(u == 1, ystar, np.nan))
    truth = {f"beta.{k + 1}": v for k, v in enumerate(s["beta"])}
    truth.update({f"gamma.{k + 1}": v for k, v in enumerate(s["gamma"])})
    truth.update({"sigma": sig, "rho": rho, "nu.1": s["nu"][0], "nu.2": s["nu"][1]})
    return data, truth


def gen_robit(design: SimDesign = SimDesign("robit")):
    """Bivariate binary design with a shared intercept and slope."""
    s = _settings(ROBIT_DEFAULTS, design, "n")
    rng = make_rng(design.seed)
    n = s["n"]
    cov = rng.standard_normal((n, 2))
    x = np.stack([np.ones((n, 2)), cov], axis=2)
    q = _weights(rng, s["nu"], n)
    rho = s["rho"]
    chol = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    e = (rng.standard_normal((n, 2)) @ chol.T) / np.sqrt(q)
    ystar = x @ np.asarray(s["beta"]) + e
    data = RobitData((ystar > 0).astype(int), x)
    truth = {f"beta.{k + 1}": v for k, v in enumerate(s["beta"])}
    truth.update({"omega.1.2": rho, "nu.1": s["nu"][0], "nu.2": s["nu"][1]})
    return data, truth


def gen_lmm(design: SimDesign = SimDesign("lmm")):
    """Random-intercept-and-slope design with standard-Normal covariates."""
    s = _settings(LMM_DEFAULTS, design, "m")
    rng = make_rng(design.seed)
    m, ni = s["m"], s["n_i"]
    beta = np.asarray(s["beta"], dtype=float)
    omega = np.asarray(s["omega"], dtype=float)
    K, L = beta.size, omega.shape[0]
    x = rng.standard_normal((m, ni, K))
    z = rng.standard_normal((m, ni, L))
    q = _weights(rng, s["nu"], m)
    b = (rng.standard_normal((m, L)) @ np.linalg.cholesky(omega).T) / np.sqrt(q[:, :1])
    eps = np.sqrt(s["sigma2"]) * rng.standard_normal((m, ni)) / np.sqrt(q[:, 1:])
    y = np.einsum("gik,k->gi", x, beta) + np.einsum("gil,gl->gi", z, b) + eps
    data = LmmData.from_arrays(y, x, z)
    truth = {f"beta.{k + 1}": v for k, v in enumerate(beta)}
    truth.update({f"omega.{i + 1}.{j + 1}": omega[i, j] for i in range(L) for j in range(i, L)})
    truth.update({"sigma2": s["sigma2"], "nu.1": s["nu"][0], "nu.2": s["nu"][1]})
    return data, truth


GENERATORS = {"selection": gen_selection, "robit": gen_robit, "lmm": gen_lmm}


def generate(design: SimDesign):
    try:
        gen = GENERATORS[design.which]
    except KeyError:
        raise ValueError(f"unknown design {design.which!r}; choose from {sorted(GENERATORS)}") from None
    return gen(design)
