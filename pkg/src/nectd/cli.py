"""
Command-line front end.

Subcommands:

* ``simulate``: write a simulated data set and its generating values;
* ``fit``: run chains and write draw files, a summary and (given the
  generating values) a coverage file;
* ``diagnose``: recompute the summary from persisted draw files;
* ``sensitivity``: refit under three priors on the degrees of freedom.

Settings come from an optional INI file (sections ``[run]`` and ``[prior]``)
and are overridden by flags.
"""

import argparse
import configparser
import csv
import json
import os
import sys

import numpy as np
from scipy import stats

from . import io
from .chains import ChainError, ChainStore, McmcConfig
from .diagnostics import coverage_report, effective_sample_size, summary_table
from .distribution import BlockSpec
from .fit_nectd import NectdPrior, fit_nectd
from .lmm import fit_lmm
from .priors import RegressionPrior
from .robit import fit_robit
from .selection import fit_selection
from .simgen import GENERATORS, SimDesign, generate

MODELS = ("selection", "robit", "lmm", "nectd")
SENSITIVITY_PRIORS = ((1.0, 0.1), (0.5, 0.05), (1.5, 0.15))

RUN_KEYS = {
    "model": str, "variant": str, "data": str, "truth": str, "out": str, "iters": int,
    "burnin": int, "chains": int, "thin": int, "seed": int, "workers": int, "blocks": str,
}
PRIOR_KEYS = {
    "coef_mean": float, "coef_scale": float, "scale_mode": str, "nu0": float, "theta0": float,
    "phi0": float, "sigma2_shape": float, "sigma2_rate": float,
}


class ConfigError(ValueError):
    pass


def load_config(path):
    """Read ``[run]`` and ``[prior]`` sections; returns two typed dicts."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    unknown = set(parser.sections()) - {"run", "prior"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    out = []
    for section, keys in (("run", RUN_KEYS), ("prior", PRIOR_KEYS)):
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in keys:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                try:
                    values[key] = keys[key](raw)
                except ValueError:
                    raise ConfigError(f"{path}: bad value {raw!r} for {key!r}") from None
        out.append(values)
    return out


def _settings(args):
    run, prior = load_config(args.config) if getattr(args, "config", None) else ({}, {})
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            run[key] = value
    run.setdefault("variant", "nectd")
    run.setdefault("iters", 50_000)
    run.setdefault("burnin", 10_000)
    run.setdefault("chains", 3)
    run.setdefault("thin", 1)
    run.setdefault("seed", 0)
    run.setdefault("workers", 1)
    for key in ("model", "data", "out"):
        if key not in run:
            raise ConfigError(f"missing setting {key!r} (flag --{key} or [run] {key})")
    if run["model"] not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}")
    if not os.path.isfile(run["data"]):
        raise FileNotFoundError(f"no such file: {run['data']}")
    if "truth" in run and not os.path.isfile(run["truth"]):
        raise FileNotFoundError(f"no such file: {run['truth']}")
    return run, prior


def _mcmc(run) -> McmcConfig:
    return McmcConfig(run["iters"], run["burnin"], run["chains"], run["thin"], run["seed"])


def _blocks(run, p):
    if "blocks" not in run:
        return None
    sizes = [int(s) for s in str(run["blocks"]).split(",") if s.strip()]
    blocks = BlockSpec(sizes)
    if blocks.p != p:
        raise ConfigError(f"blocks {sizes} do not add up to {p} coordinates")
    return blocks


def _nectd_prior(prior, p) -> NectdPrior:
    reg = RegressionPrior(**{k: v for k, v in prior.items() if k not in ("sigma2_shape", "sigma2_rate")})
    return NectdPrior(np.full(p, reg.coef_mean), reg.coef_variance * np.eye(p), reg.nu0,
                      reg.theta0, reg.phi0)


def run_fit(model, data, run, prior) -> ChainStore:
    cfg = _mcmc(run)
    variant, workers = run["variant"], run["workers"]
    if model == "nectd":
        blocks = _blocks(run, data.shape[1]) or BlockSpec.singletons(data.shape[1])
        return fit_nectd(data, blocks, _nectd_prior(prior, data.shape[1]), cfg, workers)
    reg = RegressionPrior(**prior)
    if model == "selection":
        return fit_selection(data, reg, cfg, variant, workers=workers)
    if model == "robit":
        return fit_robit(data, _blocks(run, data.p), reg, cfg, variant, workers=workers)
    return fit_lmm(data, reg, cfg, variant, workers=workers)


SUMMARY_HEADER = ["parameter", "mean", "q0.025", "q0.5", "q0.975", "rhat", "ess"]


def write_outputs(store: ChainStore, out, truth=None):
    """Draw files, summary, acceptance rates and the optional coverage file."""
    os.makedirs(out, exist_ok=True)
    names = store.names
    for c in range(store.n_chains):
        draws = np.column_stack([store.chains(n)[c] for n in names])
        io.write_draws(os.path.join(out, f"draws_chain{c + 1}.csv"), names, draws)
    rows = summary_table(store)
    _write_summary(os.path.join(out, "summary.csv"), rows)
    acc_rows = [[c + 1, site, rate] for c, per in enumerate(store.acceptance) for site, rate in per.items()]
    _write_mixed(os.path.join(out, "acceptance.csv"), ["chain", "site", "rate"], acc_rows)
    with open(os.path.join(out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(store.meta, fh, indent=2, sort_keys=True)
    if truth:
        cov = coverage_report(store, truth)
        _write_mixed(os.path.join(out, "coverage.csv"), ["parameter", "truth", "lower", "upper", "covered"],
                     [[n, c["truth"], c["lower"], c["upper"], int(c["covered"])] for n, c in cov.items()])
    return rows


def _write_mixed(path, header, rows):
    """Rows mixing text and numbers; numbers use the exact float format."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else io.format_value(v) for v in row])


def _write_summary(path, rows):
    _write_mixed(path, SUMMARY_HEADER, [[r[k] for k in SUMMARY_HEADER] for r in rows])


def load_draws(directory) -> ChainStore:
    files = sorted(
        (f for f in os.listdir(directory) if f.startswith("draws_chain") and f.endswith(".csv")),
        key=lambda f: int(f[len("draws_chain"):-4]),
    )
    if not files:
        raise FileNotFoundError(f"no draw files in {directory}")
    header, first = io.read_draws(os.path.join(directory, files[0]))
    chains = [first]
    for f in files[1:]:
        h, arr = io.read_draws(os.path.join(directory, f))
        if h != header or arr.shape != first.shape:
            raise io.CsvFormatError(f"{f}: columns or length differ from {files[0]}")
        chains.append(arr)
    stacked = np.stack(chains)
    return ChainStore({n: stacked[:, :, j].copy() for j, n in enumerate(header)})


def _print_table(rows, stream=sys.stdout):
    stream.write(f"{'parameter':<12}{'mean':>10}{'2.5%':>10}{'50%':>10}{'97.5%':>10}{'rhat':>8}{'ess':>9}\n")
    for r in rows:
        stream.write(f"{r['parameter']:<12}{r['mean']:>10.4f}{r['q0.025']:>10.4f}{r['q0.5']:>10.4f}"
                     f"{r['q0.975']:>10.4f}{r['rhat']:>8.3f}{r['ess']:>9.0f}\n")


def cmd_simulate(args):
    if args.model not in GENERATORS:
        raise ConfigError(f"simulate supports {sorted(GENERATORS)}")
    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        parts = [float(v) for v in value.split(",")]
        overrides[key] = parts[0] if len(parts) == 1 else tuple(parts)
    data, truth = generate(SimDesign(args.model, args.size, overrides, args.seed))
    os.makedirs(args.out, exist_ok=True)
    io.WRITERS[args.model](os.path.join(args.out, "data.csv"), data)
    io.write_truth(os.path.join(args.out, "truth.csv"), truth)
    print(f"wrote {args.out}/data.csv and {args.out}/truth.csv")
    return 0


def cmd_fit(args):
    run, prior = _settings(args)
    data = io.READERS[run["model"]](run["data"])
    truth = io.read_truth(run["truth"]) if "truth" in run else None
    store = run_fit(run["model"], data, run, prior)
    rows = write_outputs(store, run["out"], truth)
    _print_table(rows)
    return 0


def cmd_diagnose(args):
    store = load_draws(args.draws)
    rows = summary_table(store)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_summary(os.path.join(args.out, "summary.csv"), rows)
    _print_table(rows)
    return 0


def prior_range(theta0, phi0, level=0.95):
    """Central ``level`` range of ``Gamma(theta0, rate phi0)``."""
    tail = (1.0 - level) / 2.0
    return tuple(float(v) for v in stats.gamma.ppf([tail, 1.0 - tail], theta0, scale=1.0 / phi0))


def sensitivity(model, data, run, prior, priors=SENSITIVITY_PRIORS):
    """Fit once per ``(theta0, phi0)`` pair with the same data and seed."""
    stores = []
    for theta0, phi0 in priors:
        stores.append(run_fit(model, data, run, dict(prior, theta0=theta0, phi0=phi0)))
    return stores


def coefficient_agreement(stores):
    """Smallest pairwise two-sample KS p-value per coefficient across fits.

    Both sample sizes are replaced by effective sample sizes, so
    autocorrelated chains are not mistaken for disagreement.
    """
    out = {}
    for name in stores[0].names:
        if not name.startswith("beta."):
            continue
        ess = [max(effective_sample_size(s.draws[name]), 2.0) for s in stores]
        p = 1.0
        for i in range(len(stores)):
            for j in range(i + 1, len(stores)):
                d = stats.ks_2samp(stores[i].pooled(name), stores[j].pooled(name)).statistic
                en = np.sqrt(ess[i] * ess[j] / (ess[i] + ess[j]))
                p = min(p, float(stats.kstwobign.sf(d * en)))
        out[name] = float(p)
    return out


def cmd_sensitivity(args):
    run, prior = _settings(args)
    data = io.READERS[run["model"]](run["data"])
    stores = sensitivity(run["model"], data, run, prior)
    os.makedirs(run["out"], exist_ok=True)
    header = ["parameter"]
    table = {}
    for (theta0, phi0), store in zip(SENSITIVITY_PRIORS, stores):
        tag = f"gamma({theta0:g},{phi0:g})"
        header += [f"{tag}.q0.025", f"{tag}.q0.5", f"{tag}.q0.975"]
        for r in summary_table(store):
            table.setdefault(r["parameter"], []).extend([r["q0.025"], r["q0.5"], r["q0.975"]])
    _write_mixed(os.path.join(run["out"], "sensitivity.csv"), header, [[n, *v] for n, v in table.items()])
    ranges = [[f"gamma({t:g},{p:g})", *prior_range(t, p)] for t, p in SENSITIVITY_PRIORS]
    _write_mixed(os.path.join(run["out"], "prior_ranges.csv"), ["prior", "lower", "upper"], ranges)
    agree = coefficient_agreement(stores)
    _write_mixed(os.path.join(run["out"], "agreement.csv"), ["parameter", "min_ks_pvalue"],
                 [[n, p] for n, p in agree.items()])
    for row in ranges:
        print(f"{row[0]:<16} 95% range ({row[1]:.3g}, {row[2]:.3g})")
    for name, p in agree.items():
        print(f"{name:<16} smallest KS p-value across priors {p:.3f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="nectd", description="NECTD regression samplers")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a simulated data set")
    sim.add_argument("--model", required=True, choices=sorted(GENERATORS))
    sim.add_argument("--size", type=int, help="rows (selection, robit) or groups (lmm)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a design value, e.g. nu=30,5 (repeatable)")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    for name, func, help_text in (("fit", cmd_fit, "run chains on a data file"),
                                  ("sensitivity", cmd_sensitivity, "refit under three nu priors")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI file with [run] and [prior] sections")
        p.add_argument("--model", choices=MODELS)
        p.add_argument("--variant", choices=("nectd", "shared-t", "normal", "probit"))
        p.add_argument("--data")
        p.add_argument("--truth")
        p.add_argument("--iters", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--blocks", help="block sizes, e.g. 1,2")
        p.add_argument("--out")
        p.set_defaults(func=func)

    diag = sub.add_parser("diagnose", help="summarise persisted draw files")
    diag.add_argument("--draws", required=True, help="directory holding draws_chain*.csv")
    diag.add_argument("--out")
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError, ChainError) as err:
        print(f"nectd: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
