import csv

import numpy as np
import pytest

from nectd import io
from nectd.chains import ChainStore, McmcConfig
from nectd.cli import (
    SENSITIVITY_PRIORS,
    coefficient_agreement,
    load_config,
    load_draws,
    main,
    prior_range,
)
from nectd.diagnostics import summary_table
from nectd.robit import fit_robit
from nectd.simgen import SimDesign, gen_robit

FIT = ["--iters", "120", "--burnin", "20", "--chains", "2", "--seed", "3"]


def _read(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def simulated(tmp_path):
    assert main(["simulate", "--model", "robit", "--size", "150", "--seed", "2", "--out", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim"


def test_simulate_fit_round_trip(tmp_path, simulated):
    out = tmp_path / "fit"
    code = main(["fit", "--model", "robit", "--data", str(simulated / "data.csv"),
                 "--truth", str(simulated / "truth.csv"), "--out", str(out), *FIT])
    assert code == 0
    for name in ("draws_chain1.csv", "draws_chain2.csv", "summary.csv", "acceptance.csv", "meta.json",
                 "coverage.csv"):
        assert (out / name).is_file()
    header = _read(out / "draws_chain1.csv")[0]
    assert header == ["beta.1", "beta.2", "omega.1.2", "nu.1", "nu.2"]
    assert len(_read(out / "draws_chain1.csv")) == 101
    assert _read(out / "coverage.csv")[0] == ["parameter", "truth", "lower", "upper", "covered"]


def test_rerun_is_byte_identical(tmp_path, simulated):
    args = ["fit", "--model", "robit", "--data", str(simulated / "data.csv"), *FIT]
    main(args + ["--out", str(tmp_path / "a")])
    main(args + ["--out", str(tmp_path / "b"), "--workers", "2"])
    for name in ("draws_chain1.csv", "draws_chain2.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_diagnose_reproduces_summary(tmp_path, simulated):
    out = tmp_path / "fit"
    main(["fit", "--model", "robit", "--data", str(simulated / "data.csv"), "--out", str(out), *FIT])
    assert main(["diagnose", "--draws", str(out), "--out", str(tmp_path / "diag")]) == 0
    assert (out / "summary.csv").read_bytes() == (tmp_path / "diag" / "summary.csv").read_bytes()
    store = load_draws(out)
    rows = summary_table(store)
    persisted = _read(out / "summary.csv")[1:]
    for row, line in zip(rows, persisted):
        assert float(line[3]) == row["q0.5"]


def test_disk_data_refits_to_identical_draws(tmp_path):
    data, _ = gen_robit(SimDesign("robit", size=120, seed=4))
    io.write_robit(tmp_path / "d.csv", data)
    cfg = McmcConfig(iterations=80, burnin=10, chains=1, seed=2)
    a = fit_robit(data, cfg=cfg)
    b = fit_robit(io.read_robit(tmp_path / "d.csv"), cfg=cfg)
    for name in a.names:
        assert np.array_equal(a.draws[name], b.draws[name])


def test_config_file_and_flag_override(tmp_path, simulated):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[run]\nmodel = robit\ndata = {simulated / 'data.csv'}\nout = {tmp_path / 'c'}\n"
                   "iters = 60\nburnin = 10\nchains = 1\n[prior]\ntheta0 = 2\nphi0 = 0.2\n")
    run, prior = load_config(cfg)
    assert run["iters"] == 60 and prior == {"theta0": 2.0, "phi0": 0.2}
    assert main(["fit", "--config", str(cfg), "--iters", "40"]) == 0
    assert len(_read(tmp_path / "c" / "draws_chain1.csv")) == 31


def test_bad_config_is_reported(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nmodle = robit\n")
    assert main(["fit", "--config", str(cfg)]) == 1
    assert "unknown key 'modle'" in capsys.readouterr().err


def test_missing_file_exits_nonzero_with_path(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    code = main(["fit", "--model", "robit", "--data", str(missing), "--out", str(tmp_path / "o")])
    assert code == 1
    assert str(missing) in capsys.readouterr().err


def test_malformed_data_exits_with_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y1,x1.1\n1,0.5\n0,oops\n")
    code = main(["fit", "--model", "robit", "--data", str(bad), "--out", str(tmp_path / "o"), *FIT])
    assert code == 1
    assert ":3:" in capsys.readouterr().err


def test_nonfinite_data_is_rejected_with_row(tmp_path, capsys):
    path = tmp_path / "m.csv"
    path.write_text("x1,x2\n1,2\n3,4\n")
    assert main(["fit", "--model", "nectd", "--data", str(path), "--out", str(tmp_path / "o"), *FIT]) == 0
    path.write_text("x1,x2\n1,2\n3,nan\n")
    assert main(["fit", "--model", "nectd", "--data", str(path), "--out", str(tmp_path / "o2"), *FIT]) == 1
    assert ":3:" in capsys.readouterr().err


def test_simulate_overrides(tmp_path):
    out = tmp_path / "s"
    assert main(["simulate", "--model", "selection", "--size", "30", "--set", "nu=1000000,1000000",
                 "--set", "rho=0", "--out", str(out)]) == 0
    truth = io.read_truth(out / "truth.csv")
    assert truth["rho"] == 0.0 and truth["nu.2"] == 1e6


def test_prior_ranges_at_printed_precision():
    printed = [(0.253, 36.9), (0.010, 50.2), (0.719, 31.2)]
    for (theta0, phi0), (lo, hi) in zip(SENSITIVITY_PRIORS, printed):
        a, b = prior_range(theta0, phi0)
        assert float(f"{a:.3g}") == pytest.approx(lo, abs=1e-3)
        assert float(f"{b:.3g}") == hi


def test_sensitivity_writes_three_tables(tmp_path, simulated):
    out = tmp_path / "sens"
    code = main(["sensitivity", "--model", "robit", "--data", str(simulated / "data.csv"), "--out", str(out),
                 "--iters", "80", "--burnin", "20", "--chains", "1"])
    assert code == 0
    header = _read(out / "sensitivity.csv")[0]
    assert len(header) == 1 + 3 * 3
    assert [r[0] for r in _read(out / "prior_ranges.csv")[1:]] == ["gamma(1,0.1)", "gamma(0.5,0.05)",
                                                                    "gamma(1.5,0.15)"]
    assert [r[0] for r in _read(out / "agreement.csv")[1:]] == ["beta.1", "beta.2"]


def test_coefficient_agreement_detects_shift():

    rng = np.random.default_rng(0)
    same = [ChainStore({"beta.1": rng.standard_normal((1, 2000)), "nu.1": np.ones((1, 2000))}) for _ in range(3)]
    assert coefficient_agreement(same)["beta.1"] > 0.01
    same[2] = ChainStore({"beta.1": 1.0 + rng.standard_normal((1, 2000)), "nu.1": np.ones((1, 2000))})
    assert coefficient_agreement(same)["beta.1"] < 1e-6
    assert set(coefficient_agreement(same)) == {"beta.1"}


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for cmd in ("simulate", "fit", "diagnose", "sensitivity"):
        assert cmd in text
