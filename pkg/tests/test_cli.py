import json

import numpy as np
import pytest

from failcal import dataio
from failcal.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, run_cli
from failcal.latent import LatentSampler


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert run_cli(["generate-toy", "--out", str(d), "--seed", "3"]) == EXIT_OK
    return d


SHORT = ["--iterations", "60", "--burnin", "20"]


def test_generate_toy_files(toy):
    for f in ("field.csv", "simulator.csv", "failures.csv", "truth.json", "config.json"):
        assert (toy / f).exists()
    truth = json.loads((toy / "truth.json").read_text())
    assert (truth["N"], truth["M"], truth["M0"]) == (18, 114, 30)


def test_classifier_summary(toy, tmp_path, capsys):
    out = tmp_path / "cls"
    cfg = json.loads((toy / "config.json").read_text())
    cfg.update(loocv_every=20, data={"dir": str(toy)})
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code = run_cli(["fit-classifier", "--config", str(tmp_path / "c.json"), "--out", str(out), *SHORT, "--chains", "2"])
    assert code == EXIT_OK
    assert "LOOCV median" in capsys.readouterr().out
    s = dataio.load_json(out / "summary.json")
    assert {"median", "ci95"} <= set(s["loocv"])
    merged, meta = dataio.read_chain(out / "chain.csv")
    assert merged.columns[0] == "chain" and len(merged) == 80 and meta["chains"] == 2
    assert (out / "state_1.json").exists() and (out / "loocv_0.csv").exists()


def test_coupled_archives_byte_identical(toy, tmp_path):
    args = ["fit-coupled", "--config", str(toy / "config.json"), *SHORT, "--seed", "9"]
    assert run_cli(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert run_cli(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for f in ("chain_0.csv", "chain_0.json", "chain.csv", "state_0.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert run_cli(["fit-coupled", "--config", str(toy / "config.json"), *SHORT, "--seed", "10", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "chain_0.csv").read_bytes() != (tmp_path / "c" / "chain_0.csv").read_bytes()


def test_parallel_equals_serial(toy, tmp_path):
    base = ["fit-calibration", "--config", str(toy / "config.json"), *SHORT, "--chains", "2"]
    assert run_cli(base + ["--out", str(tmp_path / "s")]) == EXIT_OK
    assert run_cli(base + ["--out", str(tmp_path / "p"), "--workers", "2"]) == EXIT_OK
    for f in ("chain_0.csv", "chain_1.csv", "chain.csv", "chain.json"):
        assert (tmp_path / "s" / f).read_bytes() == (tmp_path / "p" / f).read_bytes()


def test_pipeline_b_matrix_and_summarize(toy, tmp_path):
    cfg = str(toy / "config.json")
    assert run_cli(["fit-classifier", "--config", cfg, "--out", str(tmp_path / "cls"), *SHORT]) == 0
    assert run_cli(["fit-calibration", "--config", cfg, "--out", str(tmp_path / "cal"), *SHORT]) == 0
    code = run_cli(
        [
            "b-matrix", "--config", cfg, "--out", str(tmp_path / "b"),
            "--calibration", str(tmp_path / "cal" / "chain.csv"),
            "--classifier", str(tmp_path / "cls" / "chain.csv"),
        ]
    )
    assert code == EXIT_OK
    B = dataio.read_table(tmp_path / "b" / "bmatrix.csv")[1]
    assert B.shape == (40, 40) and set(np.unique(B)) <= {0.0, 1.0}
    s = dataio.load_json(tmp_path / "b" / "summary.json")
    assert 0 <= s["row_mean_min"] <= s["row_mean_max"] <= 1 and s["n_theta"] == 40
    w = dataio.read_table(tmp_path / "b" / "pointwise.csv")[1][:, -1]
    assert w.sum() == pytest.approx(1.0)
    code = run_cli(
        ["summarize", str(tmp_path / "cal"), str(tmp_path / "b"), "--out", str(tmp_path / "rep"), "--interval", "0.27", "0.73"]
    )
    assert code == EXIT_OK
    rep = dataio.load_json(tmp_path / "rep" / "report.json")
    assert set(rep) == {"cal", "b"} and 0 <= rep["cal"]["pi_hat"] <= 1
    h, t = dataio.read_table(tmp_path / "rep" / "theta1_density.csv")
    assert h == ["mid", "cal_density", "cal_cdf"] and t[-1, 2] == pytest.approx(1.0)
    assert (tmp_path / "rep" / "b_pi_density.csv").exists()


def test_warm_start(toy, tmp_path):
    cfg = str(toy / "config.json")
    assert run_cli(["fit-classifier", "--config", cfg, "--out", str(tmp_path / "cls"), *SHORT]) == 0
    assert run_cli(["fit-calibration", "--config", cfg, "--out", str(tmp_path / "cal"), *SHORT]) == 0
    code = run_cli(
        [
            "fit-coupled", "--config", cfg, "--out", str(tmp_path / "cp"), *SHORT,
            "--warm-start", str(tmp_path / "cls" / "state_0.json"),
            "--warm-start", str(tmp_path / "cal" / "state_0.json"),
        ]
    )
    assert code == EXIT_OK
    s = dataio.load_json(tmp_path / "cp" / "summary.json")
    assert 0 <= s["admitted_fraction"] <= 1


def test_invalid_inputs(toy, tmp_path, capsys):
    assert run_cli(["fit-coupled", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "theta_priors" in capsys.readouterr().err
    cfg = str(toy / "config.json")
    assert run_cli(["fit-coupled", "--config", cfg, "--out", str(tmp_path / "o"), "--iterations", "10", "--burnin", "10"]) == EXIT_INVALID
    assert run_cli(["fit-coupled", "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert run_cli(["frobnicate"]) == EXIT_INVALID
    bad = tmp_path / "bad"
    run_cli(["generate-toy", "--out", str(bad)])
    lines = (bad / "failures.csv").read_text().splitlines()
    lines[3] = lines[3].rsplit(",", 1)[0] + ",7.0"
    (bad / "failures.csv").write_text("\n".join(lines) + "\n")
    assert run_cli(["fit-classifier", "--config", str(bad / "config.json"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "row 3 has z" in capsys.readouterr().err


def test_numerical_failure_writes_checkpoint(toy, tmp_path, monkeypatch):
    original = LatentSampler.step
    calls = {"n": 0}

    def flaky(self):
        calls["n"] += 1
        if calls["n"] == 31:
            raise np.linalg.LinAlgError("not positive definite")
        return original(self)

    monkeypatch.setattr(LatentSampler, "step", flaky)
    out = tmp_path / "ab"
    code = run_cli(["fit-classifier", "--config", str(toy / "config.json"), "--out", str(out), *SHORT])
    assert code == EXIT_NUMERIC
    ck = dataio.load_json(out / "checkpoint_0.json")
    assert ck["iteration"] == 31 and ck["state"]["kind"] == "classifier"
    chain, meta = dataio.read_chain(out / "chain_0.csv")
    assert len(chain) == 10 and meta["aborted_at"] == 31
    # the checkpoint state is accepted as a warm start
    monkeypatch.setattr(LatentSampler, "step", original)
    code = run_cli(
        ["fit-classifier", "--config", str(toy / "config.json"), "--out", str(tmp_path / "re"), *SHORT,
         "--warm-start", str(out / "checkpoint_0.json")]
    )
    assert code == EXIT_OK
