import json

import pytest

from failcal.config import AnalysisConfig, ConfigError
from failcal.mcmc import TruncNormal, Uniform


def test_defaults_valid():
    c = AnalysisConfig()
    assert c.priors() == [Uniform(0.0, 1.0)]
    assert c.xtilde.size == 200 and c.xtilde.kind == "lhs"


@pytest.mark.parametrize(
    "bad",
    [
        {"iterations": 10, "burnin": 10},
        {"thin": 0},
        {"slice_mode": "c3"},
        {"p_tol": 1.5},
        {"theta_priors": [{"kind": "uniform", "a": 1, "b": 0}]},
        {"theta_priors": []},
        {"kernels": {"eta": "rbf"}},
        {"x_ranges": [[1, 0]]},
        {"mode": "fit"},
        {"bogus": 1},
        {"xtilde": {"size": 0}},
        {"bmatrix": {"low_cut": 0.9, "high_cut": 0.1}},
    ],
)
def test_invalid(bad):
    with pytest.raises(ConfigError):
        AnalysisConfig.from_dict(bad)


def test_load_resolves_paths(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(
        json.dumps(
            {
                "data": {"dir": "toy"},
                "theta_priors": [{"kind": "truncnormal", "mean": 0.5, "var": 0.1, "a": 0, "b": 1}],
                "warm_start": "s.json",
            }
        )
    )
    c = AnalysisConfig.load(p)
    assert c.data.dir == str(tmp_path / "toy")
    assert c.warm_start == [str(tmp_path / "s.json")]
    assert c.priors() == [TruncNormal(0.5, 0.1, 0.0, 1.0)]
    assert c.t_ranges == [[0.0, 1.0]]


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        AnalysisConfig.load(tmp_path / "missing.json")
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ConfigError):
        AnalysisConfig.load(tmp_path / "x.json")
    (tmp_path / "y.json").write_text("[1]")
    with pytest.raises(ConfigError):
        AnalysisConfig.load(tmp_path / "y.json")


def test_dict_round_trip():
    c = AnalysisConfig(iterations=50, burnin=5, seed=4)
    assert AnalysisConfig.from_dict(c.to_dict()) == c
