import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jsqhw import __version__
from jsqhw.cli import ExperimentConfig, apply_override, load_config, main, run
from jsqhw.errors import ConfigError

SMALL = {
    "simulate": ["params.n=100", "params.horizon=1", "replications=2", "grid.dt=0.01"],
    "simulate-truncated": ["params.n=100", "params.horizon=1", "params.k_max=3",
                           "replications=2", "grid.dt=0.01"],
    "limit": ["params.horizon=0.5", "params.k_max=3", "replications=2", "grid.dt=0.01",
              'initial={"scaled": [-0.2, 1.0, 0.3]}'],
    "compare": ["ns=[100,400]", "params.horizon=1", "params.k_max=3", "replications=40",
                "times=[0.5,1.0]", "grid.dt=0.01"],
    "waits": ["params.n=100", "params.horizon=2", "replications=3"],
    "sweep": ["ns=[9,16]", "params.beta=0.5", "params.horizon=2", "params.k_max=3",
              "replications=100"],
    "figure1": ["params.n=2000", "params.horizon=2", "grid.dt=0.01",
                "initial=[2000, 45, 13, 4, 1, 0]"],
}


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_horizon_zero_single_row(tmp_path):
    cfg = load_config("simulate", overrides=["params.n=400", "params.horizon=0",
                                             "initial=[400, 20, 0, 0]"],
                      output=str(tmp_path / "r"))
    out = run(cfg)
    lines = (out / "paths" / "rep0000.csv").read_text().splitlines()
    assert lines == ["t,x1,x2,x3,x4", "0,0,1,0,0"]


@pytest.mark.parametrize("mode", sorted(SMALL))
def test_every_mode_is_deterministic(mode, tmp_path):
    a = run(load_config(mode, overrides=SMALL[mode], output=str(tmp_path / "a")))
    b = run(load_config(mode, overrides=SMALL[mode], output=str(tmp_path / "b")))
    fa, fb = _files(a), _files(b)
    assert fa.keys() == fb.keys()
    assert {"meta.json", "summary.csv", "summary.jsonl", "config.json"} <= fa.keys()
    for name in fa:
        if name != "meta.json":
            assert fa[name] == fb[name], name
    ma, mb = json.loads(fa["meta.json"]), json.loads(fb["meta.json"])
    ma.pop("wall_time_s"), mb.pop("wall_time_s")
    assert ma == mb


def test_workers_do_not_change_output(tmp_path):
    over = SMALL["simulate"] + ["replications=3"]
    a = run(load_config("simulate", overrides=over, output=str(tmp_path / "a"), workers=1))
    b = run(load_config("simulate", overrides=over, output=str(tmp_path / "b"), workers=2))
    fa, fb = _files(a), _files(b)
    for name in fa:
        if name not in ("meta.json", "config.json"):
            assert fa[name] == fb[name], name


def test_meta_keys(tmp_path):
    out = run(load_config("simulate", overrides=SMALL["simulate"], output=str(tmp_path / "m")))
    meta = json.loads((out / "meta.json").read_text())
    for key in ("seed", "n", "beta", "lambda_n", "k_max", "horizon", "dt", "replications",
                "version", "wall_time_s"):
        assert key in meta
    assert meta["version"] == __version__
    assert meta["lambda_n"] == pytest.approx(1 - 1 / math.sqrt(100))


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("JSQHW_OUTPUT_ROOT", str(tmp_path / "root"))
    out = run(load_config("simulate", overrides=SMALL["simulate"] + ["params.seed=7"]))
    assert out == tmp_path / "root" / "simulate-seed7"
    assert (out / "summary.csv").exists()


def test_summary_formats(tmp_path):
    out = run(load_config("sweep", overrides=SMALL["sweep"], output=str(tmp_path / "s")))
    rows = [json.loads(line) for line in (out / "summary.jsonl").read_text().splitlines()]
    csv = (out / "summary.csv").read_text().splitlines()
    assert csv[0] == "n,p_hat,ci_low,ci_high,hits,replications"
    assert [r["n"] for r in rows] == [9, 16]
    assert len(csv) == 3


def test_figure1_preset_defaults():
    cfg = ExperimentConfig.from_dict({"mode": "figure1"})
    assert cfg.params.n == 100_000 and cfg.params.beta == 2.0
    assert cfg.initial[:5] == [100_000, 316, 95, 32, 9]
    assert cfg.columns == 5
    cfg = ExperimentConfig.from_dict({"mode": "figure1", "params": {"seed": 3}})
    assert cfg.params.seed == 3 and cfg.params.n == 100_000


class TestConfig:
    @pytest.mark.parametrize("data, field", [
        ({"mode": "nope"}, "mode"),
        ({"mode": "simulate", "params": {"n": 4, "beta": 2.0}}, "params.n"),
        ({"mode": "simulate", "params": {"n": "ten"}}, "params.n"),
        ({"mode": "simulate", "params": {"beta": -1}}, "params.beta"),
        ({"mode": "simulate", "params": {"k_max": 1}}, "params.k_max"),
        ({"mode": "simulate", "params": {"seed": -2}}, "params.seed"),
        ({"mode": "simulate", "params": {"speed": 1}}, "params.speed"),
        ({"mode": "simulate", "replications": 0}, "replications"),
        ({"mode": "simulate", "initial": "busy"}, "initial"),
        ({"mode": "simulate", "initial": [1000, 5]}, "initial"),
        ({"mode": "simulate", "initial": [1000, 5, 9, 0]}, "initial"),
        ({"mode": "simulate", "grid": {"dt": 0}}, "grid.dt"),
        ({"mode": "simulate", "grid": {"count": 10**7}}, "grid.count"),
        ({"mode": "sweep"}, "ns"),
        ({"mode": "sweep", "ns": [4], "params": {"beta": 2.0}}, "ns"),
        ({"mode": "sweep", "ns": [100], "sweep": "other"}, "sweep"),
        ({"mode": "compare", "ns": [100], "initial": [100, 0, 0, 0]}, "initial"),
        ({"mode": "compare", "ns": [100], "times": [0.0005]}, "times"),
        ({"mode": "limit", "params": {"k_max": 2}}, "params.k_max"),
        ({"mode": "simulate", "tolerances": {"speed": 1}}, "tolerances.speed"),
        ({"mode": "simulate", "tolerances": {"solver_tol": 0}}, "tolerances.solver_tol"),
        ({"mode": "simulate", "colour": 1}, "colour"),
    ])
    def test_errors_name_field(self, data, field):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict(data)
        assert err.value.field == field
        assert field in str(err.value)

    def test_override_parsing(self):
        data = {}
        apply_override(data, "params.n=400")
        apply_override(data, "initial=all-busy")
        apply_override(data, "ns=[1, 2]")
        apply_override(data, "grid.count=null")
        assert data == {"params": {"n": 400}, "initial": "all-busy", "ns": [1, 2],
                        "grid": {"count": None}}
        with pytest.raises(ConfigError):
            apply_override(data, "params")
        with pytest.raises(ConfigError):
            apply_override(data, "initial.x=1")

    def test_config_file_and_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"mode": "limit", "params": {"n": 900, "beta": 1.5}}))
        cfg = load_config("simulate", str(path), ["params.beta=0.5"])
        assert cfg.mode == "simulate" and cfg.params.n == 900 and cfg.params.beta == 0.5
        with pytest.raises(ConfigError) as err:
            load_config("simulate", str(tmp_path / "missing.json"))
        assert err.value.field == "--config"


@settings(max_examples=60, deadline=None)
@given(mode=st.sampled_from(["simulate", "simulate-truncated", "waits", "limit"]),
       n=st.integers(16, 10**6), beta=st.floats(0.01, 3.9), k=st.integers(3, 8),
       horizon=st.floats(0, 50), seed=st.integers(0, 2**64 - 1),
       reps=st.integers(1, 10**5), dt=st.floats(1e-5, 1.0),
       initial=st.one_of(st.sampled_from(["empty", "all-busy"]),
                         st.lists(st.floats(0, 3), min_size=1, max_size=2)
                         .map(lambda v: {"scaled": [0.0] + sorted(v, reverse=True)})),
       tol=st.dictionaries(st.sampled_from(["solver_tol", "window", "fluid_psi1"]),
                           st.floats(1e-12, 0.19)))
def test_round_trip(mode, n, beta, k, horizon, seed, reps, dt, initial, tol):
    data = {"mode": mode, "params": {"n": n, "beta": beta, "k_max": k, "horizon": horizon,
                                     "seed": seed},
            "replications": reps, "grid": {"dt": dt}, "initial": initial, "tolerances": tol}
    cfg = ExperimentConfig.from_dict(data)
    text = json.dumps(cfg.to_dict())
    again = ExperimentConfig.from_dict(json.loads(text))
    assert again == cfg
    assert json.dumps(again.to_dict()) == text


def test_main_exit_codes(tmp_path, capsys):
    assert main(["simulate", "--set", "params.n=100", "--set", "params.horizon=0",
                 "--output", str(tmp_path / "ok")]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "ok")
    assert main(["simulate", "--set", "params.beta=50", "--output", str(tmp_path / "x")]) == 2
    assert "params.n" in capsys.readouterr().err
    # an overflowing run surfaces the simulator error with its own exit code
    code = main(["simulate", "--set", "params.n=4", "--set", "params.beta=0.1",
                 "--set", "params.k_max=2", "--set", "params.horizon=100",
                 "--set", "params.seed=3", "--set", "initial=[4,4]",
                 "--output", str(tmp_path / "y")])
    assert code == 3
    assert "RepresentationOverflow" in capsys.readouterr().err


def test_limit_paths_columns(tmp_path):
    out = run(load_config("limit", overrides=SMALL["limit"], output=str(tmp_path / "l")))
    header = (out / "paths" / "limit0000.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,x3,u1,u2"
    data = np.loadtxt(out / "paths" / "limit0000.csv", delimiter=",", skiprows=1)
    assert data.shape == (51, 6) and np.all(data[:, 5] == 0)
