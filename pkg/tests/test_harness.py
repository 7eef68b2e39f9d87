import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import s2pg_lab.diffcore as dc
from s2pg_lab.harness import (ConfigError, RunFailed, aggregate_curves, check_case, load_config, normalize_returns,
                              random_policy_return, run, run_gradcheck)
from s2pg_lab.harness.cli import main
from s2pg_lab.harness.runner import train_seed

TINY = {"total_steps": 2048, "n_envs": 4, "rollout_steps": 64, "epochs": 2, "value_epochs": 2, "minibatches": 2,
        "eval_episodes": 4, "d_z": 2, "policy_hidden": [8], "critic_hidden": [8]}


def _train_doc(tmp_path, **kw):
    doc = {"kind": "train", "env": {"name": "point_mass_memory"}, "algorithm": "ppo_rs", "algo": dict(TINY),
           "seeds": [0, 1], "eval_every": 1024, "out_dir": str(tmp_path / "out")}
    doc.update(kw)
    return doc


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# -------------------------------------------------------------- normalizing


def test_normalize_examples():
    assert normalize_returns(10.0, 10.0, 2.0) == 1.0
    assert normalize_returns(2.0, 10.0, 2.0) == 0.0
    assert normalize_returns(6.0, 10.0, 2.0) == 0.5
    np.testing.assert_allclose(normalize_returns([100.0, -100.0], 10.0, 2.0), [1.1, -0.1])
    assert normalize_returns(100.0, 10.0, 2.0, clip=False) == pytest.approx(12.25)
    for hi, lo in ((1.0, 1.0), (0.0, 1.0), (np.inf, 0.0)):
        with pytest.raises(ValueError):
            normalize_returns(0.5, hi, lo)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(1e-2, 1e3))
def test_normalize_is_affine_and_clipped(x, lo, span):
    y = normalize_returns(x, lo + span, lo)
    assert -0.1 <= y <= 1.1
    raw = normalize_returns(x, lo + span, lo, clip=False)
    assert raw == pytest.approx((x - lo) / span, rel=1e-9, abs=1e-9)


def test_aggregate_interval_matches_t_quantile():
    curves = {0: [1.0, 2.0], 1: [3.0, 2.0], 2: [5.0, 2.0]}
    agg = aggregate_curves(curves)
    np.testing.assert_allclose(agg["mean"], [3.0, 2.0])
    # sd = 2, n = 3, t_{0.975, 2} = 4.302652729749464
    half = 4.302652729749464 * 2.0 / np.sqrt(3)
    np.testing.assert_allclose(agg["ci_high"], [3.0 + half, 2.0], rtol=1e-10)
    single = aggregate_curves({0: [1.0, 2.0]})
    assert single["ci_low"] is None and single["ci_high"] is None


# ------------------------------------------------------------------ config


def test_config_errors_name_the_field(tmp_path):
    bad = [({"algo": {"lr_actr": 1e-3}}, "algo.lr_actr"),
           ({"algo": {"lr_actor": "fast"}}, "algo.lr_actor"),
           ({"seeds": []}, "seeds"),
           ({"seeds": [0, -1]}, "seeds[1]"),
           ({"kind": "dance"}, "kind"),
           ({"env": {"name": "moon"}}, "env.name"),
           ({"env": {"name": "chain", "horizon": 0}}, "env"),
           ({"policy": {"width": 3}}, "policy.width"),
           ({"algo": {"gamma": 1.5}}, "algo"),
           ({"colour": 1}, "colour")]
    for doc, path in bad:
        doc.setdefault("out_dir", str(tmp_path))
        with pytest.raises(ConfigError) as info:
            load_config(doc)
        assert info.value.path == path, (doc, str(info.value))
    with pytest.raises(ConfigError) as info:
        load_config("{not json")
    assert "line 1" in str(info.value)
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_overrides_follow_dotted_paths(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(_train_doc(tmp_path)))
    cfg = load_config(path, ["algo.lr_actor=0.001", "env.params.blind_radius=0.2", "algorithm=sac_rs",
                             "policy.d_z=4"])
    assert cfg.algo["lr_actor"] == 0.001 and cfg.algorithm == "sac_rs"
    assert cfg.env["params"] == {"blind_radius": 0.2}
    algo = cfg.algo_config(3)
    assert algo.d_z == 4 and algo.seed == 3 and algo.eval_every == 1024 and algo.policy_hidden == (8,)
    with pytest.raises(ConfigError):
        load_config(path, ["noequals"])


def test_variant_algorithms_force_their_fields(tmp_path):
    cfg = load_config(_train_doc(tmp_path, algorithm="ppo_oracle"))
    algo = cfg.algo_config(0)
    assert algo.d_z == 0 and algo.policy_input == "privileged"
    assert load_config(_train_doc(tmp_path, algorithm="ppo_stateless")).algo_config(0).d_z == 0


# -------------------------------------------------------------------- runs


def test_train_run_writes_curves_aggregate_and_manifest(tmp_path):
    cfg = load_config(_train_doc(tmp_path))
    summary = run(cfg)
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert sorted(p.name for p in out.glob("metrics_seed*.csv")) == ["metrics_seed0.csv", "metrics_seed1.csv"]
    for name in manifest["files"]:
        assert (out / name).stat().st_size > 0
    agg = _rows(out / "aggregate.csv")
    assert [int(r["step"]) for r in agg] == list(summary.steps) and agg[0]["n_seeds"] == "2"
    assert "high=" in (out / "curves.svg").read_text()
    assert summary.normalizer["low"] == pytest.approx(random_policy_return(cfg, seed=0))


def test_train_run_is_reproducible_except_wallclock(tmp_path):
    a = _train_doc(tmp_path / "a", seeds=[0])
    b = _train_doc(tmp_path / "b", seeds=[0])
    run(load_config(a))
    run(load_config(b))
    ra = _rows(tmp_path / "a" / "out" / "metrics_seed0.csv")
    rb = _rows(tmp_path / "b" / "out" / "metrics_seed0.csv")
    for x, y in zip(ra, rb, strict=True):
        x.pop("wallclock_s"), y.pop("wallclock_s")
        assert x == y


def test_single_seed_omits_interval(tmp_path):
    run(load_config(_train_doc(tmp_path, seeds=[0])))
    row = _rows(tmp_path / "out" / "aggregate.csv")[0]
    assert row["mean_return_ci_low"] == "" and row["n_seeds"] == "1"


def test_numeric_failure_flushes_partial_results(tmp_path, monkeypatch):
    import s2pg_lab.harness.runner as runner

    def exploding(env_factory, algo, variant, metrics_path=None):
        with open(metrics_path, "w") as fh:
            fh.write("step,mean_return\n1,0.0\n")
        raise dc.NumericError("loss became NaN")
    monkeypatch.setattr(runner, "train_ppo", exploding)
    with pytest.raises(RunFailed, match="NaN"):
        run(load_config(_train_doc(tmp_path, seeds=[0])))
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "failed" and "metrics_seed0.csv" in manifest["files"]
    assert (tmp_path / "out" / "metrics_seed0.csv").read_text().count("\n") == 2


def test_train_seed_off_policy(tmp_path):
    algo = dict(TINY, total_steps=600, s_min=200, s_warm=200, batch_size=32, buffer_capacity=1000)
    doc = load_config(_train_doc(tmp_path, algorithm="td3_rs", algo=algo, eval_every=300)).to_dict()
    (tmp_path / "out").mkdir()
    res = train_seed(doc, 0)
    assert res["status"] == "ok" and len(res["rows"]) >= 2


def test_gradcheck_suite_passes_quickly():
    results, worst, seconds = run_gradcheck()
    assert worst < 1e-4 and seconds < 60
    names = {r.name for r in results}
    assert {"policy_log_prob", "bptt_unroll_3_steps", "gaussian_logpdf_logstd", "linear"} <= names


def test_gradcheck_detects_a_wrong_gradient():
    # the detached factor hides half of the true derivative of x * x from the tape
    r = check_case("broken", lambda p: dc.sum(dc.mul(p["x"], dc.detach(p["x"]))), {"x": np.array([1.0, 2.0])})
    assert r.rel_error > 0.1 and not r.passed


def test_variance_and_oracle_kinds(tmp_path, capsys):
    v = load_config({"kind": "variance", "out_dir": str(tmp_path / "v"),
                     "variance": {"Z_values": [0.5], "T_values": [3, 6], "samples": 200}})
    s = run(v)
    assert len(s.details["reports"]) == 4 and (tmp_path / "v" / "variance.svg").stat().st_size > 0
    o = load_config({"kind": "oracle", "out_dir": str(tmp_path / "o"), "oracle": {"samples": 4000,
                                                                                "fd_samples": 40000}})
    s = run(o)
    assert s.details["z"].shape == (4,) and np.all(np.isfinite(s.details["z"]))
    out = capsys.readouterr().out
    assert "oracle" in out and "eta_z" in out


# --------------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path / "g"), "-q"]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert main(["run", json.dumps({"algo": {"nope": 1}}), "--out", str(tmp_path / "x")]) == 2
    assert "algo.nope" in capsys.readouterr().err
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(_train_doc(tmp_path, seeds=[0, 1])))
    rc = main(["run", str(cfg), "--seed", "5", "--out", str(tmp_path / "cli"), "--override", "algo.total_steps=1024",
               "-q"])
    assert rc == 0
    manifest = json.loads((tmp_path / "cli" / "manifest.json").read_text())
    assert manifest["config"]["seeds"] == [5] and (tmp_path / "cli" / "metrics_seed5.csv").exists()
