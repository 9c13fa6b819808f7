import csv
import json

import pytest

import flowcorr.cli as cli
from flowcorr.flow import InvariantViolation
from flowcorr.trace_io import write_native

from conftest import toy_trace


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "abab.csv"
    path.write_text(write_native(toy_trace("ABAB")))
    return path


@pytest.fixture
def small_spec(tmp_path):
    from flowcorr.trace_io import scan_and_bursty_spec, spec_to_dict
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec_to_dict(scan_and_bursty_spec(duration_s=0.2))))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_lru_toy(toy_file, tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(["simulate", "--trace", str(toy_file), "--policy", "lru", "--entries", "2",
                   "--assoc", "0", "--out", str(out)])
    assert rc == 0
    assert "0.5000" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"][0]["hit_rate"] == 0.5
    assert json.loads((out / "config.json").read_text())["config"]["policy"] == "lru"


def test_missing_trace_exit_2(tmp_path, capsys):
    rc = cli.main(["simulate", "--trace", str(tmp_path / "nope.pcap"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "nope.pcap" in capsys.readouterr().err


def test_bad_config_exit_2(toy_file, tmp_path):
    assert cli.main(["simulate", "--trace", str(toy_file), "--entries", "96",
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["simulate", "--trace", str(toy_file), "--features", "6,6",
                     "--out", str(tmp_path / "o")]) == 2


def test_invariant_failure_exit_1(toy_file, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise InvariantViolation("forced")
    monkeypatch.setattr(cli, "simulate", boom)
    assert cli.main(["simulate", "--trace", str(toy_file), "--out", str(tmp_path / "o")]) == 1


def test_config_layering(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"entries": 128, "seed": 4, "policy": "lru"}))
    args = cli.build_parser().parse_args(["simulate", "--config", str(conf), "--seed", "9"])
    cfg = cli.resolve_config(args, environ={"FLOWCORR_ENTRIES": "512", "FLOWCORR_ALLOW_BYPASS": "no"})
    assert (cfg.entries, cfg.seed, cfg.policy, cfg.allow_bypass) == (512, 9, "lru", False)
    # a config.json written by a run is accepted back verbatim
    wrapped = tmp_path / "w.json"
    wrapped.write_text(json.dumps({"config": {"assoc": 0}}))
    args = cli.build_parser().parse_args(["simulate", "--config", str(wrapped)])
    assert cli.resolve_config(args, environ={}).assoc == 0
    with pytest.raises(cli.ConfigError):
        cli.resolve_config(args, environ={"FLOWCORR_ENTRIES": "many"})


def test_hp_cold_config_matches_lru(toy_file, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--trace", str(toy_file), "--policy", "lru,hp", "--entries", "2",
                     "--assoc", "0", "--out", str(out)]) == 0
    res = json.loads((out / "summary.json").read_text())["results"]
    assert res[0]["hits"] == res[1]["hits"] == 2


def test_limit(toy_file, tmp_path):
    out = tmp_path / "lim"
    assert cli.main(["limit", "--trace", str(toy_file), "--sizes", "1,2", "--out", str(out)]) == 0
    r = rows(out / "limit.csv")
    assert len(r) == 4
    by = {(x["size"], x["policy"]): float(x["hit_rate"]) for x in r}
    assert by[("1", "min")] >= by[("1", "lru")] and by[("2", "min")] >= by[("2", "lru")]
    first = (out / "limit.csv").read_bytes()
    cli.main(["limit", "--trace", str(toy_file), "--sizes", "1,2", "--out", str(out)])
    assert (out / "limit.csv").read_bytes() == first


def test_sweep_and_rank(small_spec, tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--trace", str(small_spec), "--ranking", "6,27,10", "--entries", "64",
                     "--out", str(out)]) == 0
    assert [x["feature_id"] for x in rows(out / "sweep.csv")] == ["6", "27", "10"]
    out = tmp_path / "rk"
    assert cli.main(["rank", "--trace", str(small_spec), "--candidates", "4,6,11", "--entries", "64",
                     "--max-iters", "3", "--out", str(out)]) == 0
    log = json.loads((out / "rank.json").read_text())
    n = len(log["passes"])
    assert 1 <= n <= 3
    assert sorted(p.name for p in out.glob("sweep_ig*.csv")) == [f"sweep_ig{k}.csv" for k in range(1, n + 1)]


def test_trace_commands(small_spec, tmp_path, capsys):
    native = tmp_path / "t.csv"
    pcap = tmp_path / "t.pcap"
    back = tmp_path / "back.csv"
    assert cli.main(["trace", "generate", str(native), "--spec", str(small_spec)]) == 0
    assert cli.main(["trace", "convert", str(native), str(pcap)]) == 0
    assert cli.main(["trace", "convert", str(pcap), str(back)]) == 0
    assert back.read_text() == native.read_text()
    again = tmp_path / "again.csv"
    cli.main(["trace", "generate", str(again), "--spec", str(small_spec)])
    assert again.read_bytes() == native.read_bytes()
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    capsys.readouterr()
    assert cli.main(["trace", "stats", str(empty)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["packets"] == 0 and stats["distinct_flows"] == 0


def test_report(small_spec, tmp_path):
    lru = tmp_path / "lru"
    cli.main(["simulate", "--trace", str(small_spec), "--policy", "lru", "--entries", "64", "--out", str(lru)])
    assert cli.main(["report", str(lru)]) == 0
    assert not (lru / "report" / "feature_metrics.csv").exists()
    assert (lru / "report" / "efficiency_hist_lru.csv").exists()

    hp = tmp_path / "hp"
    cli.main(["simulate", "--trace", str(small_spec), "--policy", "hp", "--entries", "64", "--out", str(hp)])
    assert cli.main(["report", str(hp)]) == 0
    rep = hp / "report"
    fm = rows(rep / "feature_metrics.csv")
    assert {r["family"] for r in fm} == {"all", "reuse", "bypass"}
    wh = rows(rep / "weight_hist.csv")
    per_feature = {}
    for r in wh:
        per_feature[r["feature_id"]] = per_feature.get(r["feature_id"], 0) + int(r["count"])
    assert set(per_feature.values()) == {65536}
    for r in rows(rep / "lifecycle_stats_hp.csv"):
        if r["metric"] == "efficiency":
            assert 0.0 <= float(r["q0"]) <= float(r["q100"]) <= 1.0


def test_report_missing_inputs(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path)]) == 2
    assert "summary.json" in capsys.readouterr().err
