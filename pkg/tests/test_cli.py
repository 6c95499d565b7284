"""CLI behavior: scenarios run, outputs are deterministic, reports recompute."""

import csv
import statistics

import pytest

from acme.cli import main


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_cli(*argv):
    return main(list(argv))


def test_sim_unknown_scenario_is_config_error(tmp_path, capsys):
    assert run_cli("sim", "--scenario", str(tmp_path / "missing.scn")) == 1
    bad = tmp_path / "bad.scn"
    bad.write_text("[experiment]\nkind = lunar\nseed = 1\n")
    assert run_cli("sim", "--scenario", str(bad)) == 1
    noseed = tmp_path / "noseed.scn"
    noseed.write_text("[experiment]\nkind = loss\n")
    assert run_cli("sim", "--scenario", str(noseed)) == 1


def small_latency_scn(tmp_path):
    scn = tmp_path / "small.scn"
    scn.write_text(
        "[experiment]\n"
        "kind = latency\n"
        "seed = 4\n"
        "sizes = 16, 32\n"
        "topologies = dtree, ttree\n"
        "ops = MIN, MEDIAN\n"
        "repetitions = 5\n")
    return scn


def test_sim_latency_and_report_median_recompute(tmp_path, capsys):
    scn = small_latency_scn(tmp_path)
    out = tmp_path / "out"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out)) == 0
    raw = read_rows(out / "latency_raw.csv")
    assert len(raw) == 2 * 2 * 2 * 5
    assert run_cli("report", str(out)) == 0
    report = read_rows(out / "report_latency.csv")
    # independent recomputation of one median from the raw rows
    for row in report:
        n = int(row["n"])
        values = [float(r["latency_ms"]) for r in raw
                  if int(r["n"]) == n and r["topology"] == "ttree" and r["op"] == "MIN"]
        assert float(row["ttree_MIN_median_ms"]) == pytest.approx(
            statistics.median(values), abs=1e-3)


def test_sim_deterministic_outputs(tmp_path):
    scn = small_latency_scn(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out1)) == 0
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out2)) == 0
    assert (out1 / "latency_raw.csv").read_bytes() == (out2 / "latency_raw.csv").read_bytes()


def test_sim_seed_override_changes_scenario(tmp_path):
    scn = small_latency_scn(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out1)) == 0
    assert run_cli("sim", "--scenario", str(scn), "--seed", "99",
                   "--out", str(out2)) == 0
    assert (out1 / "latency_raw.csv").read_bytes() != (out2 / "latency_raw.csv").read_bytes()


def test_small_loss_scenario_and_report(tmp_path):
    scn = tmp_path / "loss.scn"
    scn.write_text(
        "[experiment]\n"
        "kind = loss\n"
        "seed = 85\n"
        "nodes = 64\n"
        "queries = 40\n"
        "p_list = 0.0, 0.002\n")
    out = tmp_path / "out"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out)) == 0
    rows = read_rows(out / "loss.csv")
    assert len(rows) == 2
    assert float(rows[0]["lossy_fraction"]) == 0.0  # p = 0: nothing lost
    assert run_cli("report", str(out)) == 0
    report = read_rows(out / "report_loss.csv")
    assert report[0]["lossy_responses_pct"] == "0.0"


def test_churn_scenario_writes_transcript(tmp_path):
    scn = tmp_path / "churn.scn"
    scn.write_text(
        "[experiment]\n"
        "kind = churn\n"
        "seed = 6\n"
        "config = config.xml\n"
        "nodes = 16\n"
        "horizon_ms = 30000\n")
    (tmp_path / "config.xml").write_text(
        """<t><action ID="1" name="startNode">
        <params numToStart="5"/>
        <conditions><condition type="timer" value="0"/></conditions>
        </action></t>""")
    out = tmp_path / "out"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out)) == 0
    lines = (out / "churn_transcript.csv").read_text().splitlines()
    assert lines[0].startswith("timestamp_ms,")
    events = read_rows(out / "churn_events.csv")
    assert sum(1 for e in events if e["event"] == "start") == 5


def test_selfrepair_scenario_scripted_loads_round_trip(tmp_path):
    scn = tmp_path / "sr.scn"
    scn.write_text(
        "[experiment]\n"
        "kind = selfrepair\n"
        "seed = 11\n"
        "config = sr.xml\n"
        "nodes = 8\n"
        "roots = 0, 1\n"
        "spikes = 3:4:70\n"
        "horizon_ms = 420000\n")
    (tmp_path / "sr.xml").write_text(
        open("configs/selfrepair_reboot.xml").read())
    out = tmp_path / "out"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out)) == 0
    rows = read_rows(out / "selfrepair_transcript.csv")
    fires = [r for r in rows if r["action"] == "EXECUTE"]
    assert len(fires) == 1
    assert fires[0]["target"].startswith("node-004")  # the scripted spike node


def test_workload_scenario_writes_metrics(tmp_path):
    scn = tmp_path / "wl.scn"
    scn.write_text(
        "[experiment]\n"
        "kind = workload\n"
        "seed = 5\n"
        "nodes = 10\n"
        "instances = 10\n"
        "period_ms = 3000\n"
        "horizon_ms = 120000\n")
    out = tmp_path / "out"
    assert run_cli("sim", "--scenario", str(scn), "--out", str(out)) == 0
    rows = read_rows(out / "workload_metrics.csv")
    assert rows
    assert all(float(r["completion_rate"]) == 1.0 for r in rows)


def test_report_empty_dir_is_config_error(tmp_path):
    assert run_cli("report", str(tmp_path)) == 1


def test_query_bad_input_is_config_error(capsys):
    assert run_cli("query", "--roots", "127.0.0.1:1",
                   "port=1&sensor=x&op=NOPE&epoch=0") == 1
    assert run_cli("query", "--roots", "", "port=1&sensor=x&op=MIN&epoch=0") == 1


def test_query_unreachable_root_is_runtime_error():
    rc = run_cli("query", "--roots", "127.0.0.1:9", "--timeout", "1",
                 "port=9000&sensor=load&host=ALL&op=AVG&epoch=0")
    assert rc == 2


def test_shipped_scenarios_parse():
    from acme.simnet.scenario import load_scenario

    for name in ("latency", "bytes", "loss", "tree_shape", "churn",
                 "selfrepair", "workload"):
        scenario = load_scenario(f"scenarios/{name}.scn")
        assert scenario["kind"]
