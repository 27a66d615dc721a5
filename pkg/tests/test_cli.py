import json

import pytest

from ragsched.cli import main

BASE_CONFIG = {
    "capacity_bytes": 4 * 1024**3,
    "workload": {
        "mode": "poisson",
        "rate_per_sec": 2.0,
        "num_queries": 20,
        "length_profile": "single_hop_qa",
    },
    "seed": 7,
}


@pytest.fixture
def config_path(tmp_path):
    def write(extra=None, **kw):
        cfg = json.loads(json.dumps(BASE_CONFIG))
        cfg["output"] = {
            "report": str(tmp_path / "report.jsonl"),
            "summary": str(tmp_path / "summary.tsv"),
            "trace_log": str(tmp_path / "trace.jsonl"),
        }
        cfg.update(extra or {})
        cfg.update(kw)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg))
        return path

    return write


def test_simulate_writes_report_and_summary(tmp_path, config_path, capsys):
    path = config_path()
    assert main(["simulate", str(path)]) == 0
    assert (tmp_path / "report.jsonl").exists()
    assert (tmp_path / "summary.tsv").exists()
    assert (tmp_path / "trace.jsonl").exists()
    header = (tmp_path / "summary.tsv").read_text().splitlines()[0]
    assert header.split("\t") == [
        "policy", "mean_delay", "p50_delay", "p95_delay",
        "throughput_qps", "mean_quality", "fallback_rate",
    ]
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == 21  # meta line + 20 queries


def test_simulate_is_byte_identical_across_runs(tmp_path, config_path):
    path = config_path()
    assert main(["simulate", str(path)]) == 0
    first = (tmp_path / "summary.tsv").read_bytes(), (tmp_path / "report.jsonl").read_bytes()
    assert main(["simulate", str(path)]) == 0
    second = (tmp_path / "summary.tsv").read_bytes(), (tmp_path / "report.jsonl").read_bytes()
    assert first == second


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_config_key_exits_2(config_path, capsys):
    path = config_path(bogus_knob=1)
    assert main(["simulate", str(path)]) == 2
    assert "unknown top-level keys" in capsys.readouterr().err


def test_missing_trace_file_exits_2(config_path, capsys):
    path = config_path(
        extra={"workload": {"mode": "trace", "path": "/does/not/exist.jsonl"}}
    )
    assert main(["simulate", str(path)]) == 2
    assert "trace file not found" in capsys.readouterr().err


def test_simulate_from_trace_file(tmp_path, config_path):
    from ragsched.workload import gen_workload, save_trace
    from ragsched.workload import ArrivalMode, ArrivalSpec, WorkloadSpec, DATASET_PROFILES

    wl = gen_workload(
        WorkloadSpec(
            num_queries=10,
            arrival=ArrivalSpec(ArrivalMode.POISSON, 2.0),
            length_profile=DATASET_PROFILES["single_hop_qa"],
        ),
        seed=3,
    )
    trace = tmp_path / "wl.jsonl"
    save_trace(wl, trace)
    path = config_path(extra={"workload": {"mode": "trace", "path": str(trace)}})
    assert main(["simulate", str(path)]) == 0
    lines = (tmp_path / "report.jsonl").read_text().splitlines()
    assert len(lines) == 11


def test_sweep_emits_one_row_per_policy(tmp_path, config_path, capsys):
    path = config_path(
        sweep_grid=[
            {"method": "stuff", "num_chunks": 3},
            {"method": "map_rerank", "num_chunks": 2},
            {"method": "map_reduce", "num_chunks": 3, "intermediate_length": 60},
        ]
    )
    assert main(["sweep", str(path)]) == 0
    lines = (tmp_path / "summary.tsv").read_text().splitlines()
    assert len(lines) == 5  # header + adaptive + 3 fixed rows
    policies = [line.split("\t")[0] for line in lines[1:]]
    assert policies == ["adaptive", "stuff/3", "map_rerank/2", "map_reduce/3/60"]


def test_sweep_with_empty_grid_runs_adaptive_only(tmp_path, config_path):
    path = config_path(sweep_grid=[])
    assert main(["sweep", str(path)]) == 0
    lines = (tmp_path / "summary.tsv").read_text().splitlines()
    assert len(lines) == 2


def test_sweep_grid_flag_overrides_config(tmp_path, config_path):
    path = config_path(sweep_grid=[])
    grid = '[{"method": "stuff", "num_chunks": 2}]'
    assert main(["sweep", str(path), "--grid", grid]) == 0
    lines = (tmp_path / "summary.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in lines[1:]] == ["adaptive", "stuff/2"]


def test_profile_single_fact_query_maps_to_rerank(capsys):
    code = main(
        ["profile", "Where is the stadium located?", "--joint", "no",
         "--complexity", "low", "--pieces", "1"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "map_rerank" in out
    assert "chunks [1, 3]" in out
    assert "profile accepted" in out


def test_profile_remote_endpoint_down_exits_3(tmp_path, capsys):
    cfg = {
        "profiler": {"mode": "remote", "endpoint": "http://127.0.0.1:9", "timeout_secs": 0.3},
    }
    path = tmp_path / "remote.json"
    path.write_text(json.dumps(cfg))
    assert main(["profile", "anything", "--config", str(path)]) == 3


def test_report_resummarizes_existing_file(tmp_path, config_path, capsys):
    path = config_path()
    assert main(["simulate", str(path)]) == 0
    capsys.readouterr()
    out_summary = tmp_path / "resummary.tsv"
    code = main(["report", str(tmp_path / "report.jsonl"), "--summary", str(out_summary)])
    assert code == 0
    out = capsys.readouterr().out
    assert "mean_delay" in out
    assert out_summary.exists()
    # the re-derived table matches the simulate-time one
    assert (
        out_summary.read_text().splitlines()[1]
        == (tmp_path / "summary.tsv").read_text().splitlines()[1]
    )


def test_seed_override_changes_the_report(tmp_path, config_path):
    path = config_path()
    assert main(["simulate", str(path)]) == 0
    first = (tmp_path / "report.jsonl").read_bytes()
    assert main(["simulate", str(path), "--seed", "123"]) == 0
    second = (tmp_path / "report.jsonl").read_bytes()
    assert first != second


def test_shipped_example_config_loads():
    from ragsched.config import load_run_config

    cfg = load_run_config("configs/example_sim.json")
    assert cfg.workload_spec.num_queries == 200
    assert cfg.out_budget == 10
