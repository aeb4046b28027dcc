import csv
import json
import os
import shutil
import subprocess
import sys

import pytest

from commute_od import artifacts as art
from commute_od.cli import main
from commute_od.errors import StageInputError
from commute_od.pipeline import run, run_sharded

from conftest import make_config, read_text

STAGE_OUTPUTS = {
    "extract-stays": ["stays.csv", "ingest_report.json"],
    "infer-places": ["places.csv", "funnel.json", "work_sensitivity.json"],
    "build-od": ["tracts.csv", "commuters.csv", "od.csv", "od_report.json"],
    "validate": ["validation.json", "scatter.csv"],
    "route-stats": ["routes.csv", "commute_summary.json", "duration_histogram.csv", "route_cache_offline.csv"],
}


def test_all_writes_every_artifact(small_world):
    for names in STAGE_OUTPUTS.values():
        for n in names:
            assert (small_world / n).exists(), n
    manifest = json.loads(read_text(small_world / "manifest.json"))["artifacts"]
    assert "resolved_config.txt" in manifest and "od.csv" in manifest
    assert manifest["od.csv"]["sha256"] == art.sha256_file(str(small_world / "od.csv"))
    rec = json.loads(read_text(small_world / "recovery.json"))
    assert rec["home_recovery"] >= 0.95


def test_funnel_counts_devices_without_stays(small_world):
    funnel = json.loads(read_text(small_world / "funnel.json"))
    assert funnel["total_users"] == 60


def test_stages_rerun_in_isolation(small_world, tmp_path):
    out = tmp_path / "iso"
    shutil.copytree(small_world, out)
    before = {n: (out / n).read_bytes() for names in STAGE_OUTPUTS.values() for n in names if "cache" not in n}
    cfg = make_config(out, synth_agents=60, seed=7)
    for stage in STAGE_OUTPUTS:
        for n in STAGE_OUTPUTS[stage]:
            if "cache" not in n:
                os.remove(out / n)
        run(stage, cfg)
    after = {n: (out / n).read_bytes() for n in before}
    assert after == before


def test_build_od_from_hand_written_places(tmp_path, small_world):
    for n in ("tracts.geojson", "city.geojson"):
        shutil.copy(small_world / n, tmp_path / n)
    tracts = list(csv.DictReader(open(small_world / "tracts.csv")))
    assert tracts
    (tmp_path / "places.csv").write_text(
        "device_id,home_lat,home_lon,work_lat,work_lon,commute_days,weekday_count\n"
        "x,29.71,-95.49,29.75,-95.45,11,11\n"
        "y,29.71,-95.49,,,,\n"
    )
    rep = run("build-od", make_config(tmp_path))
    assert rep["commuters_included"] == 1
    assert read_text(tmp_path / "od.csv").splitlines()[1].endswith(",1.0")


def test_missing_input_is_a_clear_error(tmp_path, capsys):
    with pytest.raises(StageInputError, match="run `extract-stays` first"):
        run("infer-places", make_config(tmp_path))
    assert main(["validate", "--out", str(tmp_path)]) == 2
    assert "required input" in capsys.readouterr().err


def test_failed_write_is_quarantined(tmp_path):
    target = tmp_path / "x.csv"
    target.write_text("good\n")
    with pytest.raises(RuntimeError):
        with art.artifact(str(target)) as fh:
            fh.write("half")
            raise RuntimeError("boom")
    assert target.read_text() == "good\n"
    assert (tmp_path / "x.csv.quarantine").read_text() == "half"


def _double(payload, idx):
    return [(payload[k], 2 * payload[k]) for k in idx]


def test_run_sharded_covers_every_item():
    names = [f"d{k}" for k in range(50)]
    payload = list(range(50))
    serial = run_sharded(_double, payload, names, 1)
    parallel = run_sharded(_double, payload, names, 4)
    assert sorted(x for part in parallel for x in part) == serial[0]


def test_workers_do_not_change_artifacts(small_world, tmp_path):
    out = tmp_path / "w2"
    shutil.copytree(small_world, out, ignore=shutil.ignore_patterns("route_cache_*"))
    run("all", make_config(out, synth_agents=60, seed=7, workers=2))
    for name in ("stays.csv", "places.csv", "od.csv", "work_sensitivity.json", "manifest.json", "resolved_config.txt"):
        assert (out / name).read_bytes() == (small_world / name).read_bytes(), name


def test_sweep(small_world, tmp_path):
    out = tmp_path / "sw"
    shutil.copytree(small_world, out)
    run("sweep", make_config(out, synth_agents=60, seed=7, sweep_time_thresholds="900,3600", sweep_exponents="1,2"))
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [(r["time_threshold_s"], r["exponent"]) for r in rows] == [("900", "1"), ("900", "2"), ("3600", "1"), ("3600", "2")]
    assert all(r["pearson_r"] for r in rows)


def test_cli_subprocess(tmp_path):
    out = tmp_path / "cli"
    conf = tmp_path / "run.conf"
    conf.write_text("out_dir = cli\nsynth_agents = 8\nseed = 1\n")
    env = dict(os.environ)
    r = subprocess.run([sys.executable, "-m", "commute_od", "synth", "--config", str(conf)],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["agents"] == 8
    r = subprocess.run([sys.executable, "-m", "commute_od", "all", "--config", str(conf), "--set", "work_exponent=2"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "work_exponent = 2" in read_text(out / "resolved_config.txt")
    bad = subprocess.run([sys.executable, "-m", "commute_od", "all", "--set", "bogus=1"], capture_output=True, text=True)
    assert bad.returncode == 2 and "unknown config key" in bad.stderr


def test_route_stats_with_external_backend(small_world, tmp_path):
    from test_routing import MockServer

    out = tmp_path / "ext"
    out.mkdir()
    shutil.copy(small_world / "places.csv", out / "places.csv")
    srv = MockServer()
    try:
        cfg = make_config(out, routing_backend="external", routing_endpoint=srv.url, routing_concurrency=2)
        rep = run("route-stats", cfg)
        assert rep["failed"] == 0 and rep["requests"] == len(srv.calls) > 0
        assert (out / "route_cache_external.csv").exists()
        again = run("route-stats", cfg)
        assert again["requests"] == 0 and again["cache_hits"] == rep["requests"]
        summary = json.loads(read_text(out / "commute_summary.json"))
        assert summary["modes"]["car"]["routed"] == summary["commuters"]
    finally:
        srv.close()
