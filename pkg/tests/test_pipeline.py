import json
import os
import shutil

import numpy as np
import pytest

from randgrating import pipeline
from randgrating.artifacts import read_csv, read_json
from randgrating.cli import main
from randgrating.config import load_config, loads
from randgrating.exceptions import ArtifactMismatchError

TINY = """
[experiment]
name = tiny
[surface]
preset = ex1
sigma = 1/12
ell = 2
[schedule]
kappas = 0.5, 1
samples = 2, 3
T = 8
N = 10
eta0 = 3e-4
seed = 5
[stats]
truth = process
"""


def tracked_bytes(out):
    man = read_json(os.path.join(out, "manifest.json"))
    files = {}
    for step in man["steps"].values():
        for rel in step["files"]:
            with open(os.path.join(out, rel), "rb") as fh:
                files[rel] = fh.read()
    return files


@pytest.fixture(scope="module")
def cfg():
    return loads(TINY)


@pytest.fixture(scope="module")
def full_run(cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert pipeline.cmd_run(pipeline.Run(cfg, out=str(out), workers=1)) == pipeline.EXIT_OK
    return str(out)


def test_run_produces_documented_layout(full_run, cfg):
    man = read_json(os.path.join(full_run, "manifest.json"))
    assert set(man["steps"]) == set(pipeline.STEPS)
    assert man["config_hash"] == cfg.hash() and man["seed"] == 5
    assert man["samples"] == {"0": "ok", "1": "ok", "2": "ok"}
    metrics = read_json(os.path.join(full_run, "report", "metrics.json"))
    assert {"err_mean", "err_cov", "n", "M"} <= set(metrics)
    assert metrics["M"] == 3 and metrics["truth"] == "process"
    hdr, data = read_csv(os.path.join(full_run, "reconstruct", "coefficients.csv"))
    assert hdr == ["m", "ok", "a0", "a1", "a2"] and data.shape == (3, 5)
    hdr, one = read_csv(os.path.join(full_run, "reconstruct", "samples", "m00002.csv"))
    assert hdr == ["p", "a"]
    np.testing.assert_array_equal(one[:, 1], data[2, 2:])
    with open(os.path.join(full_run, "reconstruct", "stage_log.jsonl")) as fh:
        first = json.loads(fh.readline())
    assert {"m", "j", "t", "delta1", "J", "wall"} <= set(first)
    # 2 stage-0 samples and 3 stage-1 samples, 3 angles each, plus records.json and config.ini
    assert len(man["steps"]["synthesize"]["files"]) == 5 * 3 + 2
    for name in pipeline.UNTRACKED:
        assert all(name not in step["files"] for step in man["steps"].values())


def test_rerun_is_bitwise_identical(full_run, cfg, tmp_path):
    pipeline.cmd_run(pipeline.Run(cfg, out=str(tmp_path), workers=1))
    assert tracked_bytes(str(tmp_path)) == tracked_bytes(full_run)
    with open(os.path.join(full_run, "manifest.json"), "rb") as a, open(tmp_path / "manifest.json", "rb") as b:
        assert a.read() == b.read()


def test_worker_count_does_not_change_outputs(full_run, cfg, tmp_path):
    pipeline.cmd_run(pipeline.Run(cfg, out=str(tmp_path), workers=2))
    assert tracked_bytes(str(tmp_path)) == tracked_bytes(full_run)


def test_steps_compose_to_run(full_run, cfg, tmp_path):
    run = pipeline.Run(cfg, out=str(tmp_path), workers=1)
    for step in (pipeline.cmd_synthesize, pipeline.cmd_reconstruct, pipeline.cmd_stats, pipeline.cmd_report):
        assert step(pipeline.Run(cfg, out=str(tmp_path), workers=1)) == 0
    assert tracked_bytes(run.out) == tracked_bytes(full_run)


def test_guard_refuses_other_config(full_run, cfg, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(full_run, out)
    with pytest.raises(ArtifactMismatchError, match="config hash"):
        pipeline.cmd_reconstruct(pipeline.Run(cfg.with_seed(6), out=str(out)))


def test_guard_detects_corruption(full_run, cfg, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(full_run, out)
    rec = out / "dataset" / "records" / "m00000_j0_l0.csv"
    rec.write_text(rec.read_text().replace("1", "2", 1))
    with pytest.raises(ArtifactMismatchError, match="m00000_j0_l0"):
        pipeline.cmd_reconstruct(pipeline.Run(cfg, out=str(out)))


def test_missing_step_is_named(cfg, tmp_path):
    with pytest.raises(ArtifactMismatchError, match="synthesize"):
        pipeline.cmd_reconstruct(pipeline.Run(cfg, out=str(tmp_path)))


def test_rerunning_a_step_drops_later_ones(full_run, cfg, tmp_path):
    out = tmp_path / "copy"
    shutil.copytree(full_run, out)
    run = pipeline.Run(cfg, out=str(out))
    pipeline.cmd_reconstruct(run)
    assert set(run.manifest()["steps"]) == {"synthesize", "reconstruct"}
    with pytest.raises(ArtifactMismatchError):
        pipeline.cmd_report(run)


def test_flag_threshold():
    assert pipeline._flag_status(1, 10, "x") == pipeline.EXIT_OK
    assert pipeline._flag_status(2, 10, "x") == pipeline.EXIT_NUMERICAL


def test_cli_exit_codes(full_run, tmp_path, config_dir):
    bad = tmp_path / "bad.ini"
    bad.write_text("[medium]\nmu = 0\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == pipeline.EXIT_CONFIG
    good = tmp_path / "tiny.ini"
    good.write_text(TINY)
    out = tmp_path / "copy"
    shutil.copytree(full_run, out)
    assert main(["stats", "--config", str(good), "--out", str(out)]) == pipeline.EXIT_OK
    assert main(["report", "--config", str(good), "--out", str(out), "--seed", "9"]) == pipeline.EXIT_ARTIFACT
    assert load_config(str(good)) == loads(TINY)


def test_cli_smoke_config(config_dir, tmp_path):
    code = main(["run", "--config", os.path.join(config_dir, "smoke.ini"), "--out", str(tmp_path), "--workers", "1"])
    assert code == pipeline.EXIT_OK
    assert read_json(tmp_path / "report" / "metrics.json")["M"] == 4
