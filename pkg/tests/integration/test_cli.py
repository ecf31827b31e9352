# planemorph/tests/integration/test_cli.py
import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

from planemorph.cli.main import EXIT_OK, EXIT_USAGE, main
from planemorph.data.volume import Volume
from planemorph.io.mvol import read_field, read_volume, write_mvol
from planemorph.registration.field_ops import warp

logger = logging.getLogger(__name__)

TINY_CONFIG = {
    "model": {"variant": "EM-11", "stride": 2, "embed_dim": 8, "merge_d": 2, "n_heads": 2},
    "loss": {"ncc_window": 3},
    "train": {"lr": 1e-3, "epochs": 2, "seed": 0},
}


def _file_bytes(directory):
    return {name: open(os.path.join(directory, name), "rb").read() for name in sorted(os.listdir(directory))}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def trained_run(tmp_path, synthetic_dir, config_path):
    out = str(tmp_path / "run")
    assert main(["train", "--config", config_path, "--data", synthetic_dir, "--out", out]) == EXIT_OK
    return out


def test_gen_data_is_byte_identical_across_runs(tmp_path):
    args = ["gen-data", "--n", "2", "--size", "16", "--labels", "2", "--max-disp", "1.5", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    first, second = _file_bytes(str(tmp_path / "a")), _file_bytes(str(tmp_path / "b"))
    assert "manifest.json" in first
    assert len(first) == 1 + 2 * 6
    assert first == second


def test_gen_data_zero_displacement_copies_fixed(tmp_path):
    out = str(tmp_path / "still")
    assert main(["gen-data", "--out", out, "--n", "1", "--size", "16", "--labels", "1",
                 "--max-disp", "0"]) == EXIT_OK
    fixed = read_volume(os.path.join(out, "fixed_000.mvol"))
    moving = read_volume(os.path.join(out, "moving_000.mvol"))
    assert fixed.data.tobytes() == moving.data.tobytes()
    assert np.all(read_field(os.path.join(out, "gt_field_000.mvol")).data == 0.0)


def test_train_writes_run_directory(trained_run):
    for name in ("resolved-config.json", "metrics.csv", "final.ckpt", "final.ckpt.bin", "best.ckpt"):
        assert os.path.exists(os.path.join(trained_run, name)), name
    metrics = pd.read_csv(os.path.join(trained_run, "metrics.csv"))
    assert metrics["epoch"].tolist() == [1, 2]
    with open(os.path.join(trained_run, "resolved-config.json"), encoding="utf-8") as fh:
        resolved = json.load(fh)
    assert resolved["model"]["embed_dim"] == 8
    assert resolved["loss"]["lambda_bend"] == 0.01


def test_train_multires_config_is_echoed_coarsest_first(tmp_path, synthetic_dir):
    document = json.loads(json.dumps(TINY_CONFIG))
    document["model"]["multires"] = [2, 4]
    document["train"]["epochs"] = 1
    path = tmp_path / "multires.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    out = str(tmp_path / "multires_run")
    assert main(["train", "--config", str(path), "--data", synthetic_dir, "--out", out]) == EXIT_OK
    with open(os.path.join(out, "resolved-config.json"), encoding="utf-8") as fh:
        resolved = json.load(fh)
    assert resolved["model"]["multires"] == [4, 2]
    assert os.path.exists(os.path.join(out, "final.ckpt"))


def test_train_rejects_unknown_variant(tmp_path, synthetic_dir):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"variant": "EM-99"}}), encoding="utf-8")
    code = main(["train", "--config", str(path), "--data", synthetic_dir, "--out", str(tmp_path / "x")])
    assert code == EXIT_USAGE
    assert not os.path.exists(tmp_path / "x" / "final.ckpt")


def test_train_rejects_malformed_json(tmp_path, synthetic_dir):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    assert main(["train", "--config", str(path), "--data", synthetic_dir,
                 "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_missing_subcommand_is_usage_error():
    assert main([]) == EXIT_USAGE


def test_eval_writes_report_and_table(tmp_path, trained_run, synthetic_dir):
    report_path = str(tmp_path / "report.json")
    assert main(["eval", "--checkpoint", os.path.join(trained_run, "final.ckpt"),
                 "--data", synthetic_dir, "--report", report_path]) == EXIT_OK
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)
    assert report["n_pairs"] == 3
    assert 0.0 <= report["dice_mean"] <= 1.0
    assert report["tre_before_mean"] > 0.0
    table = pd.read_csv(str(tmp_path / "report.csv"))
    assert table["name"].tolist() == ["pair_000", "pair_001", "pair_002"]


def test_register_writes_warped_volume_and_field(tmp_path, trained_run, synthetic_dir):
    out, field = str(tmp_path / "warped.mvol"), str(tmp_path / "field.mvol")
    assert main(["register", "--checkpoint", os.path.join(trained_run, "final.ckpt"),
                 "--fixed", os.path.join(synthetic_dir, "fixed_000.mvol"),
                 "--moving", os.path.join(synthetic_dir, "moving_000.mvol"),
                 "--out", out, "--field", field]) == EXIT_OK
    assert read_volume(out).shape == (16, 16, 16)
    assert read_field(field).shape == (16, 16, 16)


def test_register_output_is_the_moving_volume_warped_by_the_saved_field(tmp_path, trained_run, synthetic_dir):
    out, field = str(tmp_path / "warped.mvol"), str(tmp_path / "field.mvol")
    moving_path = os.path.join(synthetic_dir, "moving_001.mvol")
    assert main(["register", "--checkpoint", os.path.join(trained_run, "best.ckpt"),
                 "--fixed", os.path.join(synthetic_dir, "fixed_001.mvol"), "--moving", moving_path,
                 "--out", out, "--field", field]) == EXIT_OK
    rewarped = warp(read_volume(moving_path), read_field(field))
    assert float(np.abs(rewarped.data - read_volume(out).data).max()) == 0.0


def test_register_rejects_shape_mismatch(tmp_path, trained_run, synthetic_dir):
    small = str(tmp_path / "small.mvol")
    write_mvol(small, Volume.from_array(np.zeros((8, 8, 8), dtype=np.float32)))
    code = main(["register", "--checkpoint", os.path.join(trained_run, "final.ckpt"),
                 "--fixed", os.path.join(synthetic_dir, "fixed_000.mvol"), "--moving", small,
                 "--out", str(tmp_path / "w.mvol"), "--field", str(tmp_path / "f.mvol")])
    assert code == EXIT_USAGE


def test_bench_attn_table(tmp_path):
    out = str(tmp_path / "cost.csv")
    assert main(["bench-attn", "--grid", "8,8,8", "--dim", "96", "--out", out]) == EXIT_OK
    table = pd.read_csv(out)
    assert table["strategy"].tolist() == ["full", "xy", "yz", "zx"]
    assert table["score_elems"].tolist() == [262144, 32768, 32768, 32768]
    assert table["full_ratio"].tolist() == [1.0, 8.0, 8.0, 8.0]


def test_bench_attn_unit_grid(tmp_path):
    out = str(tmp_path / "unit.csv")
    assert main(["bench-attn", "--grid", "1,1,1", "--dim", "4", "--out", out]) == EXIT_OK
    assert pd.read_csv(out)["full_ratio"].tolist() == [1.0, 1.0, 1.0, 1.0]


def test_bench_attn_bad_grid(tmp_path):
    assert main(["bench-attn", "--grid", "8,8", "--out", str(tmp_path / "c.csv")]) == EXIT_USAGE


def test_count_params_output(config_path, capsys):
    assert main(["count-params", "--config", config_path, "--size", "16"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("parameters: ")
    assert int(lines[0].split(": ")[1]) > 0
    assert lines[1].startswith("multiply-adds (16^3): ")
    assert any(line.strip().startswith("decoder.flow:") for line in lines[2:])


def test_identical_config_and_seed_give_identical_metrics(tmp_path, synthetic_dir, config_path):
    runs = []
    for tag in ("first", "second"):
        out = str(tmp_path / tag)
        assert main(["train", "--config", config_path, "--data", synthetic_dir, "--out", out]) == EXIT_OK
        with open(os.path.join(out, "metrics.csv"), "rb") as fh:
            runs.append(fh.read())
    assert runs[0] == runs[1]
