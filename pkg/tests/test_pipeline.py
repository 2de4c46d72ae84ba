import csv
import json

import numpy as np
import pytest

from elcodec.baselayer import RateRecord, toy_encode, write_rate_log, write_yuv420
from elcodec.errors import ConfigError
from elcodec.modelcodec import load_reference
from elcodec.network import TrainingConfig
from elcodec.pipeline import (
    REPORT_SCHEMAS,
    ManifestMismatch,
    PretrainConfig,
    RunConfig,
    bd_rate_from_summary,
    emit_reports,
    pretrain_initial,
    run_decode,
    run_encode,
)
from elcodec.synthetic import textured_sequence, write_corpus

TINY = TrainingConfig(iters_per_epoch=3, max_epochs=2, batch_size=2, probe_crops=4)


def tiny_config(out, **kw):
    base = dict(
        output_dir=str(out),
        synthetic={"kind": "textured", "seed": 3, "frames": 3, "height": 48, "width": 48},
        qps=(37,),
        group_size=2,
        training=TINY,
    )
    base.update(kw)
    return RunConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return run_encode(tiny_config(out))


def test_run_layout_and_manifest(tiny_run):
    out = tiny_run.output_dir
    m = json.loads((out / "manifest.json").read_text())
    assert m["complete"] and m["config_hash"] == tiny_config(out).config_hash()
    for rel in ("summary.csv", "qp37/bl.bin", "qp37/rate_log.csv", "qp37/g000/el.bin", "qp37/g001/report.json"):
        assert rel in m["artifacts"]
    assert [r["qp"] for r in read_csv(out / "summary.csv")] == ["37"]


def test_config_hash_ignores_output_dir(tmp_path):
    assert tiny_config(tmp_path / "a").config_hash() == tiny_config(tmp_path / "b").config_hash()
    assert tiny_config(tmp_path, seed=1).config_hash() != tiny_config(tmp_path).config_hash()


def test_reported_model_rate_equals_file_size(tiny_run):
    for g in sorted((tiny_run.output_dir / "qp37").glob("g*")):
        report = json.loads((g / "report.json").read_text())
        size = (g / "el.bin").stat().st_size
        assert report["el_bytes"] == size
        chosen = [r for r in read_csv(g / "candidates.csv") if r["selected"] == "1"]
        if report["el_present"]:
            assert int(chosen[0]["r_model_bits"]) == 8 * size == report["r_model_bits"]
        else:
            assert not chosen and report["r_model_bits"] == 0


def test_frames_csv_rate_column(tiny_run):
    out = tiny_run.output_dir
    log = read_csv(out / "qp37" / "rate_log.csv")
    rows = read_csv(out / "qp37" / "g000" / "frames.csv") + read_csv(out / "qp37" / "g001" / "frames.csv")
    assert [r["bits"] for r in rows] == [r["bits"] for r in log]


def test_decode_has_zero_drift(tiny_run, tmp_path):
    res = run_decode(tiny_run.output_dir, tmp_path / "dec")
    assert res.digests_match and not res.errors
    assert len(res.frames[37]) == 3
    assert (tmp_path / "dec" / "qp37_enhanced.yuv").stat().st_size == 3 * 48 * 48 * 3 // 2
    for (qp, g), sel in tiny_run.selections.items():
        a = 2 * g
        assert all(np.array_equal(x, y) for x, y in zip(res.frames[qp][a : a + 2], sel.chosen_eval.frames))


def test_decode_corrupt_el_falls_back_to_bl(tiny_run, tmp_path):
    import shutil

    run = tmp_path / "copy"
    shutil.copytree(tiny_run.output_dir, run)
    el = run / "qp37" / "g000" / "el.bin"
    data = bytearray(el.read_bytes())
    data[len(data) // 2] ^= 0xFF
    el.write_bytes(bytes(data))
    res = run_decode(run, tmp_path / "dec")
    assert len(res.errors) == 1 and "group 0" in res.errors[0]
    frames = textured_sequence(3, 3, 48, 48)
    bl = [toy_encode(f, 37)[0] for f in frames]
    assert all(np.array_equal(a, b) for a, b in zip(res.frames[37][:2], bl[:2]))


def test_decode_rejects_other_initial_model(tiny_run, tmp_path):
    from elcodec.modelcodec import save_reference
    from elcodec.network import NetworkConfig, init_params, make_checkpoint

    other = tmp_path / "other.elm"
    save_reference(other, make_checkpoint(init_params(NetworkConfig.standard(), np.random.default_rng(99)), 0))
    with pytest.raises(ManifestMismatch):
        run_decode(tiny_run.output_dir, tmp_path / "dec", other)


def test_no_el_decode_is_bl(tmp_path):
    cfg = tiny_config(tmp_path / "c", synthetic={"kind": "constant", "value": 90, "frames": 2, "height": 64, "width": 64}, group_size=8)
    run = run_encode(cfg)
    sel = run.selections[(37, 0)]
    assert sel.chosen == "NO_EL"
    res = run_decode(run.output_dir)
    assert all(np.array_equal(a, b) for a, b in zip(res.frames[37], sel.baseline.frames))


def test_encode_is_deterministic(tiny_run, tmp_path):
    again = run_encode(tiny_config(tmp_path / "again"))
    assert again.manifest["artifacts"] == tiny_run.manifest["artifacts"]


def test_ingest_mode(tmp_path):
    frames = textured_sequence(5, 2, 48, 48)
    recons = [toy_encode(f, 32)[0] for f in frames]
    write_yuv420(tmp_path / "o.yuv", frames)
    write_yuv420(tmp_path / "r.yuv", recons)
    write_rate_log(tmp_path / "log.csv", [RateRecord(0, 4321, 32), RateRecord(1, 3210, 32)])
    cfg = tiny_config(
        tmp_path / "run", mode="ingest", synthetic=None, original=str(tmp_path / "o.yuv"),
        recon=str(tmp_path / "r.yuv"), rate_log=str(tmp_path / "log.csv"), width=48, height=48,
    )
    run = run_encode(cfg)
    rows = read_csv(run.output_dir / "qp32" / "g000" / "frames.csv")
    assert [int(r["bits"]) for r in rows] == [4321, 3210]
    res = run_decode(run.output_dir)
    assert res.digests_match and len(res.frames[32]) == 2


@pytest.mark.parametrize(
    "kw",
    [
        {"qps": ()},
        {"qps": (60,)},
        {"group_size": 0},
        {"mode": "vtm"},
        {"synthetic": None},
        {"synthetic": None, "original": "/nonexistent.yuv", "width": 8, "height": 8},
        {"initial_model": "/nonexistent.elm"},
    ],
)
def test_config_validated_before_compute(tmp_path, kw):
    out = tmp_path / "never"
    with pytest.raises(ConfigError):
        run_encode(tiny_config(out, **kw))
    assert not out.exists()


def test_failed_run_is_flagged_incomplete(tmp_path):
    cfg = tiny_config(tmp_path / "r", synthetic={"kind": "textured", "seed": 0, "frames": 1, "height": 24, "width": 24})
    with pytest.raises(Exception):
        run_encode(cfg)
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["complete"] is False and "error" in m
    with pytest.raises(ManifestMismatch):
        run_decode(tmp_path / "r")


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("ELCODEC_OUTPUT_DIR", str(tmp_path / "env"))
    assert tiny_config(tmp_path / "cfg").resolved_output_dir() == tmp_path / "env"


def test_reports(tiny_run):
    rep = emit_reports(tiny_run.output_dir)
    headers = {name: next(csv.reader(open(rep / name))) for name in REPORT_SCHEMAS}
    assert headers == {
        "entropy_curve.csv": ["qp", "group", "epoch", "wq_entropy", "residue_entropy"],
        "ratio_psnr.csv": ["qp", "group", "epoch", "compression_ratio", "mean_psnr", "psnr_gain"],
        "cost_curve.csv": ["qp", "group", "epoch", "j", "j_baseline", "selected"],
        "weight_hist.csv": ["qp", "group", "value", "count"],
        "rd_points.csv": ["qp", "bl_bits", "psnr_bl", "total_bits", "psnr_out"],
    }
    entropy = read_csv(rep / "entropy_curve.csv")
    n_ck = sum(len(read_csv(g / "candidates.csv")) for g in (tiny_run.output_dir / "qp37").glob("g*"))
    assert len(entropy) == n_ck
    hist = read_csv(rep / "weight_hist.csv")
    for g in ("0", "1"):
        assert sum(int(r["count"]) for r in hist if r["group"] == g) == 40224
    for name in ("entropy_curve.svg", "ratio_psnr.svg", "cost_curve.svg", "weight_hist.svg", "rd_curve.svg"):
        assert (rep / name).read_text().startswith("<svg")


def test_reports_reject_missing_fields(tiny_run, tmp_path):
    import shutil

    run = tmp_path / "copy"
    shutil.copytree(tiny_run.output_dir, run)
    (run / "qp37" / "g000" / "candidates.csv").write_text("epoch,id\n0,x\n")
    with pytest.raises(ManifestMismatch, match="malformed"):
        emit_reports(run)


def test_bd_rate_from_summary(tmp_path):
    rows = [(22, 40000, 40.0, 41000, 40.4), (27, 25000, 37.0, 26000, 37.5), (32, 15000, 34.0, 16000, 34.6), (37, 9000, 31.0, 10000, 31.7)]
    with open(tmp_path / "summary.csv", "w") as fh:
        fh.write("qp,frames,bl_bits,el_bits,total_bits,psnr_bl,psnr_out,el_groups\n")
        for qp, bl, pb, tot, po in rows:
            fh.write(f"{qp},8,{bl},{tot - bl},{tot},{pb},{po},1\n")
    assert bd_rate_from_summary(tmp_path / "summary.csv") < 0


def test_pretrain_improves_and_round_trips(tmp_path):
    write_corpus(tmp_path / "corpus", count=10, size=48, seed=1)
    cfg = PretrainConfig(iterations=120, batch_size=2, learning_rate=1e-3, qps=(32, 37), probe_crops=16)
    ck, stats = pretrain_initial(tmp_path / "corpus", cfg, tmp_path / "m.elm")
    assert stats["probe_mse_trained"] < stats["probe_mse_untrained"]
    assert load_reference(tmp_path / "m.elm").equals(ck.quantized())


def test_pretrain_is_deterministic(tmp_path):
    write_corpus(tmp_path / "corpus", count=2, size=40, seed=2)
    cfg = PretrainConfig(iterations=3, batch_size=2, qps=(37,), probe_crops=2)
    pretrain_initial(tmp_path / "corpus", cfg, tmp_path / "a.elm")
    pretrain_initial(tmp_path / "corpus", cfg, tmp_path / "b.elm")
    assert (tmp_path / "a.elm").read_bytes() == (tmp_path / "b.elm").read_bytes()


def test_pretrain_empty_corpus(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(ConfigError):
        pretrain_initial(tmp_path / "empty", PretrainConfig(iterations=1), tmp_path / "m.elm")
