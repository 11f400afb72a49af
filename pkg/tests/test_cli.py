import json

import numpy as np
import pytest
from PIL import Image
from scipy.io import wavfile

from listenhead.checkpoint import load_checkpoint
from listenhead.cli import main
from listenhead.coeffs import load_coeffs, write_coeffs

TINY = {
    "model.residual_channels": 4,
    "model.skip_channels": 4,
    "model.dilation_schedule": [1, 2],
    "model.lstm_hidden": 5,
    "model.expression_dim": 4,
    "train.epochs": 2,
    "train.lr": 0.005,
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert main(["synth-data", "--seed", "7", "--clips", "2", "--duration", "1.0",
                 "--out", str(root / "data"), "--config", str(cfg)]) == 0
    assert main(["train", "--data", str(root / "data" / "manifest.csv"), "--config", str(cfg),
                 "--out", str(root / "model.ckpt")]) == 0
    return root


def silence_wav(path, seconds=1.0):
    wavfile.write(path, 16000, np.zeros(int(16000 * seconds), dtype=np.int16))


# -- features ---------------------------------------------------------------------

def test_features_silence(tmp_path, capsys):
    silence_wav(tmp_path / "s.wav")
    code, out, err = run(capsys, "features", "--audio", tmp_path / "s.wav", "--out", tmp_path / "f.csv")
    assert code == 0 and err == ""
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == 31
    assert lines[0].startswith("mfcc00,mfcc01") and lines[0].endswith("zcr,loudness,energy")
    assert all(len(l.split(",")) == 45 for l in lines)


def test_features_deterministic(tmp_path, capsys):
    rng = np.random.default_rng(0)
    wavfile.write(tmp_path / "n.wav", 16000, (rng.uniform(-0.3, 0.3, 16000) * 32767).astype(np.int16))
    for name in ("a.csv", "b.csv"):
        assert run(capsys, "features", "--audio", tmp_path / "n.wav", "--out", tmp_path / name)[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_features_missing_file(tmp_path, capsys):
    code, out, err = run(capsys, "features", "--audio", tmp_path / "nope.wav", "--out", tmp_path / "f.csv")
    assert code == 2 and out == ""
    e = error_of(err)
    assert e["error"] == "data" and "nope.wav" in e["message"]


# -- synth-data -----------------------------------------------------------------------

def test_synth_data(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "synth-data", "--seed", 7, "--clips", 4, "--duration", 0.5,
                           "--out", tmp_path / name)
        assert code == 0 and json.loads(out)["clips"] == 4
    rows = (tmp_path / "a" / "manifest.csv").read_text().splitlines()
    assert len(rows) == 5
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_synth_data_zero_clips(tmp_path, capsys):
    code, _, err = run(capsys, "synth-data", "--seed", 7, "--clips", 0, "--duration", 1,
                       "--out", tmp_path)
    assert code == 1 and error_of(err)["error"] == "usage"


def test_seed_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LISTENHEAD_SEED", "7")
    run(capsys, "synth-data", "--clips", 1, "--duration", 0.5, "--out", tmp_path / "env")
    monkeypatch.delenv("LISTENHEAD_SEED")
    run(capsys, "synth-data", "--seed", 7, "--clips", 1, "--duration", 0.5, "--out", tmp_path / "flag")
    assert (tmp_path / "env" / "clip_000.wav").read_bytes() == \
        (tmp_path / "flag" / "clip_000.wav").read_bytes()


# -- train ------------------------------------------------------------------------------

def test_train_outputs(workspace, capsys):
    ckpt = load_checkpoint(workspace / "model.ckpt")
    assert ckpt.epoch == 2
    assert ckpt.model.config.lstm_hidden == 5
    assert ckpt.meta["config"]["train.lr"] == 0.005


def test_train_prints_json_lines(workspace, tmp_path, capsys):
    code, out, err = run(capsys, "train", "--data", workspace / "data" / "manifest.csv",
                         "--config", workspace / "tiny.json", "--out", tmp_path / "m.ckpt",
                         "--set", "train.lr=0", "--set", "train.epochs=3")
    assert code == 0 and err == ""
    records = [json.loads(l) for l in out.splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert records[0]["total"] == records[1]["total"] == records[2]["total"]


def test_train_bad_config_key(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "model.lstm_hiden": 3}))
    code, _, err = run(capsys, "train", "--data", workspace / "data" / "manifest.csv",
                       "--config", bad, "--out", tmp_path / "m.ckpt")
    assert code == 1
    e = error_of(err)
    assert e["error"] == "config" and "model.lstm_hiden" in e["message"]


def test_train_bad_config_value(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "model.dilation_schedule": [1, 0]}))
    code, _, err = run(capsys, "train", "--data", workspace / "data" / "manifest.csv",
                       "--config", bad, "--out", tmp_path / "m.ckpt")
    assert code == 1 and error_of(err)["error"] == "config"


# -- infer ------------------------------------------------------------------------------

def test_infer(workspace, tmp_path, capsys):
    data = workspace / "data"
    args = ["infer", "--ckpt", workspace / "model.ckpt", "--audio", data / "clip_000.wav",
            "--ref-coeffs", data / "clip_000.csv"]
    assert run(capsys, *args, "--out", tmp_path / "a.csv")[0] == 0
    assert run(capsys, *args, "--out", tmp_path / "b.csv")[0] == 0
    pred = load_coeffs(tmp_path / "a.csv")
    assert pred.values.shape == (30, 10)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_infer_dims_mismatch(workspace, tmp_path, capsys):
    write_coeffs(tmp_path / "ref.csv", np.zeros((1, 12)))
    code, _, err = run(capsys, "infer", "--ckpt", workspace / "model.ckpt",
                       "--audio", workspace / "data" / "clip_000.wav",
                       "--ref-coeffs", tmp_path / "ref.csv", "--out", tmp_path / "o.csv")
    assert code == 2 and error_of(err)["error"] == "data"


def test_infer_not_a_checkpoint(workspace, tmp_path, capsys):
    (tmp_path / "x.ckpt").write_bytes(b"garbage!" * 4)
    code, _, err = run(capsys, "infer", "--ckpt", tmp_path / "x.ckpt",
                       "--audio", workspace / "data" / "clip_000.wav",
                       "--ref-coeffs", workspace / "data" / "clip_000.csv", "--out", tmp_path / "o.csv")
    assert code == 2 and "not a checkpoint" in error_of(err)["message"]


# -- eval -------------------------------------------------------------------------------

def test_eval_identical(workspace, tmp_path, capsys):
    gt = workspace / "data" / "clip_000.csv"
    code, out, _ = run(capsys, "eval", "--pred", gt, "--gt", gt, "--out", tmp_path / "r.json")
    assert code == 0
    report = json.loads(out)
    assert list(report) == ["angle", "exp", "trans", "ssim", "psnr", "cpbd", "fid", "csim"]
    assert report["angle"] == report["exp"] == report["trans"] == 0.0
    assert report["fid"] == report["csim"] == "n/a"
    assert json.loads((tmp_path / "r.json").read_text()) == report


def test_eval_with_frames(workspace, tmp_path, capsys):
    for d in ("p", "g"):
        (tmp_path / d).mkdir()
        for i in range(2):
            img = np.full((32, 32), 80, dtype=np.uint8)
            img[:, 16:] = 200
            Image.fromarray(img).save(tmp_path / d / f"frame_{i + 1:06d}.png")
    gt = workspace / "data" / "clip_000.csv"
    code, out, _ = run(capsys, "eval", "--pred", gt, "--gt", gt,
                       "--frames-pred", tmp_path / "p", "--frames-gt", tmp_path / "g")
    report = json.loads(out)
    assert code == 0
    assert report["ssim"] == pytest.approx(1.0) and report["psnr"] == "inf"
    assert 0.0 <= report["cpbd"] <= 1.0


def test_eval_row_mismatch(tmp_path, capsys):
    write_coeffs(tmp_path / "a.csv", np.zeros((3, 10)))
    write_coeffs(tmp_path / "b.csv", np.zeros((4, 10)))
    code, out, err = run(capsys, "eval", "--pred", tmp_path / "a.csv", "--gt", tmp_path / "b.csv")
    assert code == 2 and out == "" and error_of(err)["error"] == "data"


# -- grad-check and usage ----------------------------------------------------------------

def test_grad_check(workspace, capsys):
    code, out, err = run(capsys, "grad-check", "--config", workspace / "tiny.json", "--seed", 3)
    report = json.loads(out)
    assert report["max_relative_error"] < 1e-4 and report["pass"] is True
    assert code == 0 and err == ""


def test_grad_check_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(capsys, "grad-check", "--config", bad, "--seed", 0)
    assert code == 1 and error_of(err)["error"] == "config"


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 1
    code, _, err = run(capsys, "features", "--audio", "x.wav")
    assert code == 1 and error_of(err)["error"] == "usage"
