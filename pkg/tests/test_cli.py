import argparse
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from skinseg import cli
from skinseg.checkpoint import from_network, save_checkpoint
from skinseg.config import KEYS, RunConfig
from skinseg.errors import ConfigError
from skinseg.layers import ReLU
from skinseg.metrics import EvalReport
from skinseg.models import ModelConfig, build_network, count_params

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "scripts"))
from make_synthetic_dataset import write_dataset  # noqa: E402

TINY = ["--set", "model.variant=unet", "--set", "model.scale=toy", "--set", "model.stage_filters=2,4",
        "--set", "model.fc_width=4", "--set", "model.input_size=8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("data"), 6, 3, 12, seed=0, domain="public")


@pytest.fixture
def tiny_ckpt(tmp_path):
    net = build_network(ModelConfig.toy("unet", stage_filters=[2, 4], fc_width=4, input_size=8), seed=1)
    path = tmp_path / "tiny.ckpt"
    save_checkpoint(from_network(net), path)
    return path


# -- run config ---------------------------------------------------------------------

def test_config_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("# comment\nmodel.variant = unet   # trailing\n\ntrain.batch_size=8\n", encoding="utf-8")
    rc = RunConfig.load(f, ["train.batch_size=4", "augment.enabled=false"])
    assert rc["model.variant"] == "unet" and rc["train.batch_size"] == 4
    assert rc.augment_params() is None


def test_config_rejects_unknown_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["train.learnig_rate=0.1"])
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["train.batch_size=many"])
    with pytest.raises(ConfigError):
        RunConfig.load(None, ["no_equals_sign"])
    f = tmp_path / "bad.cfg"
    f.write_text("model.colour=red\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        RunConfig.load(f)


def test_effective_lines_cover_every_key():
    lines = RunConfig().effective_lines("fine_tuning")
    keys = [ln.split("=", 1)[0] for ln in lines]
    assert keys == list(KEYS)
    assert "train.learning_rate=0.001" in lines
    assert "train.max_epochs=500" in lines and "train.patience=50" in lines
    assert "model.input_size=128" in lines


def test_effective_lines_reproduce_config():
    rc = RunConfig.load(None, [s for s in TINY if s != "--set"] + ["train.seed=5"])
    again = RunConfig.load(None, rc.effective_lines("direct_training"))
    assert again.model_config() == rc.model_config()
    assert again.train_config("direct_training").effective() == rc.train_config("direct_training").effective()


# -- encodings ----------------------------------------------------------------------

def test_confidence_encoding():
    np.testing.assert_array_equal(cli.confidence_to_u8([0.0, 1.0, 0.5, 0.25]), [0, 255, 128, 64])
    np.testing.assert_array_equal(cli.mask_to_u8(np.array([0.49, 0.5, 1.0])), [0, 255, 255])


# -- commands -----------------------------------------------------------------------

def test_params_command(capsys):
    assert cli.main(["params", "--set", "model.variant=unet_large"]) == 0
    out = capsys.readouterr().out
    n = count_params(ModelConfig("unet_large"))
    assert f"{n} parameters" in out and "135.5M" in out
    assert cli.main(["params", "--set", "model.variant=unet_large"]) == 0
    assert capsys.readouterr().out == out


def test_config_error_exit_code(capsys):
    assert cli.main(["params", "--set", "model.bogus=1"]) == 2
    assert "unknown config key" in capsys.readouterr().err
    assert cli.main(["params", "--set", "model.input_size=100"]) == 2


def test_gradcheck_layers_only(capsys):
    assert cli.main(["gradcheck", "--layers-only"]) == 0
    out = capsys.readouterr().out
    for name in ("conv2d", "dense_block", "residual_block", "merge_block"):
        assert name in out


class _BrokenReLU(ReLU):
    def backward(self, dy):
        return 2.0 * super().backward(dy)


def test_gradcheck_names_failing_layer(capsys):
    def case(rng):
        x = rng.normal((2, 4))
        return _BrokenReLU(), np.where(np.abs(x) < 0.1, 0.5, x), False

    args = argparse.Namespace(layers_only=True)
    assert cli.cmd_gradcheck(args, RunConfig(), layer_cases={"relu": case}) == 1
    assert "gradient check failed: relu" in capsys.readouterr().out


def test_train_eval_predict_roundtrip(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    rc = cli.main(["train", "--manifest", str(dataset), "--out", str(out), "--seed", "2", *TINY,
                   "--set", "train.max_epochs=2", "--set", "train.patience=2"])
    assert rc == 0
    for name in ("model.ckpt", "history.tsv", "report.tsv", "run.log"):
        assert (out / name).is_file()
    log = (out / "run.log").read_text()
    assert "train.learning_rate=0.01" in log and "train.seed=2" in log
    assert "eval J (D):" in capsys.readouterr().out

    ev = tmp_path / "eval"
    assert cli.main(["eval", "--checkpoint", str(out / "model.ckpt"), "--manifest", str(dataset),
                     "--out", str(ev)]) == 0
    line = capsys.readouterr().out
    report = EvalReport.load(ev / "report.tsv")
    assert f"J (D): {report.summary()}" in line
    assert len((ev / "report.tsv").read_text().splitlines()) == 1 + 3 + 2

    ft = tmp_path / "ft"
    assert cli.main(["finetune", "--checkpoint", str(out / "model.ckpt"), "--manifest", str(dataset),
                     "--out", str(ft), "--set", "train.max_epochs=1", "--set", "train.patience=1"]) == 0
    assert "train.learning_rate=0.001" in (ft / "run.log").read_text()


def test_training_command_is_deterministic(dataset, tmp_path):
    args = ["--manifest", str(dataset), *TINY, "--set", "train.max_epochs=2", "--set", "train.patience=2"]
    assert cli.main(["train", "--out", str(tmp_path / "a"), *args]) == 0
    assert cli.main(["train", "--out", str(tmp_path / "b"), *args]) == 0
    for name in ("model.ckpt", "history.tsv", "report.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_eval_needs_eval_split(tmp_path, tiny_ckpt):
    (tmp_path / "m.tsv").write_text("")
    assert cli.main(["eval", "--checkpoint", str(tiny_ckpt), "--manifest", str(tmp_path / "m.tsv"),
                     "--out", str(tmp_path / "o")]) == 2


def test_predict_outputs(tmp_path, tiny_ckpt, capsys):
    img = tmp_path / "photo.png"
    Image.fromarray(np.random.default_rng(0).integers(0, 256, (20, 30, 3), dtype=np.uint8)).save(img)
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not an image")
    out = tmp_path / "pred"
    assert cli.main(["predict", "--checkpoint", str(tiny_ckpt), "--out", str(out), str(bad), str(img)]) == 1
    err = capsys.readouterr().err
    assert "broken.png" in err
    conf = np.asarray(Image.open(out / "photo_conf.png"))
    mask = np.asarray(Image.open(out / "photo_mask.png"))
    assert conf.shape == mask.shape == (8, 8) and conf.dtype == np.uint8
    assert set(np.unique(mask)) <= {0, 255}
    np.testing.assert_array_equal(mask == 255, conf >= 128)
    assert np.asarray(Image.open(out / "photo_conf_full.png")).shape == (20, 30)
    full_mask = np.asarray(Image.open(out / "photo_mask_full.png"))
    assert full_mask.shape == (20, 30) and set(np.unique(full_mask)) <= {0, 255}
    assert cli.main(["predict", "--checkpoint", str(tiny_ckpt), "--out", str(out), str(img)]) == 0


def test_import_command(tmp_path, dataset, capsys):
    base = dataset.parent
    out = tmp_path / "imported.tsv"
    assert cli.main(["import", "--images", str(base / "images"), "--masks", str(base / "masks"),
                     "--split", "finetune", "--sample", "4", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4 and all(ln.endswith("\tfinetune") for ln in lines)
