"""End-to-end command-line behavior with tiny 32px runs."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from polypgan.cli import main
from polypgan.losses import LOSS_COMBOS
from polypgan.training import load_checkpoint, make_predict_fn, models_from_checkpoint

TINY = [
    "--set", "model.input_size=32",
    "--set", "train.steps=2",
    "--set", "train.batch_size=2",
    "--set", "data.n_synthetic=3",
]


def _synth(tmp_path, n=3, seed=0):
    root = tmp_path / "data"
    rc = main(
        ["synth", "--out", str(root), "--set", "model.input_size=32",
         "--set", f"data.n_synthetic={n}", "--seed", str(seed)]
    )
    assert rc == 0
    return root


def _train(tmp_path, data_root, extra=()):
    out = tmp_path / "run"
    rc = main(
        ["train", "--out", str(out), "--set", f"data.root={data_root}", *TINY, *extra]
    )
    assert rc == 0
    return out / "checkpoints" / "checkpoint_final.pt", out


# ---------------------------------------------------------------------------
# synth


def test_synth_writes_pairs(tmp_path):
    root = _synth(tmp_path, n=3)
    assert len(list((root / "images").glob("*.png"))) == 3
    assert len(list((root / "masks").glob("*.png"))) == 3


def test_synth_same_seed_identical_bytes(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    args = ["--set", "model.input_size=32", "--set", "data.n_synthetic=2", "--seed", "9"]
    assert main(["synth", "--out", str(a), *args]) == 0
    assert main(["synth", "--out", str(b), *args]) == 0
    for f in sorted((a / "images").iterdir()):
        assert f.read_bytes() == (b / "images" / f.name).read_bytes()


def test_synth_zero_samples_is_usage_error(tmp_path):
    rc = main(["synth", "--out", str(tmp_path / "x"), "--set", "data.n_synthetic=0"])
    assert rc == 1


# ---------------------------------------------------------------------------
# train


def test_train_writes_log_and_checkpoint(tmp_path):
    ckpt, out = _train(tmp_path, _synth(tmp_path))
    assert ckpt.exists()
    lines = (out / "train_log.csv").read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[1] == "step,seg_loss,adv_term,g_total,d_loss,wall_time"
    assert len(lines) == 2 + 2  # two steps


def test_train_override_reflected_in_log_header(tmp_path):
    root = _synth(tmp_path)
    _, out = _train(tmp_path, root, extra=["--set", "loss.combo=bdice"])
    header = (out / "train_log.csv").read_text().splitlines()[0]
    cfg = json.loads(header.removeprefix("# config:"))
    assert cfg["loss.combo"] == "bdice"


def test_train_missing_dataset_is_runtime_error(tmp_path):
    rc = main(
        ["train", "--out", str(tmp_path / "r"), "--set", "data.root=/no/such/dir", *TINY]
    )
    assert rc == 2


def test_train_bad_key_is_usage_error(tmp_path):
    rc = main(["train", "--out", str(tmp_path / "r"), "--set", "train.stepz=2"])
    assert rc == 1


def test_train_synthetic_by_default(tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--out", str(out), *TINY])
    assert rc == 0
    assert (out / "checkpoints" / "checkpoint_final.pt").exists()


# ---------------------------------------------------------------------------
# eval


def test_eval_writes_metrics_and_masks(tmp_path):
    root = _synth(tmp_path)
    ckpt, _ = _train(tmp_path, root)
    out = tmp_path / "eval"
    rc = main(["eval", str(ckpt), str(root), "--out", str(out)])
    assert rc == 0
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3 + 1  # header + per-image + mean
    masks = sorted((out / "masks").glob("*.png"))
    assert len(masks) == 3
    arr = np.asarray(Image.open(masks[0]))
    assert set(np.unique(arr)).issubset({0, 255})


def test_eval_empty_dataset_fails(tmp_path):
    root = _synth(tmp_path)
    ckpt, _ = _train(tmp_path, root)
    empty = tmp_path / "empty"
    (empty / "images").mkdir(parents=True)
    (empty / "masks").mkdir()
    assert main(["eval", str(ckpt), str(empty), "--out", str(tmp_path / "e")]) == 2


def test_eval_missing_checkpoint_fails(tmp_path):
    root = _synth(tmp_path)
    rc = main(["eval", str(tmp_path / "no.pt"), str(root), "--out", str(tmp_path / "e")])
    assert rc == 2


# ---------------------------------------------------------------------------
# predict


def test_predict_outputs_and_quantization(tmp_path):
    root = _synth(tmp_path)
    ckpt, _ = _train(tmp_path, root)
    image_path = sorted((root / "images").iterdir())[0]
    out = tmp_path / "pred"
    rc = main(["predict", str(ckpt), str(image_path), "--out", str(out)])
    assert rc == 0
    stem = image_path.stem
    files = sorted(p.name for p in out.iterdir())
    assert files == [f"{stem}_mask.png", f"{stem}_prob.png"]

    mask = np.asarray(Image.open(out / f"{stem}_mask.png"))
    assert set(np.unique(mask)).issubset({0, 255})

    # probability PNG pixels are round(255 * p) of the model output
    generator, _, tcfg = models_from_checkpoint(load_checkpoint(ckpt))
    with Image.open(image_path) as im:
        resized = im.convert("RGB").resize(
            (tcfg.model.input_size, tcfg.model.input_size), Image.BILINEAR
        )
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    prob = make_predict_fn(generator)(arr)[:, :, 0]
    png = np.asarray(Image.open(out / f"{stem}_prob.png"))
    np.testing.assert_array_equal(png, np.round(255.0 * prob).astype(np.uint8))


def test_predict_heatmap_adds_exactly_one_file(tmp_path):
    root = _synth(tmp_path)
    ckpt, _ = _train(tmp_path, root)
    image_path = sorted((root / "images").iterdir())[0]
    out1 = tmp_path / "p1"
    out2 = tmp_path / "p2"
    assert main(["predict", str(ckpt), str(image_path), "--out", str(out1)]) == 0
    assert main(["predict", str(ckpt), str(image_path), "--out", str(out2), "--heatmap"]) == 0
    extra = {p.name for p in out2.iterdir()} - {p.name for p in out1.iterdir()}
    assert extra == {f"{image_path.stem}_heatmap.png"}
    heat = np.asarray(Image.open(out2 / f"{image_path.stem}_heatmap.png"))
    assert heat.shape == (32, 32)  # upsampled to the model input size


def test_predict_undecodable_image_fails(tmp_path):
    root = _synth(tmp_path)
    ckpt, _ = _train(tmp_path, root)
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"junk")
    assert main(["predict", str(ckpt), str(bad), "--out", str(tmp_path / "p")]) == 2


# ---------------------------------------------------------------------------
# ablate


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    out = tmp_path_factory.mktemp("abl")
    rc = main(
        [
            "ablate", "--out", str(out),
            "--set", "model.input_size=32",
            "--set", "train.steps=1",
            "--set", "train.batch_size=2",
            "--set", "data.n_synthetic=2",
            "--seed", "3",
        ]
    )
    return rc, out


def test_ablate_exit_zero(ablation):
    rc, _ = ablation
    assert rc == 0


def test_ablate_loss_table_has_nine_rows(ablation):
    _, out = ablation
    lines = (out / "loss_ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 9
    combos = [line.split(",")[0] for line in lines[1:]]
    assert combos == list(LOSS_COMBOS)
    assert all(line.split(",")[1] == "ok" for line in lines[1:])


def test_ablate_module_table_has_five_rows(ablation):
    _, out = ablation
    lines = (out / "module_ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 5
    variants = [line.split(",")[0] for line in lines[1:]]
    assert variants == [
        "baseline",
        "no_rese",
        "no_convcrf",
        "rese_no_se",
        "no_convcrf_no_rese",
    ]
    header = lines[0].split(",")
    assert "gen_params" in header and "disc_params" in header


def test_ablate_failures_recorded_and_exit_nonzero(tmp_path):
    out = tmp_path / "abl_fail"
    rc = main(
        [
            "ablate", "--out", str(out),
            "--set", "data.root=/no/such/dir",
            "--set", "train.steps=1",
        ]
    )
    assert rc == 2
    lines = (out / "loss_ablation.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 9
    assert all("failed" in line for line in lines[1:])


# ---------------------------------------------------------------------------
# usage

def test_unknown_command_is_usage_error():
    assert main(["bogus"]) == 1


def test_config_file_via_cli(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(
        "model.input_size: 32\ntrain.steps: 1\ntrain.batch_size: 2\ndata.n_synthetic: 2\n"
    )
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "train_log.csv").read_text().splitlines()[0]
    assert '"train.steps": 1' in header
