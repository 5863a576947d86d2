import json

import numpy as np
import pytest
import torch
from PIL import Image

import mgnet.pipeline as pipeline
from mgnet.checkpoint import Checkpoint, CheckpointError, write_container
from mgnet.metrics import evaluate_dataset
from mgnet.model import MGNet, count_parameters, forward
from mgnet.pipeline import (
    TrainConfig,
    build_model,
    evaluate,
    infer,
    load_config,
    lr_at,
    model_from_checkpoint,
    train,
)


def tiny_cfg(**kw):
    base = dict(profile="tiny", input_size=96, batch_size=4, epochs=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def test_recipe_defaults():
    cfg = TrainConfig()
    assert (cfg.lr0, cfg.momentum, cfg.weight_decay) == (0.08, 0.9, 0.0005)
    assert (cfg.epochs, cfg.batch_size, cfg.input_size) == (32, 12, 384)
    assert cfg.scales == (0.7, 1.0, 1.2) and cfg.t_refine == 2


def test_lr_schedule():
    cfg = TrainConfig(epochs=4)
    total, per_epoch = 40, 10
    assert lr_at(0, total, cfg, per_epoch) == 0.0
    assert lr_at(5, total, cfg, per_epoch) == pytest.approx(0.04)
    assert lr_at(10, total, cfg, per_epoch) == pytest.approx(0.08)
    assert lr_at(25, total, cfg, per_epoch) == pytest.approx(0.04)
    assert lr_at(40, total, cfg, per_epoch) == 0.0
    assert lr_at(10, total, cfg) == pytest.approx(0.08)
    lrs = [lr_at(s, total, cfg, per_epoch) for s in range(41)]
    assert max(lrs) == pytest.approx(0.08)


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"lr0": 0.1, "bogus": 1}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(p)


def test_config_json_and_toml(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"profile": "tiny", "scales": [0.7, 1.0, 1.2], "use_frm": False}))
    (tmp_path / "c.toml").write_text('profile = "tiny"\nscales = [0.7, 1.0, 1.2]\nuse_frm = false\n')
    a, b = load_config(tmp_path / "c.json"), load_config(tmp_path / "c.toml")
    assert a == b and a.use_frm is False and a.scales == (0.7, 1.0, 1.2)
    assert TrainConfig.from_dict(a.to_dict()) == a


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=-1)


def test_forward_shapes_and_toggles():
    x = torch.randn(1, 3, 96, 96)
    for use_frm in (True, False):
        for use_ppg in (True, False):
            m = MGNet("tiny", use_frm=use_frm, use_ppg=use_ppg).eval()
            out = forward(m, x)
            assert out.final_logits.shape == (1, 1, 96, 96)
            assert out.coarse_logits.shape == (1, 1, 48, 48)
            assert len(out.trace) == (3 if use_ppg else 1)
            again = forward(m, x)
            assert torch.equal(out.final_logits, again.final_logits)


def test_no_ppg_final_is_upsampled_coarse():
    m = MGNet("tiny", use_ppg=False).eval()
    x = torch.randn(1, 3, 64, 64)
    out = m(x)
    up = torch.nn.functional.interpolate(out.coarse_logits, size=(64, 64), mode="bilinear", align_corners=False)
    assert torch.equal(out.final_logits, up)


def test_parameter_counts_change_with_flags():
    counts = {(f, p): count_parameters(MGNet("tiny", use_frm=f, use_ppg=p)) for f in (0, 1) for p in (0, 1)}
    assert counts[(1, 1)] > counts[(0, 1)] > counts[(0, 0)]
    assert counts[(1, 1)] > counts[(1, 0)] > counts[(0, 0)]
    with torch.device("meta"):
        full = count_parameters(MGNet("full"))
    assert full == 868833551


def test_zero_lr_step_leaves_parameters():
    m = MGNet("tiny")
    before = {k: v.clone() for k, v in m.named_parameters()}
    opt = torch.optim.SGD(m.parameters(), lr=0.0, momentum=0.9, weight_decay=5e-4)
    m(torch.randn(2, 3, 64, 64)).final_logits.mean().backward()
    opt.step()
    for k, v in m.named_parameters():
        assert torch.equal(v, before[k]), k


def test_train_smoke_and_determinism(synth8, tmp_path):
    _, samples = synth8
    res = train(tiny_cfg(), samples, out_dir=tmp_path)
    assert len(res.log) == 2
    assert all(np.isfinite(r["loss"]) for r in res.log)
    assert set(res.log[0]) == {"step", "epoch", "loss", "bce", "ual", "lambda", "lr"}
    assert (tmp_path / "epoch_001.ckpt").is_file() and (tmp_path / "last.ckpt").is_file()
    assert len((tmp_path / "train_log.jsonl").read_text().splitlines()) == 2
    again = train(tiny_cfg(max_steps=1), samples)
    assert again.log[0]["loss"] == res.log[0]["loss"]


def test_env_seed_override(synth8, monkeypatch):
    _, samples = synth8
    base = train(tiny_cfg(max_steps=1, seed=3), samples).log[0]["loss"]
    monkeypatch.setenv("MGNET_SEED", "3")
    via_env = train(tiny_cfg(max_steps=1, seed=99), samples)
    assert via_env.log[0]["loss"] == base
    assert via_env.checkpoint.config["seed"] == 3


def test_train_errors(synth8, monkeypatch):
    _, samples = synth8
    with pytest.raises(ValueError, match="empty"):
        train(tiny_cfg(), [])
    monkeypatch.setattr(pipeline, "total_loss",
                        lambda p, g, step, cfg, return_parts=False: (
                            (p.sum() * float("nan"), {"bce": p.sum(), "ual": None, "lambda": 0.0})
                            if return_parts else p.sum() * float("nan")))
    with pytest.raises(FloatingPointError, match="step 0"):
        train(tiny_cfg(), samples)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    from mgnet.data import load_dataset, synth_generate

    root = tmp_path_factory.mktemp("pipe")
    layout = synth_generate(4, 64, seed=1, out=root)
    samples = list(load_dataset(layout, 64))
    cfg = TrainConfig(profile="tiny", input_size=64, batch_size=2, epochs=1, max_steps=2, seed=0)
    return train(cfg, samples).checkpoint, samples, layout


def test_checkpoint_roundtrip(trained, tmp_path):
    ckpt, samples, _ = trained
    path = ckpt.save(tmp_path / "m.ckpt")
    loaded = Checkpoint.load(path)
    assert loaded.step == ckpt.step and loaded.config == ckpt.config
    for k, v in ckpt.params.items():
        assert torch.equal(v, loaded.params[k]), k
    a = evaluate(ckpt, samples)
    b = evaluate(loaded, samples)
    assert a == b


def test_checkpoint_version_mismatch(tmp_path):
    path = write_container(tmp_path / "x.ckpt", {"w": torch.zeros(1)})
    blob = torch.load(path, weights_only=True)
    blob["version"] = 99
    torch.save(blob, path)
    with pytest.raises(CheckpointError, match="version"):
        Checkpoint.load(path)
    torch.save({"something": 1}, path)
    with pytest.raises(CheckpointError):
        Checkpoint.load(path)


def test_evaluate_perfect_oracle():
    g = np.zeros((8, 8), np.uint8)
    g[2:5, 2:6] = 1
    assert evaluate_dataset([("a", g.astype(float), g)]).miou == 100.0


def test_infer_outputs(trained, tmp_path):
    ckpt, samples, layout = trained
    img_path = sorted(layout.images_path.glob("*.png"))[0]
    written = infer(ckpt, [img_path], tmp_path / "plain")
    assert len(written) == 2

    written = infer(ckpt, [img_path], tmp_path / "trace", dump_trace=True)
    traces = [p for p in written if "_trace" in p.name]
    assert len(traces) == ckpt.config["t_refine"] + 1

    model = model_from_checkpoint(ckpt)
    prob, _ = pipeline.predict(model, samples[0].image)
    png = np.asarray(Image.open(tmp_path / "plain" / f"{img_path.stem}_prob.png"), dtype=np.float64) / 255
    assert np.abs(png - prob).max() <= 1 / 255


def test_evaluate_matches_saved_predictions(trained, tmp_path):
    ckpt, samples, layout = trained
    paths = sorted(layout.images_path.glob("*.png"))
    infer(ckpt, paths, tmp_path)
    report = evaluate(ckpt, samples)
    rows = {r.id: r for r in report.per_image}
    for s in samples:
        prob = np.asarray(Image.open(tmp_path / f"{s.id}_prob.png"), dtype=np.float64) / 255
        binary = np.asarray(Image.open(tmp_path / f"{s.id}_mask.png")) >= 128
        from_png = evaluate_dataset([(s.id, binary.astype(float), s.mask)])
        assert from_png.per_image[0].iou == rows[s.id].iou
        assert from_png.per_image[0].ber == rows[s.id].ber
        assert abs(np.abs(prob - s.mask).mean() - rows[s.id].mae) <= 1 / 255


def test_build_model_from_config_flags():
    m = build_model(TrainConfig(profile="tiny", use_frm=False, use_ppg=False))
    assert m.refiner is None and not m.frm.multi_scale
