import json
from pathlib import Path

import numpy as np
import pytest

from garmentdiff import imageio
from garmentdiff.cli import run
from garmentdiff.config import ConfigError, load_config
from garmentdiff.data import make_toy_dataset

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.cfg"
GOLDEN = Path(__file__).parent / "golden" / "report.md"


def test_config_resolution(tmp_path):
    cfg = load_config(TOY, ["stage=2", "sampler.steps=3", "augment=false"])
    assert cfg["train.stage"] == 2 and cfg["steps"] == 3 and cfg["train.augment"] is False
    with pytest.raises(ConfigError):
        load_config(TOY, ["nonexistent=1"])
    with pytest.raises(ConfigError):
        load_config(TOY, ["image_size=8"])  # data.image_size vs engine.image_size
    with pytest.raises(ConfigError):
        load_config(TOY, ["steps=many"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("[model]\nwidth = 3\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    snap = tmp_path / "snap.cfg"
    snap.write_text(cfg.snapshot())
    assert load_config(snap).values == cfg.values


def test_train_smoke(tmp_path, capsys):
    out = tmp_path / "tr"
    assert run(["train", "--config", str(TOY), "--overrides", "stage=1", "max_steps=10", "--out", str(out)]) == 0
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 10 and all("loss" in json.loads(x) for x in lines)
    assert (out / "checkpoint.gdz").is_file()
    assert json.loads((out / "run.json").read_text())["seed"] == 0
    assert "[train]" in (out / "resolved.ini").read_text()
    err = capsys.readouterr().err.strip().splitlines()
    assert all(json.loads(x) for x in err)
    # stage 2 from the stage-1 checkpoint
    out2 = tmp_path / "tr2"
    ck = str(out / "checkpoint.gdz")
    assert run(["train", "--config", str(TOY), "--overrides", "stage=2", "max_steps=2", f"checkpoint={ck}",
                "--out", str(out2)]) == 0


def test_tryon_determinism(tmp_path):
    args = ["tryon", "--config", str(TOY), "--seed", "7", "--overrides", "steps=3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "tryon.png").read_bytes() == (tmp_path / "b" / "tryon.png").read_bytes()


def test_generate_and_synthesize(tmp_path):
    assert run(["generate", "--overrides", "steps=2", "--out", str(tmp_path / "g")]) == 0
    assert imageio.load_rgb(tmp_path / "g" / "generate.png").shape == (3, 32, 32)
    assert run(["synthesize", "--out", str(tmp_path / "s")]) == 0
    assert len((tmp_path / "s" / "manifest.jsonl").read_text().splitlines()) == 4


def test_exit_codes(tmp_path, capsys):
    assert run(["train", "--overrides", "bogus=1", "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "config"
    assert run(["train", "--nope"]) == 2
    assert run(["train", "--overrides", "stage=2", "max_steps=1", "--out", str(tmp_path)]) == 1
    assert run(["evaluate", "--out", str(tmp_path / "r.md")]) == 2


def _results_manifest(root: Path):
    recs = make_toy_dataset(4, 11)
    rng = np.random.default_rng(0)
    rows = []
    for i, r in enumerate(recs):
        imageio.save_rgb(root / f"t{i}.png", r.person_image)
        imageio.save_rgb(root / f"g{i}.png", r.garment_image)
        imageio.save_mask(root / f"m{i}.png", r.agnostic_mask)
        noisy = np.clip(r.person_image + 0.15 * rng.standard_normal(r.person_image.shape), 0, 1)
        imageio.save_rgb(root / f"n{i}.png", noisy)
        for meth, img in (("oracle", f"t{i}.png"), ("noisy", f"n{i}.png")):
            rows.append({"method": meth, "tryon": img, "garment": f"g{i}.png", "mask": f"m{i}.png",
                         "target": f"t{i}.png", "prompt": r.target_prompt})
    for i, rank in enumerate([["oracle", "noisy"]] * 3 + [["noisy", "oracle"]]):
        for aspect in ("identity", "quality", "preservation"):
            rows.append({"respondent": i, "aspect": aspect, "ranking": rank})
    (root / "results.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return root / "results.jsonl"


def test_evaluate_golden(tmp_path):
    manifest = _results_manifest(tmp_path)
    out = tmp_path / "report.md"
    assert run(["evaluate", "--manifest", str(manifest), "--out", str(out)]) == 0
    text = out.read_text()
    assert "**1.000**" in text  # oracle SSIM
    assert text == GOLDEN.read_text()
    assert (tmp_path / "report.resolved.ini").is_file()
    # json -> report round trip
    js = tmp_path / "report.json"
    assert run(["evaluate", "--manifest", str(manifest), "--out", str(js), "--overrides", "format=json"]) == 0
    md = tmp_path / "again.md"
    assert run(["report", "--input", str(js), "--out", str(md)]) == 0
    assert md.read_text() == text
