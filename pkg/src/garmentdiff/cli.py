"""``garmentdiff`` command-line entry point.

Every command writes ``resolved.ini`` (the full resolved config) and
``run.json`` (command, root seed, argv) next to its outputs, so a run can be
repeated from its snapshot.  Logs are JSON lines on stderr.  Exit codes: 0
success, 2 config/usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import Config, ConfigError, load_config

log = logging.getLogger("garmentdiff")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "msg": record.getMessage()}
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True)


def _setup_logging():
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(_JsonFormatter())
    log.handlers[:] = [h]
    log.setLevel(logging.INFO)
    log.propagate = False


def _info(msg, **fields):
    log.info(msg, extra={"fields": fields})


# ---------------------------------------------------------------------------
# helpers


def _bundle(cfg: Config, need_encoder=False, need_controlnet=False):
    from .checkpoint import load_checkpoint
    from .models import build_bundle
    from .unet import UNetConfig

    ckpt = cfg["model.checkpoint"]
    if ckpt:
        b = load_checkpoint(ckpt)
    else:
        m = cfg.section("model")
        unet = UNetConfig(depth=m["depth"], base_channels=m["base_channels"], embedding_dim=m["embedding_dim"],
                          heads=m["heads"])
        s = cfg.section("schedule")
        b = build_bundle(unet, T=s["T"], beta_start=s["beta_start"], beta_end=s["beta_end"],
                         codec_factor=m["codec_factor"], context_len=m["context_len"], init_seed=m["init_seed"])
        _info("random-init model (no checkpoint given)", init_seed=m["init_seed"])
    if need_encoder and b.garment_encoder is None:
        b.add_garment_encoder()
    if need_controlnet and b.controlnet is None:
        b.add_controlnet()
    return b.eval()


def _records(cfg: Config):
    from .data import make_toy_dataset
    from .data_engine import load_manifest

    if cfg["data.manifest"]:
        return load_manifest(cfg["data.manifest"])
    d = cfg.section("data")
    return make_toy_dataset(d["toy_records"], d["toy_seed"], d["image_size"])


def _pipeline(cfg: Config, bundle):
    from .pipelines import GarmentPipeline

    s = cfg.section("sampler")
    clip = s["clip_sample"] if s["clip_sample"] > 0 else None
    return GarmentPipeline(bundle, drop_garment_uncond=s["drop_garment"], garment_t0=s["garment_t0"],
                           paste_back=s["paste_back"], clip_sample=clip)


def _write_snapshot(out_dir: Path, cfg: Config, args, prefix: str = ""):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{prefix}resolved.ini").write_text(cfg.snapshot())
    run = {"command": args.command, "seed": args.seed, "config": args.config, "overrides": args.overrides}
    (out_dir / f"{prefix}run.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: Config, args, out: Path):
    from .checkpoint import save_checkpoint
    from .training import TrainingConfig, train

    t = cfg.section("train")
    stage = t["stage"]
    bundle = _bundle(cfg)
    if stage == 2 and bundle.garment_encoder is None:
        raise RuntimeError("stage 2 requires a stage-1 checkpoint (model.checkpoint)")
    tc = TrainingConfig(stage=stage, learning_rate=t["learning_rate"], batch_size=t["batch_size"],
                        max_steps=t["max_steps"], optimizer=t["optimizer"], momentum=t["momentum"],
                        lr_schedule=t["lr_schedule"], prompt_dropout=t["prompt_dropout"], seed=args.seed,
                        attention_mode=cfg["sampler.attention_mode"], garment_timestep=t["garment_timestep"],
                        pose_kind=t["pose_kind"], augmentations=None if t["augment"] else frozenset())
    records = _records(cfg)
    with open(out / "train_log.jsonl", "w") as fh:
        def logger(**fields):
            line = json.dumps(fields, sort_keys=True)
            fh.write(line + "\n")
            _info("step", **fields)

        losses = train(bundle, records, tc, logger)
    save_checkpoint(bundle, out / "checkpoint.gdz", extra={"stage": stage, "steps": len(losses), "seed": args.seed})
    _info("saved checkpoint", path=str(out / "checkpoint.gdz"), final_loss=losses[-1] if losses else None)


def _request_kwargs(cfg: Config, args):
    s = cfg.section("sampler")
    return dict(seed=args.seed, steps=s["steps"], guidance_scale=s["guidance_scale"],
                attention_mode=s["attention_mode"])


def cmd_generate(cfg: Config, args, out: Path):
    from . import imageio
    from .pipelines import GenerationRequest

    bundle = _bundle(cfg, need_encoder=cfg["sampler.attention_mode"] != "none")
    rec = _records(cfg)[cfg["data.record"]]
    size = rec.person_image.shape[-1]
    req = GenerationRequest(garment_image=rec.garment_image, garment_prompt=rec.garment_category_prompt,
                            target_prompt=args.prompt or rec.target_prompt, height=size, width=size,
                            **_request_kwargs(cfg, args))
    res = _pipeline(cfg, bundle).generate_gc_t2i(req)
    imageio.save_rgb(out / "generate.png", res.image)
    _info("wrote image", path=str(out / "generate.png"))


def cmd_tryon(cfg: Config, args, out: Path):
    from . import imageio
    from .pipelines import TryOnRequest

    bundle = _bundle(cfg, need_encoder=cfg["sampler.attention_mode"] != "none", need_controlnet=True)
    records = _records(cfg)
    i = cfg["data.record"]
    person, garment = records[i], records[(i + 1) % len(records)]
    mask = person.agnostic_mask
    if cfg["data.invert_mask"]:
        mask = 1.0 - mask
    req = TryOnRequest(garment_image=garment.garment_image, garment_prompt=garment.garment_category_prompt,
                       target_prompt=args.prompt or garment.target_prompt, source_image=person.person_image,
                       mask=mask, pose=person.pose(cfg["train.pose_kind"]), **_request_kwargs(cfg, args))
    res = _pipeline(cfg, bundle).tryon(req, control_scale=cfg["sampler.control_scale"])
    imageio.save_rgb(out / "tryon.png", res.image)
    _info("wrote image", path=str(out / "tryon.png"))


def cmd_synthesize(cfg: Config, args, out: Path):
    from .data_engine import generator_images, mock_backends, run_engine

    e = cfg.section("engine")
    images = generator_images(e["images"], args.seed, e["image_size"])
    entries = run_engine(images, mock_backends(), out, seed=args.seed, radius=e["radius"],
                         max_attempts=e["max_attempts"])
    failed = sum("failure" in x for x in entries)
    _info("engine done", records=len(entries) - failed, failures=failed, manifest=str(out / "manifest.jsonl"))


def _evaluate_manifest(path: Path, cfg: Config):
    """Results manifest: JSONL rows of either kind

    sample:   {"method", "tryon", "garment", "mask", "target"?, "prompt"?}  (PNG paths, relative)
    response: {"respondent", "aspect", "ranking": [methods, best first]}
    """
    from . import imageio
    from .evalkit import (EvalReport, StudyResponse, dino_m, embedding_similarity, fid, human_scores, kid, ssim,
                          toy_embedder)

    root = path.parent
    rows = [json.loads(x) for x in path.read_text().splitlines() if x.strip()]
    samples = [r for r in rows if "tryon" in r]
    responses = [StudyResponse(str(r["respondent"]), r["aspect"], tuple(r["ranking"])) for r in rows if "ranking" in r]
    methods = list(dict.fromkeys([r["method"] for r in samples] + [m for r in responses for m in r.ranking]))
    if not methods:
        raise RuntimeError(f"{path}: no samples or study responses")
    emb = None
    metrics = {}
    for meth in methods:
        per = {"ssim": [], "dino_m": [], "clip_i": [], "clip_t": []}
        feats_gen, feats_ref = [], []
        for r in (s for s in samples if s["method"] == meth):
            img = imageio.load_rgb(root / r["tryon"])
            gar = imageio.load_rgb(root / r["garment"])
            mask = imageio.load_mask(root / r["mask"])
            if emb is None:
                emb = toy_embedder(image_size=img.shape[-1], seed=cfg["eval.embedder_seed"])
            per["dino_m"].append(dino_m(img, mask, gar, emb))
            per["clip_i"].append(embedding_similarity(img, gar, emb))
            if r.get("prompt"):
                per["clip_t"].append(embedding_similarity(img, r["prompt"], emb, "image_text"))
            if r.get("target"):
                tgt = imageio.load_rgb(root / r["target"])
                per["ssim"].append(ssim(img, tgt))
                feats_gen.append(emb.embed_image(img))
                feats_ref.append(emb.embed_image(tgt))
        vals = {k: float(np.mean(v)) for k, v in per.items() if v}
        if len(feats_gen) >= 2:
            vals["fid"] = fid(np.array(feats_gen), np.array(feats_ref))
            vals["kid"] = kid(np.array(feats_gen), np.array(feats_ref))
        if vals:
            metrics[meth] = vals
    pref, scores = human_scores(responses, methods, cfg["eval.weighting"]) if responses else ({}, {})
    meta = {"weighting": cfg["eval.weighting"], "dino_m_mask": "elementwise"}
    if emb is not None:
        meta["embedder"] = emb.id
    return EvalReport(methods, metrics, pref, scores, meta)


def cmd_evaluate(cfg: Config, args, out: Path):
    from .evalkit import emit_report

    if not args.manifest:
        raise ConfigError("evaluate needs --manifest")
    report = _evaluate_manifest(Path(args.manifest), cfg)
    out.write_text(emit_report(report, cfg["eval.format"]))
    _info("wrote report", path=str(out))


def cmd_report(cfg: Config, args, out: Path):
    from dataclasses import fields

    from .evalkit import EvalReport, emit_report

    if not args.input:
        raise ConfigError("report needs --input (a JSON report)")
    data = json.loads(Path(args.input).read_text())
    known = {f.name for f in fields(EvalReport)}
    report = EvalReport(**{k: v for k, v in data.items() if k in known})
    out.write_text(emit_report(report, cfg["eval.format"]))
    _info("wrote report", path=str(out))


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "tryon": cmd_tryon, "synthesize": cmd_synthesize,
            "evaluate": cmd_evaluate, "report": cmd_report}
FILE_OUTPUT = {"evaluate": "report.md", "report": "report.md"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="garmentdiff", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--overrides", nargs="*", default=[], metavar="KEY=VALUE")
        sp.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
        sp.add_argument("--out", help="output directory (evaluate/report: output file)")
        if name in ("generate", "tryon"):
            sp.add_argument("--prompt", help="override the target prompt")
        if name == "evaluate":
            sp.add_argument("--manifest", help="results manifest (JSONL)")
        if name == "report":
            sp.add_argument("--input", help="report JSON as written by evaluate with format=json")
    return p


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, args.overrides)
        torch.manual_seed(args.seed)
        if args.command in FILE_OUTPUT:
            out = Path(args.out or FILE_OUTPUT[args.command])
            out.parent.mkdir(parents=True, exist_ok=True)
            _write_snapshot(out.parent, cfg, args, prefix=out.stem + ".")
        else:
            out = Path(args.out or f"out/{args.command}")
            _write_snapshot(out, cfg, args)
        COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
