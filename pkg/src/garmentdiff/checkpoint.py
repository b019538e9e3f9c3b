"""Single-file checkpoint archive.

A zip holding ``manifest.json`` (model name, UNet config, schedule, codec and
text settings, parameter shapes) and one raw little-endian float32 blob per
parameter at ``params/<canonical path>``.  Canonical paths carry the owning
network as prefix: ``denoiser.``, ``garment_encoder.``, ``controlnet.``.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .models import ModelBundle, build_bundle
from .unet import UNetConfig

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _tensors(bundle: ModelBundle) -> dict[str, torch.Tensor]:
    out = {}
    for prefix, mod in bundle.modules().items():
        for name, t in mod.state_dict().items():
            out[f"{prefix}.{name}"] = t
    return out


def save_checkpoint(bundle: ModelBundle, path, extra: dict | None = None) -> None:
    tensors = _tensors(bundle)
    manifest = {
        "format_version": FORMAT_VERSION,
        "model_name": bundle.name,
        "unet_config": bundle.denoiser.config.to_dict(),
        "schedule": {"T": bundle.schedule.T, "beta_start": bundle.schedule.beta_start,
                     "beta_end": bundle.schedule.beta_end},
        "codec": {"name": bundle.codec.name, "factor": bundle.codec.factor},
        "text": {"name": bundle.text.name, "seed": bundle.text.seed, "context_len": bundle.text.context_len},
        "pose_channels": bundle.pose_channels,
        "components": sorted(bundle.modules()),
        "parameters": {k: list(v.shape) for k, v in sorted(tensors.items())},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zi = zipfile.ZipInfo("manifest.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(zi, json.dumps(manifest, indent=2, sort_keys=True))
        for key in sorted(tensors):
            blob = tensors[key].detach().cpu().numpy().astype("<f4").tobytes()
            zf.writestr(zipfile.ZipInfo(f"params/{key}", date_time=(1980, 1, 1, 0, 0, 0)), blob)


def read_manifest(path) -> dict:
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def load_checkpoint(path, dtype=torch.float32) -> ModelBundle:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
        comps = set(manifest["components"])
        sched = manifest["schedule"]
        bundle = build_bundle(
            UNetConfig(**manifest["unet_config"]),
            T=sched["T"], beta_start=sched["beta_start"], beta_end=sched["beta_end"],
            codec_factor=manifest["codec"]["factor"],
            text_seed=manifest["text"]["seed"], context_len=manifest["text"]["context_len"],
            with_garment_encoder="garment_encoder" in comps,
            with_controlnet="controlnet" in comps,
            dtype=dtype, name=manifest["model_name"],
        )
        bundle.pose_channels = manifest.get("pose_channels", 2)
        for prefix, mod in bundle.modules().items():
            state = {}
            for name, ref in mod.state_dict().items():
                key = f"{prefix}.{name}"
                shape = manifest["parameters"].get(key)
                if shape is None or list(ref.shape) != shape:
                    raise CheckpointError(f"parameter {key} missing or mis-shaped in checkpoint")
                arr = np.frombuffer(zf.read(f"params/{key}"), dtype="<f4").reshape(shape)
                state[name] = torch.as_tensor(arr.copy(), dtype=ref.dtype)
            mod.load_state_dict(state)
    bundle.meta = manifest.get("extra", {})
    return bundle
