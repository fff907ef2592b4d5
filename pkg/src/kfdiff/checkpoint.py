"""Checkpoint persistence: a JSON manifest listing named float32 tensors
(little-endian) plus one contiguous binary blob, with schedule parameters
and corpus stats embedded so sampling is self-contained."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .denoiser import DenoiserModel, ModelConfig
from .diffusion import DiffusionSchedule, cosine_schedule
from .motion_data import ConfigError, CorpusStats

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
CHECKPOINT_VERSION = 1


@dataclass
class CheckpointBundle:
    model: DenoiserModel
    schedule: DiffusionSchedule
    stats: CorpusStats
    vocab: list[str]
    manifest: dict


def save_checkpoint(path: str, model: DenoiserModel,
                    schedule: DiffusionSchedule, stats: CorpusStats,
                    vocab: list[str], extra: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    state = model.state_dict()
    entries = []
    offset = 0
    blobs = []
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        entries.append({"name": f"denoiser/{name}",
                        "shape": list(arr.shape),
                        "offset": offset,
                        "dtype": "float32-little-endian"})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    cfg = model.cfg
    manifest = {
        "version": CHECKPOINT_VERSION,
        "entries": entries,
        "model_config": {
            "feature_dim": cfg.feature_dim, "vocab_size": cfg.vocab_size,
            "d": cfg.d, "heads": cfg.heads,
            "decoder_layers": cfg.decoder_layers, "ff_width": cfg.ff_width,
            "dma_blocks": cfg.dma_blocks, "dilation": list(cfg.dilation),
            "n_max": cfg.n_max,
        },
        "schedule": {"type": "cosine", "T": schedule.T,
                     "variance_mode": schedule.variance_mode},
        "stats": {"mean": stats.mean.tolist(), "std": stats.std.tolist()},
        "vocab": list(vocab),
    }
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(path, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(os.path.join(path, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(blobs))


def load_checkpoint(path: str) -> CheckpointBundle:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise ConfigError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version "
                          f"{manifest.get('version')!r}")
    mc = manifest["model_config"]
    cfg = ModelConfig(feature_dim=mc["feature_dim"],
                      vocab_size=mc["vocab_size"], d=mc["d"],
                      heads=mc["heads"], decoder_layers=mc["decoder_layers"],
                      ff_width=mc["ff_width"], dma_blocks=mc["dma_blocks"],
                      dilation=tuple(mc["dilation"]), n_max=mc["n_max"])
    model = DenoiserModel(cfg)
    blob = open(os.path.join(path, BLOB_NAME), "rb").read()
    state = {}
    for entry in manifest["entries"]:
        if entry["dtype"] != "float32-little-endian":
            raise ConfigError(f"unsupported dtype {entry['dtype']!r}")
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=entry["offset"]).reshape(shape)
        name = entry["name"].removeprefix("denoiser/")
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    model.eval()
    sch = manifest["schedule"]
    schedule = cosine_schedule(sch["T"], variance_mode=sch["variance_mode"])
    stats = CorpusStats(mean=np.asarray(manifest["stats"]["mean"]),
                        std=np.asarray(manifest["stats"]["std"]))
    return CheckpointBundle(model=model, schedule=schedule, stats=stats,
                            vocab=manifest["vocab"], manifest=manifest)
