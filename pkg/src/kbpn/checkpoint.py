"""Checkpoint archives.

Layout of one checkpoint directory::

    step-000123/
        params.npz       # one array per state-dict entry, keyed by dotted
                         # module path, plus "__manifest__" (JSON text)
        config.json      # resolved run configuration
        rng-state.json   # seed, step and torch generator state
        optimizer.pt     # optimizer state (training checkpoints only)

The manifest lists ``{name, dtype, shape, trainable}`` for every entry, so
parameter counts can be recomputed without building the model.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import torch

MANIFEST_KEY = "__manifest__"
STEP_DIR = re.compile(r"^step-(\d+)$")


def step_dir(root, step: int) -> Path:
    return Path(root) / f"step-{step:06d}"


def save_params(model: torch.nn.Module, path) -> list[dict]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trainable = {name for name, p in model.named_parameters() if p.requires_grad}
    arrays, manifest = {}, []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        arrays[name] = arr
        manifest.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
                         "trainable": name in trainable})
    arrays[MANIFEST_KEY] = np.array(json.dumps(manifest))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return manifest


def read_manifest(path) -> list[dict]:
    with np.load(Path(path)) as data:
        return json.loads(str(data[MANIFEST_KEY]))


def manifest_parameter_count(path) -> int:
    return sum(int(np.prod(e["shape"], dtype=np.int64)) for e in read_manifest(path) if e["trainable"])


def load_params(model: torch.nn.Module, path) -> None:
    with np.load(Path(path)) as data:
        manifest = json.loads(str(data[MANIFEST_KEY]))
        state = {e["name"]: torch.from_numpy(data[e["name"]].copy()) for e in manifest}
    model.load_state_dict(state, strict=True)


def save_checkpoint(root, step: int, model, config: dict, optimizer=None, rng_state: dict | None = None) -> Path:
    out = step_dir(root, step)
    out.mkdir(parents=True, exist_ok=True)
    save_params(model, out / "params.npz")
    (out / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    state = {"step": step, **(rng_state or {})}
    state["torch_rng"] = torch.get_rng_state().numpy().tolist()
    (out / "rng-state.json").write_text(json.dumps(state))
    if optimizer is not None:
        torch.save(optimizer.state_dict(), out / "optimizer.pt")
    return out


def list_checkpoints(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        return []
    found = [(int(m.group(1)), p) for p in root.iterdir() if (m := STEP_DIR.match(p.name)) and p.is_dir()]
    return [p for _, p in sorted(found)]


def latest_checkpoint(root) -> Path | None:
    ckpts = list_checkpoints(root)
    return ckpts[-1] if ckpts else None


def resolve_checkpoint(path) -> Path:
    """Accept either a ``step-N`` directory or a run directory holding several."""
    path = Path(path)
    if (path / "params.npz").is_file():
        return path
    latest = latest_checkpoint(path)
    if latest is None:
        latest = latest_checkpoint(path / "checkpoints")
    if latest is None:
        raise FileNotFoundError(f"no checkpoint found under {path}")
    return latest


def read_checkpoint_meta(path) -> tuple[dict, dict]:
    path = resolve_checkpoint(path)
    config = json.loads((path / "config.json").read_text())
    rng = json.loads((path / "rng-state.json").read_text())
    return config, rng
