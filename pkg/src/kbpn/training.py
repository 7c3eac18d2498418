"""Synthetic data pipeline and the optimization loop."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import TrainConfig, dumps, from_dict
from .degradation import (
    GaussianSpec,
    KernelPCA,
    default_pca,
    degrade,
    gaussian_kernel,
    load_pca,
    reference_mean_kernel,
    sample_gaussian_spec,
    save_pca,
)
from .imaging import PatchSpec, load_image, random_patch_pair
from .losses import kernel_loss, total_loss
from .metrics import eval_convention, psnr, ssim
from .networks import ForwardResult, build_model

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "learning_rate", "L_SR", "L_KC", "L_K", "L_LR", "total"]
EVAL_COLUMNS = ["step", "psnr", "ssim", "kernel_l1", "mean_kernel_l1"]


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Sample:
    hr: np.ndarray
    lr: np.ndarray
    kernel: np.ndarray
    spec: GaussianSpec
    code: np.ndarray | None = None


def list_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")


def load_pool(directory) -> list[np.ndarray]:
    files = list_pngs(directory)
    if not files:
        raise FileNotFoundError(f"no PNG files in {directory}")
    return [load_image(p) for p in files]


def _digest(img: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(img).tobytes()).hexdigest()


def assert_disjoint(train_pool, val_pool) -> None:
    """Refuse to train when a validation image also appears in the training pool."""
    shared = {_digest(x) for x in train_pool} & {_digest(x) for x in val_pool}
    if shared:
        raise ValueError(f"{len(shared)} validation image(s) also present in the training pool")


def make_sample(hr: np.ndarray, spec: GaussianSpec, cfg: TrainConfig, pca: KernelPCA | None = None) -> Sample:
    m = cfg.model
    kernel = gaussian_kernel(spec, m.kernel_size)
    lr = degrade(hr, kernel, m.scale, m.down_mode)
    code = pca.encode(kernel) if pca is not None else None
    return Sample(hr, lr, kernel, spec, code)


def synth_batch(cfg: TrainConfig, step: int, hr_pool, pca: KernelPCA | None = None) -> list[Sample]:
    """Training batch for ``step``: a pure function of ``(seed, step)`` and the pool."""
    if not hr_pool:
        raise ValueError("empty HR pool")
    d = cfg.data
    rng = np.random.default_rng([cfg.train.seed, step])
    patch = PatchSpec(d.lr_patch_size, cfg.model.scale, d.hflip, d.vflip)
    batch = []
    for _ in range(cfg.train.batch_size):
        idx = int(rng.integers(len(hr_pool)))
        hr, _ = random_patch_pair(hr_pool[idx], patch, int(rng.integers(2 ** 63)))
        spec = sample_gaussian_spec(rng, d.blur_family, d.sigma_range)
        batch.append(make_sample(hr, spec, cfg, pca))
    return batch


def collate(samples: list[Sample], dtype=torch.float32) -> dict:
    out = {
        "hr": torch.from_numpy(np.stack([s.hr for s in samples])).to(dtype),
        "lr": torch.from_numpy(np.stack([s.lr for s in samples])).to(dtype),
        "kernel": torch.from_numpy(np.stack([s.kernel for s in samples])).to(dtype),
    }
    if all(s.code is not None for s in samples):
        out["code"] = torch.from_numpy(np.stack([s.code for s in samples])).to(dtype)
    return out


def learning_rate(step: int, cfg: TrainConfig) -> float:
    t = cfg.train
    return t.lr_initial if step < t.resolved_drop_step() else t.lr_drop_to


def resolve_seed(cfg: TrainConfig) -> TrainConfig:
    if cfg.train.seed is not None:
        return cfg
    from .config import apply_overrides

    seed = int(np.random.SeedSequence().entropy % (2 ** 31))
    log.info("no seed given, using %d", seed)
    return apply_overrides(cfg, {"train.seed": seed})


def prepare_pca(cfg: TrainConfig, run_dir: Path | None = None) -> KernelPCA | None:
    """Kernel basis for kcbpn, cached as ``<run_dir>/pca.bin``."""
    if cfg.model.variant != "kcbpn":
        return None
    path = run_dir / "pca.bin" if run_dir is not None else None
    if path is not None and path.is_file():
        return load_pca(path)
    d = cfg.data
    pca = default_pca(cfg.model.kernel_size, cfg.model.code_dim, d.blur_family, d.sigma_range,
                      d.pca_samples, d.pca_seed)
    if path is not None:
        save_pca(path, pca)
    return pca


def _dump_divergence(run_dir: Path, step: int, batch: dict, result: ForwardResult | None) -> Path:
    out = run_dir / f"nan-dump-step-{step:06d}"
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "batch.npz", **{k: v.numpy() for k, v in batch.items()})
    if result is not None:
        traces = {}
        for tr in result.traces:
            traces[f"F_sr_{tr.t}"] = tr.sr_features.detach().numpy()
            for name in ("sr", "kernel", "residual"):
                value = getattr(tr, name)
                if value is not None:
                    traces[f"{name}_{tr.t}"] = value.detach().numpy()
        np.savez(out / "traces.npz", sr=result.sr.detach().numpy(), **traces)
    return out


def _write_rows(path: Path, columns, rows, append: bool) -> None:
    new = not (append and path.is_file())
    with open(path, "w" if new else "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        if new:
            writer.writeheader()
        writer.writerows(rows)


@dataclass
class TrainResult:
    model: torch.nn.Module
    config: TrainConfig
    loss_log: list[dict]
    eval_log: list[dict]
    checkpoint: Path | None
    pca: KernelPCA | None


def train(cfg: TrainConfig, train_pool=None, val_set: list[Sample] | None = None, resume=None,
          write_files: bool = True) -> TrainResult:
    """Optimize a network per ``cfg`` with Adam and a one-drop step schedule.

    ``train_pool`` defaults to the PNGs in ``data.dataset_dir``. A final
    checkpoint (params, config snapshot, rng state, optimizer state) is
    written to ``<run_dir>/checkpoints`` when ``write_files`` is set, along
    with ``losses.csv`` and ``eval.csv``. ``resume`` points at a checkpoint
    to continue from.
    """
    run_dir = Path(cfg.run_dir)
    start = 0
    if resume is not None:
        resume = ckpt.resolve_checkpoint(resume)
        saved, rng_state = ckpt.read_checkpoint_meta(resume)
        cfg = from_dict({**saved, "train": {**saved["train"], "total_steps": cfg.train.total_steps}})
        start = int(rng_state["step"])
    cfg = resolve_seed(cfg.validate())
    if cfg.train.deterministic:
        torch.use_deterministic_algorithms(True)
    log.info("resolved config:\n%s", dumps(cfg))

    if train_pool is None:
        if not cfg.data.dataset_dir:
            raise ValueError("data.dataset_dir is not set and no training pool was given")
        train_pool = load_pool(cfg.data.dataset_dir)
    if val_set is None and cfg.data.val_dir:
        val_set = make_val_set(load_pool(cfg.data.val_dir), cfg)
    if val_set:
        assert_disjoint(train_pool, [s.hr for s in val_set])

    if write_files:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.ini").write_text(dumps(cfg))
    pca = prepare_pca(cfg, run_dir if write_files else None)

    torch.manual_seed(cfg.train.seed)
    model = build_model(cfg.model, pca)
    opt = torch.optim.Adam(model.parameters(), lr=learning_rate(start, cfg))
    if resume is not None:
        ckpt.load_params(model, resume / "params.npz")
        opt.load_state_dict(torch.load(resume / "optimizer.pt", weights_only=True))
        torch.set_rng_state(torch.tensor(rng_state["torch_rng"], dtype=torch.uint8))

    mean_k = reference_mean_kernel(cfg.model.kernel_size, cfg.data.blur_family)
    loss_log, eval_log = [], []
    last_ckpt = None
    t = cfg.train
    for step in range(start, t.total_steps):
        for group in opt.param_groups:
            group["lr"] = learning_rate(step, cfg)
        batch = collate(synth_batch(cfg, step, train_pool, pca))
        model.train()
        result = None
        try:
            result = model(batch["lr"])
            loss, parts = total_loss(result, batch, cfg.loss, cfg.model.variant, cfg.model.scale,
                                     cfg.model.down_mode)
        except FloatingPointError:
            loss, parts = torch.tensor(math.nan), None
        if not torch.isfinite(loss):
            dump = _dump_divergence(run_dir, step, batch, result) if write_files else None
            raise TrainingDiverged(f"non-finite loss at step {step}; batch and traces dumped to {dump}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        row = {"step": step + 1, "learning_rate": opt.param_groups[0]["lr"], **parts.raw, "total": parts.total}
        loss_log.append(row)
        if t.log_every and (step + 1) % t.log_every == 0:
            log.debug("step %d total %.6g", step + 1, parts.total)
        if val_set and t.eval_every and (step + 1) % t.eval_every == 0:
            eval_log.append({"step": step + 1, **eval_hook(model, val_set, cfg, mean_k)})
        if write_files and t.checkpoint_every and (step + 1) % t.checkpoint_every == 0:
            last_ckpt = _save(run_dir, step + 1, model, cfg, opt)

    if write_files:
        if last_ckpt is None or ckpt.step_dir(cfg.checkpoint_dir, t.total_steps) != last_ckpt:
            last_ckpt = _save(run_dir, max(t.total_steps, start), model, cfg, opt)
        _write_rows(run_dir / "losses.csv", LOSS_COLUMNS, loss_log, append=resume is not None)
        if eval_log:
            _write_rows(run_dir / "eval.csv", EVAL_COLUMNS, eval_log, append=resume is not None)
    return TrainResult(model, cfg, loss_log, eval_log, last_ckpt, pca)


def _save(run_dir: Path, step: int, model, cfg: TrainConfig, opt) -> Path:
    return ckpt.save_checkpoint(Path(cfg.checkpoint_dir), step, model, cfg.to_dict(), opt,
                                {"seed": cfg.train.seed})


def load_model(path):
    """Rebuild a trained network and its config from a checkpoint directory."""
    path = ckpt.resolve_checkpoint(path)
    saved, _ = ckpt.read_checkpoint_meta(path)
    cfg = from_dict(saved)
    with torch.device("meta"):
        model = build_model(cfg.model)
    model = model.to_empty(device="cpu")
    ckpt.load_params(model, path / "params.npz")
    model.eval()
    return model, cfg


# ---------------------------------------------------------------- evaluation

def crop_to_scale(img: np.ndarray, s: int) -> np.ndarray:
    _, h, w = img.shape
    return img[:, : h - h % s, : w - w % s]


def make_val_set(pool, cfg: TrainConfig, seed: int = 12345, specs=None) -> list[Sample]:
    """Whole images degraded with blurs drawn from the training family (or ``specs``)."""
    rng = np.random.default_rng(seed)
    pca = prepare_pca(cfg) if cfg.model.variant == "kcbpn" else None
    out = []
    for i, img in enumerate(pool):
        hr = crop_to_scale(img, cfg.model.scale)
        spec = specs[i % len(specs)] if specs else sample_gaussian_spec(rng, cfg.data.blur_family, cfg.data.sigma_range)
        out.append(make_sample(hr, spec, cfg, pca))
    return out


def estimated_kernel(model, result: ForwardResult) -> np.ndarray | None:
    """Final kernel estimate as ``(N, k, k)`` float64, decoding kernel codes when needed."""
    if result.kernel is None:
        return None
    k = result.kernel.detach().double().numpy()
    if getattr(model, "variant", "") == "kcbpn":
        pca = model.pca()
        return np.stack([pca.decode(c) for c in k])
    return k


@torch.no_grad()
def eval_hook(model, val_set: list[Sample], cfg: TrainConfig, mean_kernel: np.ndarray | None = None) -> dict:
    """Mean PSNR/SSIM of SR vs HR and mean kernel L1 against a mean-kernel baseline."""
    was_training = model.training
    model.eval()
    conv = eval_convention(cfg.model.scale)
    if mean_kernel is None:
        mean_kernel = reference_mean_kernel(cfg.model.kernel_size, cfg.data.blur_family)
    scores = {"psnr": [], "ssim": [], "kernel_l1": [], "mean_kernel_l1": []}
    for s in val_set:
        result = model(torch.from_numpy(s.lr[None]).float())
        sr = result.sr[0].double().clamp(0, 1).numpy()
        scores["psnr"].append(psnr(sr, s.hr, **conv))
        scores["ssim"].append(ssim(sr, s.hr, **conv))
        est = estimated_kernel(model, result)
        gt = torch.from_numpy(s.kernel)
        if est is not None:
            scores["kernel_l1"].append(float(kernel_loss(torch.from_numpy(est[0]), gt)))
        scores["mean_kernel_l1"].append(float(kernel_loss(torch.from_numpy(mean_kernel), gt)))
    model.train(was_training)
    return {name: float(np.mean(v)) if v else math.nan for name, v in scores.items()}
