"""Command-line entry point: ``kbpn <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
DATA_ROOT_ENV = "KBPN_DATA_ROOT"

log = logging.getLogger("kbpn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def data_path(value: str | None) -> Path | None:
    """Resolve relative dataset paths against ``$KBPN_DATA_ROOT`` when it is set."""
    if value is None:
        return None
    path = Path(value)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _log_resolved(command: str, values: dict) -> None:
    log.info("%s resolved: %s", command, json.dumps(values, default=str, sort_keys=True))


# ---------------------------------------------------------------- commands

def cmd_synth_kernel(args) -> int:
    from .degradation import GaussianSpec, gaussian_kernel, save_kernel

    spec = GaussianSpec(args.sigma_x, args.sigma_y if args.sigma_y is not None else args.sigma_x, args.theta)
    kernel = gaussian_kernel(spec, args.k)
    save_kernel(args.out, kernel, spec, args.down_mode)
    print(f"wrote {args.out} (k={args.k}, sum={kernel.sum():.12f})")
    return EXIT_OK


def cmd_degrade(args) -> int:
    from .degradation import degrade, load_kernel
    from .imaging import load_image, save_image

    hr = load_image(args.hr)
    kernel, _ = load_kernel(args.kernel)
    lr = degrade(hr, kernel, args.scale, args.mode)
    save_image(lr, args.out, bit_depth=args.bit_depth)
    if args.save_raw:
        np.save(args.save_raw, lr)
    print(f"wrote {args.out} {lr.shape[2]}x{lr.shape[1]}")
    return EXIT_OK


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def resolve_train_config(args):
    from . import config as C

    cfg = C.load(args.config) if args.config else C.TrainConfig()
    overrides = _parse_sets(args.set)
    for flag, key in (("variant", "model.variant"), ("stages", "model.stages"), ("steps", "train.total_steps"),
                      ("seed", "train.seed"), ("batch_size", "train.batch_size"), ("run_dir", "run_dir")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value if isinstance(value, str) else str(value)
    if args.data is not None:
        overrides["data.dataset_dir"] = str(data_path(args.data))
    if args.val is not None:
        overrides["data.val_dir"] = str(data_path(args.val))
    try:
        return C.apply_overrides(cfg, overrides)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from .config import dumps
    from .training import resolve_seed, train

    cfg = resolve_seed(resolve_train_config(args))
    print(dumps(cfg), file=sys.stderr)
    result = train(cfg, resume=args.resume)
    last = result.loss_log[-1] if result.loss_log else {}
    print(f"checkpoint {result.checkpoint}; final total loss {last.get('total', float('nan')):.6g}")
    return EXIT_OK


def _load(args):
    from .training import load_model

    model, cfg = load_model(args.ckpt)
    _log_resolved("checkpoint", {"ckpt": args.ckpt, "model": cfg.model.to_dict()})
    return model, cfg


def cmd_eval(args) -> int:
    from .benchmark import BenchSpec, format_table, isotropic_blurs, run_benchmark
    from .degradation import GaussianSpec

    model, cfg = _load(args)
    blurs = []
    if args.sigmas:
        blurs += isotropic_blurs(args.sigmas)
    for pair in args.aniso or []:
        sx, _, sy = pair.partition("/")
        blurs.append(GaussianSpec(float(sx), float(sy), args.theta))
    if not blurs:
        blurs = isotropic_blurs()
    spec = BenchSpec(blurs=blurs, dataset_dir=str(data_path(args.data)), scale=cfg.model.scale,
                     down_mode=cfg.model.down_mode, crop_border=args.crop, luma_only=not args.rgb,
                     kernel_size=cfg.model.kernel_size)
    _log_resolved("eval", {"bench": {k: v for k, v in vars(spec).items() if k != "images"}})

    rows = run_benchmark(model, spec, args.out)
    print(format_table(rows), end="")
    return EXIT_OK


def _infer(model, cfg, lr_path):
    import torch

    from .imaging import load_image
    from .training import estimated_kernel

    lr = load_image(lr_path)
    with torch.no_grad():
        result = model(torch.from_numpy(lr[None]).float())
    return lr, result, estimated_kernel(model, result)


def cmd_infer(args) -> int:
    from .degradation import save_kernel
    from .figures import visualize_traces
    from .imaging import save_image

    model, cfg = _load(args)
    _, result, kernel = _infer(model, cfg, args.lr)
    save_image(result.sr[0].double().clamp(0, 1).numpy(), args.out)
    written = [str(args.out)]
    if kernel is not None:
        kpath = Path(args.kernel_out) if args.kernel_out else Path(args.out).with_name(Path(args.out).stem + "_kernel.bin")
        save_kernel(kpath, kernel[0] / kernel[0].sum(), down_mode=cfg.model.down_mode)
        written.append(str(kpath))
    if args.dump_traces:
        if cfg.model.variant != "kbpn":
            raise UsageError("--dump-traces needs a kbpn checkpoint")
        visualize_traces(result, args.dump_traces)
        written.append(str(args.dump_traces))
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_viz_kernel(args) -> int:
    from .degradation import load_kernel
    from .figures import visualize_kernel

    est, _ = load_kernel(args.kernel)
    gt, _ = load_kernel(args.gt) if args.gt else (est, None)
    meta = visualize_kernel(est, gt, args.out)
    print(f"wrote {args.out} (L1 {meta['l1']:.3e})")
    return EXIT_OK


def cmd_viz_traces(args) -> int:
    from .figures import visualize_traces

    model, cfg = _load(args)
    if cfg.model.variant != "kbpn":
        raise UsageError("viz-traces needs a kbpn checkpoint")
    _, result, _ = _infer(model, cfg, args.lr)
    summary = visualize_traces(result, args.out)
    print(f"wrote {len(summary['files'])} renders to {args.out}")
    return EXIT_OK


def cmd_plot_params(args) -> int:
    from .figures import plot_params_vs_stages
    from .networks import NetworkConfig

    base = NetworkConfig(variant=args.variant, base_channels=args.base_channels, scale=args.scale,
                         kernel_size=args.k)
    psnr = {}
    for item in args.psnr or []:
        t, _, value = item.partition("=")
        psnr[int(t)] = float(value)
    csv_path, plot_path = plot_params_vs_stages(base, args.stages, args.out, psnr or None)
    print(f"wrote {csv_path} and {plot_path}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    from .gradcheck import selfcheck

    results = selfcheck(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kbpn", description="Blind super-resolution with kernelized back-projection networks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-kernel", help="write a Gaussian blur kernel")
    s.add_argument("--sigma-x", type=float, required=True)
    s.add_argument("--sigma-y", type=float)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--k", type=int, default=21)
    s.add_argument("--down-mode", choices=("decimate", "area", "bicubic"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_kernel)

    s = sub.add_parser("degrade", help="blur and downsample an HR PNG")
    s.add_argument("--hr", required=True)
    s.add_argument("--kernel", required=True)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--mode", choices=("decimate", "area", "bicubic"), default="area")
    s.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    s.add_argument("--save-raw", help="also store the unquantized result as .npy")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train a network")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. train.seed=3")
    s.add_argument("--variant", choices=("dbpn_bl", "kcbpn", "kbpn"))
    s.add_argument("--stages", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--data")
    s.add_argument("--val")
    s.add_argument("--run-dir")
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="benchmark a checkpoint on fixed blurs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--sigmas", type=float, nargs="*")
    s.add_argument("--aniso", nargs="*", metavar="SX/SY")
    s.add_argument("--theta", type=float, default=0.7853981633974483)
    s.add_argument("--crop", type=int)
    s.add_argument("--rgb", action="store_true", help="score RGB instead of luma")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="super-resolve one LR PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--lr", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kernel-out")
    s.add_argument("--dump-traces")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("viz-kernel", help="render an estimated kernel next to its ground truth")
    s.add_argument("--kernel", required=True)
    s.add_argument("--gt")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viz_kernel)

    s = sub.add_parser("viz-traces", help="render per-stage features and LR residuals")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--lr", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_viz_traces)

    s = sub.add_parser("plot-params", help="parameter count against stage count")
    s.add_argument("--variant", choices=("dbpn_bl", "kcbpn", "kbpn"), default="kbpn")
    s.add_argument("--stages", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6, 7])
    s.add_argument("--base-channels", type=int, default=64)
    s.add_argument("--scale", type=int, default=4)
    s.add_argument("--k", type=int, default=21)
    s.add_argument("--psnr", nargs="*", metavar="T=DB")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot_params)

    s = sub.add_parser("selfcheck", help="run degradation and gradient oracles")
    s.add_argument("--quick", action="store_true")
    s.set_defaults(func=cmd_selfcheck)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    _log_resolved(args.command, {k: v for k, v in vars(args).items() if k != "func"})
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 2
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
