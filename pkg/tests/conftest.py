import numpy as np
import pytest
import torch

from kbpn.config import TrainConfig, apply_overrides


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def tiny_config(variant="kbpn", stages=2, run_dir="runs/test", **extra):
    """Small but structurally complete training config for fast tests."""
    overrides = {
        "model.variant": variant, "model.stages": stages, "model.base_channels": 8,
        "model.kernel_size": 7, "model.code_dim": 4,
        "train.batch_size": 2, "train.total_steps": 4, "train.seed": 7,
        "data.lr_patch_size": 16, "data.pca_samples": 200,
        "run_dir": str(run_dir),
    }
    overrides.update(extra)
    return apply_overrides(TrainConfig(), overrides)


def hr_pool(n=3, size=64, seed=0):
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        base = gen.random((3, size // 8, size // 8))
        out.append(np.kron(base, np.ones((1, 8, 8))) * 0.8 + 0.2 * gen.random((3, size, size)))
    return out


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
