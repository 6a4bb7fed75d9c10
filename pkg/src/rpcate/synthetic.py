"""Synthetic mechanistic-plus-bias datasets.

The mechanistic surrogate is

    g(x) = 1 + 0.5·x0 + 0.3·mean(x1², …, x_{n-1}²) + 0.2·exp(−x_{n-1})

(the quadratic mean term is dropped when n = 1). It stays in roughly
[1.07, 1.9] on the unit cube, so relative errors are well defined.

The planted bias depends on feature 0 only:

    monotone  b = c_mono · x0²
    periodic  b = c_per · sin(4π·x0)
    mixed     both terms

Amplitudes are set so that E|term| = max(10·noise_std, 0.1); with
noise_std = 0.01 the mechanistic-only relative error is about 6 %.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

BIAS_KINDS = ("monotone", "periodic", "mixed")


@dataclass(frozen=True)
class GenConfig:
    m: int = 360
    n: int = 3
    seed: int = 0
    bias_kind: str = "monotone"
    noise_std: float = 0.01

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be ≥ 2, got {self.m}")
        if self.n < 1:
            raise ValueError(f"n must be ≥ 1, got {self.n}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be ≥ 0, got {self.noise_std}")
        if self.bias_kind not in BIAS_KINDS:
            raise ValueError(f"bias_kind must be one of {BIAS_KINDS}, got {self.bias_kind!r}")


def mechanistic_surrogate(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = 1.0 + 0.5 * X[:, 0] + 0.2 * np.exp(-X[:, -1])
    if X.shape[1] > 1:
        out = out + 0.3 * np.mean(X[:, 1:] ** 2, axis=1)
    return out


def bias_amplitude(noise_std: float) -> float:
    """Target mean absolute value of each bias term."""
    return max(10.0 * noise_std, 0.1)


def planted_bias(X: np.ndarray, bias_kind: str, noise_std: float) -> np.ndarray:
    x0 = np.asarray(X, dtype=np.float64)[:, 0]
    target = bias_amplitude(noise_std)
    b = np.zeros_like(x0)
    if bias_kind in ("monotone", "mixed"):
        b += 3.0 * target * x0**2  # E[x0²] = 1/3
    if bias_kind in ("periodic", "mixed"):
        b += 0.5 * np.pi * target * np.sin(4.0 * np.pi * x0)  # E|sin(4πx0)| = 2/π
    return b


def generate(cfg: GenConfig) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    X = rng.uniform(0.0, 1.0, size=(cfg.m, cfg.n))
    eps = rng.normal(0.0, 1.0, size=cfg.m) * cfg.noise_std
    y_me = mechanistic_surrogate(X)
    y_true = y_me + planted_bias(X, cfg.bias_kind, cfg.noise_std) + eps
    return Dataset(X=X, y_true=y_true, y_me=y_me, feature_names=[f"x{j}" for j in range(cfg.n)])
