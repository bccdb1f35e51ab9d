"""
Analytical per-sample compute cost

cost = f_text + f_vglob + gamma_bar * K * (f_vreg_per_k + f_fuse_per_k) + f_head

Units are arbitrary but shared (e.g. GFLOPs). The defaults put the
always-on cost at K=2 at 60.
"""
from dataclasses import dataclass, asdict
from typing import Sequence

import pandas as pd

from errors import ContractError


@dataclass(frozen=True)
class CostConfig:
    f_text: float = 13.0
    f_vglob: float = 5.0
    f_vreg_per_k: float = 15.0
    f_fuse_per_k: float = 5.0
    f_head: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ContractError(f"Cost term {name} must be non-negative, got {value}")

    @property
    def per_k(self) -> float:
        return self.f_vreg_per_k + self.f_fuse_per_k

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_cost(cfg: CostConfig, gamma_bar: float, K: int) -> float:
    if not 0.0 <= gamma_bar <= 1.0:
        raise ContractError(f"gamma_bar must lie in [0, 1], got {gamma_bar}")
    if K < 0:
        raise ContractError(f"K must be >= 0, got {K}")
    return cfg.f_text + cfg.f_vglob + gamma_bar * K * cfg.per_k + cfg.f_head


def always_on_cost(cfg: CostConfig, K: int) -> float:
    return estimate_cost(cfg, 1.0, K)


class CostMeter:
    """
    Counts module invocations for one sample

    The text encoder, the global image encoder and the scoring head run at
    most once per sample. Region extraction and fusion are charged per image
    actually fused by an activated unit, averaged over the sample's units,
    so a unit that fuses fewer than K images costs less than the estimate.
    """

    def __init__(self):
        self.text_calls = 0
        self.vglob_calls = 0
        self.head_calls = 0
        self.units = 0
        self.activated = 0
        self.fused_images = 0

    def record_unit(self, gamma: int, n_images: int = 0):
        self.units += 1
        if gamma:
            self.activated += 1
            self.fused_images += int(n_images)

    @property
    def gamma_bar(self) -> float:
        return self.activated / self.units if self.units else 0.0

    @property
    def images_per_unit(self) -> float:
        return self.fused_images / self.units if self.units else 0.0

    def cost(self, cfg: CostConfig) -> float:
        return (cfg.f_text * self.text_calls + cfg.f_vglob * self.vglob_calls
                + self.images_per_unit * cfg.per_k + cfg.f_head * self.head_calls)


def cost_sweep(cfg: CostConfig, gamma_bars: Sequence[float], ks: Sequence[int]) -> pd.DataFrame:
    """Cost table over a grid of gamma_bar and K"""
    rows = []
    for K in ks:
        full = always_on_cost(cfg, K)
        for g in gamma_bars:
            cost = estimate_cost(cfg, g, K)
            rows.append({
                'gamma_bar': float(g),
                'K': int(K),
                'cost': cost,
                'always_on_cost': full,
                'saving': full - cost,
            })
    return pd.DataFrame(rows, columns=['gamma_bar', 'K', 'cost', 'always_on_cost', 'saving'])
