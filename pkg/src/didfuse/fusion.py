"""Test-time fusion of two sources' feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import net
from ._filters import box_mean
from .errors import NumericError, ShapeError
from .net import DecomposeOutput, ModelParams
from .tensor import Mode, check_tensor4


@dataclass(frozen=True)
class Summation:
    pass


@dataclass(frozen=True)
class WeightedAverage:
    """Background maps use (gamma1, gamma2), detail and skip maps (gamma3, gamma4)."""

    gamma1: float = 0.5
    gamma2: float = 0.5
    gamma3: float = 0.5
    gamma4: float = 0.5

    def __post_init__(self):
        if abs(self.gamma1 + self.gamma2 - 1) > 1e-12 or abs(self.gamma3 + self.gamma4 - 1) > 1e-12:
            raise ValueError("weighted-average gammas must satisfy g1 + g2 = 1 and g3 + g4 = 1")


@dataclass(frozen=True)
class L1Norm:
    pass


FusionStrategy = Union[Summation, WeightedAverage, L1Norm]

STRATEGY_NAMES = {"sum": Summation, "avg": WeightedAverage, "l1": L1Norm}


def parse_strategy(name) -> FusionStrategy:
    try:
        return STRATEGY_NAMES[name]()
    except KeyError:
        raise ValueError(f"unknown fusion strategy {name!r}; expected one of {sorted(STRATEGY_NAMES)}") from None


def strategy_name(strategy: FusionStrategy) -> str:
    for name, cls in STRATEGY_NAMES.items():
        if isinstance(strategy, cls):
            return name
    raise TypeError(f"not a fusion strategy: {strategy!r}")


def l1_weights(m_i, m_v):
    """Per-position weights from box-blurred channel-wise L1 activity.

    Returns ``(eta_i, eta_v)`` shaped (n, 1, h, w). Where both activities are
    zero the weights fall back to 0.5 each.
    """
    a_i = box_mean(np.abs(m_i.astype(np.float64)).sum(axis=1, keepdims=True), 1)
    a_v = box_mean(np.abs(m_v.astype(np.float64)).sum(axis=1, keepdims=True), 1)
    denom = a_i + a_v
    zero = denom == 0
    eta_i = np.where(zero, 0.5, a_i / np.where(zero, 1.0, denom))
    return eta_i, 1.0 - eta_i


def fuse_maps(m_i, m_v, strategy: FusionStrategy, role="background"):
    """Merge one pair of feature maps. ``role`` picks the weighted-average gammas."""
    m_i = check_tensor4(m_i, "infrared maps")
    m_v = check_tensor4(m_v, "visible maps")
    if m_i.shape != m_v.shape:
        raise ShapeError("feature maps to fuse differ in shape", m_i.shape, m_v.shape)
    dtype = np.result_type(m_i, m_v)
    if isinstance(strategy, Summation):
        return m_i + m_v
    if isinstance(strategy, WeightedAverage):
        if role == "background":
            g_i, g_v = strategy.gamma1, strategy.gamma2
        else:
            g_i, g_v = strategy.gamma3, strategy.gamma4
        return (g_i * m_i.astype(np.float64) + g_v * m_v.astype(np.float64)).astype(dtype)
    if isinstance(strategy, L1Norm):
        eta_i, eta_v = l1_weights(m_i, m_v)
        return (eta_i * m_i + eta_v * m_v).astype(dtype)
    raise TypeError(f"not a fusion strategy: {strategy!r}")


def fuse_decompositions(dec_i: DecomposeOutput, dec_v: DecomposeOutput, strategy: FusionStrategy):
    return DecomposeOutput(
        background=fuse_maps(dec_i.background, dec_v.background, strategy, "background"),
        detail=fuse_maps(dec_i.detail, dec_v.detail, strategy, "detail"),
        skip1=fuse_maps(dec_i.skip1, dec_v.skip1, strategy, "detail"),
        skip2=fuse_maps(dec_i.skip2, dec_v.skip2, strategy, "detail"),
    )


def fuse_images(ir, vis, params: ModelParams, strategy: FusionStrategy = Summation()):
    """Decompose both (1, 1, h, w) images, fuse every map pair, decode."""
    ir = check_tensor4(ir, "ir")
    vis = check_tensor4(vis, "vis")
    if ir.shape != vis.shape:
        raise ShapeError("infrared and visible images differ in size", ir.shape, vis.shape)
    if ir.shape[0] != 1:
        raise ShapeError("fuse_images expects a batch of one", ir.shape)
    fused = fuse_decompositions(net.decompose(ir, params, Mode.EVAL), net.decompose(vis, params, Mode.EVAL),
                                strategy)
    out = net.reconstruct(fused.background, fused.detail, fused.skip1, fused.skip2, params, Mode.EVAL)
    if not np.all(np.isfinite(out)):
        raise NumericError("fused image contains non-finite values")
    return out
