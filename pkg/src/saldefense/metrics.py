"""Saliency evaluation metrics: EMD, CC, NSS, KLD and SIM.

Conventions follow the MIT saliency benchmark: KLD runs from the ground truth
to the prediction with an epsilon guard, NSS uses the sample (N-1) standard
deviation, and SIM/KLD/EMD compare sum-normalized maps.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

EPS = np.finfo(np.float64).eps  # 2.220446049250313e-16

COLUMNS = ("EMD", "CC", "NSS", "KLD", "SIM")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    return a, b


def prob_map(sal) -> np.ndarray:
    """Divide a nonnegative map by its sum."""
    sal = np.asarray(sal, dtype=np.float64)
    if np.any(sal < 0):
        raise ValueError("saliency values must be nonnegative")
    total = sal.sum()
    if not total > 0:
        raise ValueError("cannot normalize an all-zero map")
    return sal / total


def cc(pred, gt) -> float:
    """Pearson correlation between two maps."""
    pred, gt = _pair(pred, gt)
    p = pred - pred.mean()
    g = gt - gt.mean()
    sp = math.sqrt(float((p * p).sum()))
    sg = math.sqrt(float((g * g).sum()))
    if sp == 0 or sg == 0:
        raise ValueError("CC is undefined for a constant map")
    return float((p * g).sum()) / (sp * sg)


def sim(pred, gt) -> float:
    """Histogram intersection of two probability maps."""
    pred, gt = _pair(pred, gt)
    return float(np.minimum(pred, gt).sum())


def kld(pred, gt) -> float:
    """KL divergence of ``pred`` from ``gt`` (both probability maps)."""
    pred, gt = _pair(pred, gt)
    return float((gt * np.log(gt / (pred + EPS) + EPS)).sum())


def nss(pred, fixations) -> float:
    """Mean standardized prediction at fixated pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    fix = np.asarray(fixations, dtype=bool)
    if pred.shape != fix.shape:
        raise ValueError(f"map shapes differ: {pred.shape} vs {fix.shape}")
    if not fix.any():
        raise ValueError("NSS needs at least one fixation")
    std = pred.std(ddof=1) if pred.size > 1 else 0.0
    if std == 0:
        raise ValueError("NSS is undefined for a constant prediction")
    return float(((pred - pred.mean()) / std)[fix].mean())


def block_downsample(prob: np.ndarray, target: int) -> np.ndarray:
    """Sum probability mass over square blocks so the longer side is <= ``target``.

    Edge blocks may be partial; summing (rather than averaging) keeps their
    mass proportional to the pixels they cover.
    """
    if target < 1:
        raise ValueError("downsample target must be positive")
    h, w = prob.shape
    f = max(1, math.ceil(max(h, w) / target))
    if f == 1:
        return prob
    rows, cols = math.ceil(h / f), math.ceil(w / f)
    padded = np.zeros((rows * f, cols * f))
    padded[:h, :w] = prob
    return padded.reshape(rows, f, cols, f).sum(axis=(1, 3))


def ground_distance(shape: tuple[int, int]) -> np.ndarray:
    """Euclidean distances between all pairs of cell centres of a grid."""
    rr, cc_ = np.indices(shape)
    pts = np.stack([rr.ravel(), cc_.ravel()], axis=1).astype(np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def _network_simplex():
    # POT probes torch/jax/tensorflow/cupy on import; only its C++ network
    # simplex is needed here
    for backend in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{backend}", "1")
    from ot.lp import emd as solve

    return solve


def transport_plan(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    """Optimal transport plan between mass vectors ``a`` and ``b``.

    Solved exactly as a min-cost flow with the network simplex method. Only
    cells carrying mass enter the flow network.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    src = np.flatnonzero(a > 0)
    dst = np.flatnonzero(b > 0)
    plan = np.zeros((a.size, b.size))
    if src.size == 0 or dst.size == 0:
        return plan
    sa, sb = a[src], b[dst]
    sb = sb * (sa.sum() / sb.sum())  # exact balance for the solver
    sub_cost = np.ascontiguousarray(cost[np.ix_(src, dst)])
    sub, log = _network_simplex()(sa, sb, sub_cost, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise RuntimeError(f"transport solver did not converge: {log['warning']}")
    plan[np.ix_(src, dst)] = sub
    return plan


def emd(pred, gt, downsample_to: int = 32) -> float:
    """Earth mover's distance between two probability maps.

    Both maps are block-downsampled so the longer side is at most
    ``downsample_to`` cells and renormalized; distances are in cell units.
    """
    pred, gt = _pair(pred, gt)
    p = block_downsample(prob_map(pred), downsample_to)
    g = block_downsample(prob_map(gt), downsample_to)
    p, g = p / p.sum(), g / g.sum()
    cost = ground_distance(p.shape)
    plan = transport_plan(p.ravel(), g.ravel(), cost)
    return float((plan * cost).sum())


@dataclass(frozen=True)
class MetricReport:
    emd: float
    cc: float
    nss: Optional[float]
    kld: float
    sim: float

    def as_row(self) -> dict:
        return dict(zip(COLUMNS, (self.emd, self.cc, self.nss, self.kld, self.sim)))


def evaluate(pred, gt, fixations=None, downsample_to: int = 32) -> MetricReport:
    """All five metrics for one prediction. NSS is ``None`` without fixations."""
    pred, gt = _pair(pred, gt)
    p, g = prob_map(pred), prob_map(gt)
    return MetricReport(
        emd=emd(pred, gt, downsample_to),
        cc=cc(pred, gt),
        nss=None if fixations is None else nss(pred, fixations),
        kld=kld(p, g),
        sim=sim(p, g),
    )
