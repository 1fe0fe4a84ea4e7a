"""Allocation-similarity metrics.

Allocations are compared in a flat vector space: association bits,
then PRB-assignment bits, then powers normalized by the RU budget.
The binary-error metric (baep) looks only at the two binary segments
and reports the percentage of mismatched bits; the regression metrics
(mae, r2, cosine) run over the whole vector.
"""

from __future__ import annotations

import numpy as np

from .network import Allocation, NetworkConfig


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination, 1 - SS_res / SS_tot.

    A constant reference vector has no variance to explain: the score
    is 1.0 when the prediction is exact and 0.0 otherwise.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors.

    Two zero vectors count as identical (1.0); a single zero vector
    has no direction and scores 0.0.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    if np.array_equal(a, b):
        return 1.0   # exact self-comparison; the quotient below rounds
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def alloc_to_vector(alloc: Allocation, config: NetworkConfig) -> np.ndarray:
    """[assoc bits, prb bits, power / P_max] as one flat float vector."""
    return np.concatenate([
        alloc.assoc.reshape(-1).astype(float),
        alloc.prb.reshape(-1).astype(float),
        alloc.power.reshape(-1) / config.ru_max_power_w,
    ])


def binary_bits(alloc: Allocation) -> np.ndarray:
    return np.concatenate([alloc.assoc.reshape(-1),
                           alloc.prb.reshape(-1)]).astype(np.int8)


def baep(pred: Allocation, ref: Allocation, config: NetworkConfig) -> float:
    """Percentage of association/assignment bits that disagree."""
    a, b = binary_bits(pred), binary_bits(ref)
    return float(np.mean(a != b) * 100.0)


def aggregate_report(pairs, config: NetworkConfig) -> dict:
    """Mean per-instance metrics over (predicted, reference) pairs."""
    rows = {"mae": [], "r2": [], "cosine": [], "baep": []}
    n = 0
    for pred, ref in pairs:
        pv, rv = alloc_to_vector(pred, config), alloc_to_vector(ref, config)
        rows["mae"].append(mae(pv, rv))
        rows["r2"].append(r2(rv, pv))
        rows["cosine"].append(cosine_similarity(pv, rv))
        rows["baep"].append(baep(pred, ref, config))
        n += 1
    if n == 0:
        raise ValueError("no instance pairs to aggregate")
    out = {k: float(np.mean(v)) for k, v in rows.items()}
    out["n"] = n
    return out
