"""Pass/fail checks against medical-service targets for body area networks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MAX_LATENCY_S = 0.125
MIN_PDR = 0.9
PDR_LINK_SHARE = 0.95
MAX_COEXISTING = 10


@dataclass
class RequirementResult:
    requirement: str
    value: float | None
    threshold: float
    passed: bool
    detail: str = ""


def check_requirements(metrics) -> list[RequirementResult]:
    """Latency, PDR and coexistence checks.

    ``metrics`` is a ScenarioMetrics or any object/dict offering per-WBAN
    ``pdr`` and ``mean_delay`` sequences and ``n``.
    """
    if isinstance(metrics, dict):
        pdr, delay, n = np.asarray(metrics["pdr"], float), np.asarray(metrics["mean_delay"], float), metrics["n"]
    else:
        pdr, delay, n = metrics.pdr(), metrics.mean_delay(), metrics.n
    out = []

    worst = float(np.nanmax(delay)) if np.any(np.isfinite(delay)) else math.nan
    late = int(np.sum(delay >= MAX_LATENCY_S))
    out.append(RequirementResult(
        "medical_latency", worst, MAX_LATENCY_S, late == 0 and not math.isnan(worst),
        f"{late} of {n} WBANs at or above {MAX_LATENCY_S * 1e3:.0f} ms mean delay",
    ))

    keep = max(1, math.ceil(PDR_LINK_SHARE * n))
    best = np.sort(np.nan_to_num(pdr, nan=0.0))[::-1][:keep]
    floor = float(best.min())
    out.append(RequirementResult(
        "pdr_best_95pct", floor, MIN_PDR, floor >= MIN_PDR,
        f"lowest PDR among the best {keep} of {n} links",
    ))

    out.append(RequirementResult(
        "coexistence_count", float(n), float(MAX_COEXISTING), n <= MAX_COEXISTING,
        f"{n} co-located WBANs",
    ))
    return out
