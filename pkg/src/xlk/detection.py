"""Per-subarray symbol estimation, gain normalization, fusion, and SER.

The central unit combines the per-subarray soft estimates with an
SINR-weighted convex combination per user (equal-gain averaging available
as a fallback), then hard-decides against the constellation.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .baseline import Combiner


class Constellation(str, Enum):
    QPSK = "qpsk"
    QAM16 = "qam16"
    QAM64 = "qam64"


def _square_qam_points(levels: np.ndarray) -> np.ndarray:
    re, im = np.meshgrid(levels, levels)
    pts = (re + 1j * im).ravel()
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


_POINTS = {
    Constellation.QPSK: _square_qam_points(np.array([-1.0, 1.0])),
    Constellation.QAM16: _square_qam_points(np.array([-3.0, -1.0, 1.0, 3.0])),
    Constellation.QAM64: _square_qam_points(np.arange(-7.0, 8.0, 2.0)),
}


def constellation_points(constellation: Constellation) -> np.ndarray:
    """Unit-average-energy symbol alphabet."""
    return _POINTS[Constellation(constellation)].copy()


def draw_symbols(K: int, constellation: Constellation, rng: np.random.Generator) -> np.ndarray:
    pts = _POINTS[Constellation(constellation)]
    return pts[rng.integers(0, len(pts), K)]


def hard_decide(x_hat: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Nearest-neighbor decision per entry (first point wins ties)."""
    pts = _POINTS[Constellation(constellation)]
    idx = np.argmin(np.abs(x_hat[:, None] - pts[None, :]), axis=1)
    return pts[idx]


@dataclass(frozen=True)
class SymbolFrame:
    x: np.ndarray
    constellation: Constellation
    tau_ul: int = 190


@dataclass(frozen=True)
class FusedEstimate:
    x_hat: np.ndarray          # (K,)
    per_subarray: np.ndarray   # (S, K)
    weights: np.ndarray        # (S, K), convex per user column
    undetectable: np.ndarray   # (K,) bool, user served by no subarray


def received_signal(Hs: np.ndarray, x: np.ndarray, p: float, sigma2: float,
                    rng: np.random.Generator) -> np.ndarray:
    """y = sqrt(p) Hs x + n with circularly-symmetric noise, sigma2 per entry."""
    Ms = Hs.shape[0]
    n = np.sqrt(sigma2 / 2.0) * (rng.standard_normal(Ms) + 1j * rng.standard_normal(Ms))
    return np.sqrt(p) * (Hs @ x) + n


def subarray_estimates(combiner: Combiner, Hs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x_hat = W^H (Hs^H y) via the factorized form; falls back to V^H y."""
    if combiner.W is not None:
        return combiner.W.conj().T @ (Hs.conj().T @ y)
    return combiner.V.conj().T @ y


def normalize_gains(x_hat_s: np.ndarray, combiner: Combiner, Hs: np.ndarray) -> np.ndarray:
    """Divide each estimate by its effective gain g_k = v_k^H h_k.

    The rKA combiner columns carry an arbitrary per-user scale; unit
    effective gain makes amplitude constellations decodable. Gains below
    1e-12 in magnitude pass zero through.
    """
    g = np.einsum("mk,mk->k", combiner.V.conj(), Hs)
    out = np.zeros_like(x_hat_s)
    ok = np.abs(g) > 1e-12
    out[ok] = x_hat_s[ok] / g[ok]
    return out


def fuse(per_subarray_estimates: np.ndarray, per_subarray_sinr: np.ndarray,
         equal_gain: bool = False) -> FusedEstimate:
    """SINR-weighted convex fusion of the S per-subarray estimates.

    Weights are gamma_k^(s) / sum_s gamma_k^(s) over subarrays with positive
    SINR (or 1/count with equal_gain=True). Users with all-zero SINR fuse to
    0 and are flagged undetectable.
    """
    est = np.asarray(per_subarray_estimates)
    gamma = np.asarray(per_subarray_sinr, dtype=float)
    if np.any(gamma < 0):
        raise ValueError("SINR values must be nonnegative")
    S, K = est.shape
    weights = np.zeros((S, K))
    totals = gamma.sum(axis=0)
    served = totals > 0
    if equal_gain:
        counts = (gamma > 0).sum(axis=0)
        weights[:, served] = (gamma[:, served] > 0) / counts[served]
    else:
        weights[:, served] = gamma[:, served] / totals[served]
    x_hat = np.einsum("sk,sk->k", weights, est)
    return FusedEstimate(x_hat=x_hat, per_subarray=est, weights=weights,
                         undetectable=~served)


def symbol_error_rate(x_hat: np.ndarray, x: np.ndarray,
                      constellation: Constellation) -> float:
    """Fraction of users whose hard decision differs from the sent symbol."""
    decided = hard_decide(np.asarray(x_hat), constellation)
    sent = hard_decide(np.asarray(x), constellation)
    return float(np.mean(decided != sent))
