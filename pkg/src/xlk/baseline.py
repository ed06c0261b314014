"""Exact ZF/RZF receive combining per subarray and SINR evaluation.

This is the correctness oracle for the randomized-Kaczmarz engine: the
combiner is obtained by a direct solve of the (active-user restricted)
Gram system, never by iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, RankDeficiencyError


@dataclass(frozen=True)
class Combiner:
    """Ms x K combining matrix V with zero columns for inactive users.

    W, when present, is the K x K factor with V = Hs @ W; keeping the
    factorized form lets reception run as W^H (Hs^H y).
    """

    V: np.ndarray
    active_users: np.ndarray
    xi: float
    W: np.ndarray = None

    @property
    def K(self) -> int:
        return self.V.shape[1]


def _active_columns(Hs: np.ndarray) -> np.ndarray:
    # masked antennas are exactly zero, so activity == nonzero column norm
    return np.flatnonzero(np.linalg.norm(Hs, axis=0) > 0.0)


def rzf_combiner(Hs: np.ndarray, xi: float) -> Combiner:
    """V = Hs (Hs^H Hs + xi I)^{-1}, restricted to active-user columns.

    xi = 0 gives ZF; the Gram system is formed only over users with nonzero
    columns. At xi = 0 a rank check is performed and a RankDeficiencyError
    naming the offending users is raised when the restriction is singular.
    """
    if xi < 0:
        raise ConfigurationError("xi must be nonnegative")
    Ms, K = Hs.shape
    active = _active_columns(Hs)
    V = np.zeros((Ms, K), dtype=complex)
    W = np.zeros((K, K), dtype=complex)
    if active.size == 0:
        return Combiner(V=V, active_users=active, xi=float(xi), W=W)
    Ha = Hs[:, active]
    n = active.size
    if xi > 0:
        gram = Ha.conj().T @ Ha + xi * np.eye(n)
        cf = scipy.linalg.cho_factor(gram)
        Wa = scipy.linalg.cho_solve(cf, np.eye(n, dtype=complex))
    else:
        # pivoted QR of the active columns: rank check plus a stable solve of
        # (Ha^H Ha) Wa = I without forming the Gram matrix explicitly
        Q, R, piv = scipy.linalg.qr(Ha, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(Ms, n) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        rank = int(np.count_nonzero(diag > tol))
        if rank < n:
            raise RankDeficiencyError(users=active[piv[rank:]])
        # Gram = P R^H R P^T, so Gram^{-1} = P R^{-1} R^{-H} P^T
        rhs = np.eye(n, dtype=complex)[piv, :]
        Y = scipy.linalg.solve_triangular(R, rhs, trans="C", lower=False)
        Z = scipy.linalg.solve_triangular(R, Y, lower=False)
        Wa = Z[np.argsort(piv), :]
    W[np.ix_(active, active)] = Wa
    V[:, active] = Ha @ Wa
    return Combiner(V=V, active_users=active, xi=float(xi), W=W)


def sinr_per_user(V, Hs: np.ndarray, p: float, sigma2: float) -> np.ndarray:
    """Instantaneous per-user SINR of combiner V at one subarray.

    gamma_k = p |v_k^H h_k|^2 / (p sum_{i != k} |v_k^H h_i|^2 + sigma2 ||v_k||^2);
    users with a zero combining column report 0.
    """
    if sigma2 <= 0:
        raise ConfigurationError("sigma2 must be positive")
    Vm = V.V if isinstance(V, Combiner) else np.asarray(V)
    A = Vm.conj().T @ Hs                       # (K, K), A[k, i] = v_k^H h_i
    p_gain = np.abs(A) ** 2
    sig = p * np.diagonal(p_gain)
    interf = p * (p_gain.sum(axis=1) - np.diagonal(p_gain))
    v_norm2 = np.sum(np.abs(Vm) ** 2, axis=0)
    gamma = np.zeros(Hs.shape[1])
    nz = v_norm2 > 0
    gamma[nz] = sig[nz] / (interf[nz] + sigma2 * v_norm2[nz])
    return gamma


def average_active_sinr(V, Hs: np.ndarray, p: float, sigma2: float) -> float:
    """Mean SINR over users with nonzero channel columns; 0.0 if none."""
    active = _active_columns(Hs)
    if active.size == 0:
        return 0.0
    return float(np.mean(sinr_per_user(V, Hs, p, sigma2)[active]))
