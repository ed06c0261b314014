"""Non-stationary XL-MIMO channel model with visibility regions.

A uniform linear array of M antennas is split into S disjoint subarrays of
Ms = M/S antennas. Each user sees only the portion of the array inside its
visibility region (VR), an interval [c - l, c + l] in array-local
coordinates. Antennas outside the VR carry exactly zero channel energy for
that user. Two power normalizations are supported for the small-scale
covariance: Norm1 rescales active antennas so the covariance trace stays M,
Norm2 leaves active antennas at unit variance so the trace equals the
active-antenna count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, CorrelationModelError, DegenerateGeometryError
from . import streams

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


class Normalization(str, Enum):
    NORM1 = "norm1"  # trace of small-scale covariance = M for every user
    NORM2 = "norm2"  # trace = number of active antennas


@dataclass(frozen=True)
class ArrayGeometry:
    """ULA on the x-axis, centered at the origin, grouped into S subarrays."""

    M: int
    S: int
    spacing_m: float
    element_positions: np.ndarray  # (M, 2) meters
    L_m: float

    @property
    def Ms(self) -> int:
        return self.M // self.S

    @property
    def local_coords(self) -> np.ndarray:
        """Element positions mapped to [0, L]: element m sits at (m + 1/2) * spacing."""
        return self.element_positions[:, 0] + self.L_m / 2.0

    def subarray_slice(self, s: int) -> slice:
        return slice(s * self.Ms, (s + 1) * self.Ms)

    def __post_init__(self):
        if self.M % self.S != 0:
            raise ConfigurationError(f"M={self.M} not divisible by S={self.S}")
        pos = np.asarray(self.element_positions, dtype=float)
        if pos.shape != (self.M, 2):
            raise ConfigurationError(f"element_positions must be ({self.M}, 2)")
        if not np.allclose(pos[:, 1], pos[0, 1]):
            raise ConfigurationError("array elements must be collinear on the x-axis")
        dx = np.diff(pos[:, 0])
        if not np.allclose(dx, self.spacing_m, rtol=1e-9, atol=0.0):
            raise ConfigurationError("array elements must be equally spaced")
        if abs(self.L_m - self.M * self.spacing_m) > 1e-9 * self.L_m:
            raise ConfigurationError("L_m inconsistent with M * spacing_m")


def build_array_geometry(M: int, S: int, carrier_hz: float,
                         spacing_wavelengths: float) -> ArrayGeometry:
    """Build the ULA geometry; spacing in wavelengths of the carrier."""
    if M <= 0 or S <= 0:
        raise ConfigurationError("M and S must be positive")
    if M % S != 0:
        raise ConfigurationError(f"M={M} not divisible by S={S}")
    if carrier_hz <= 0:
        raise ConfigurationError("carrier frequency must be positive")
    spacing = spacing_wavelengths * SPEED_OF_LIGHT / carrier_hz
    x = (np.arange(M) - (M - 1) / 2.0) * spacing
    positions = np.column_stack([x, np.zeros(M)])
    return ArrayGeometry(M=M, S=S, spacing_m=spacing,
                         element_positions=positions, L_m=M * spacing)


@dataclass(frozen=True)
class UserDrop:
    K: int
    positions: np.ndarray  # (K, 2) meters
    p_mW: float


def draw_user_positions(K: int, cell: tuple[float, float, float, float],
                        min_distance_m: float, rng: np.random.Generator,
                        p_mW: float = 1.0) -> UserDrop:
    """Drop K users uniformly in the cell rectangle (x_min, x_max, y_min, y_max).

    Points closer than min_distance_m to the array reference point (origin)
    are rejected and redrawn; with the default cell y >= 30 m no rejection
    ever occurs.
    """
    x_min, x_max, y_min, y_max = cell
    if not (x_max > x_min and y_max > y_min):
        raise ConfigurationError("cell rectangle must have positive area")
    corners = np.array([[x_min, y_min], [x_min, y_max], [x_max, y_min], [x_max, y_max]])
    if np.max(np.hypot(corners[:, 0], corners[:, 1])) < min_distance_m:
        raise ConfigurationError("cell lies entirely inside the exclusion disc")
    positions = np.empty((K, 2))
    filled = 0
    while filled < K:
        n = K - filled
        pts = np.column_stack([rng.uniform(x_min, x_max, n), rng.uniform(y_min, y_max, n)])
        ok = np.hypot(pts[:, 0], pts[:, 1]) >= min_distance_m
        m = int(np.count_nonzero(ok))
        positions[filled:filled + m] = pts[ok]
        filled += m
    return UserDrop(K=K, positions=positions, p_mW=float(p_mW))


@dataclass(frozen=True)
class VisibilityRegion:
    center_m: float
    half_length_m: float
    mask: np.ndarray            # (M,) bool
    D_total: int
    D_per_subarray: np.ndarray  # (S,) int


def draw_visibility_region(geometry: ArrayGeometry, mu_l_m: float, sigma_l: float,
                           rng: np.random.Generator) -> VisibilityRegion:
    """Draw one VR: center uniform on [0, L], half-length lognormal.

    The lognormal is parameterized so that E[l] = mu_l_m with underlying
    normal standard deviation sigma_l (underlying mean ln(mu_l_m) - sigma^2/2).
    """
    if mu_l_m <= 0 or sigma_l <= 0:
        raise ConfigurationError("VR length parameters must be positive")
    c = rng.uniform(0.0, geometry.L_m)
    l = float(np.exp(rng.normal(np.log(mu_l_m) - 0.5 * sigma_l ** 2, sigma_l)))
    return visibility_region_from_interval(geometry, c, l)


def visibility_region_from_interval(geometry: ArrayGeometry, center_m: float,
                                    half_length_m: float) -> VisibilityRegion:
    """VR with an explicitly given interval (used by tests and fixtures)."""
    mask = np.abs(geometry.local_coords - center_m) <= half_length_m
    d_sub = np.array([int(np.count_nonzero(mask[geometry.subarray_slice(s)]))
                      for s in range(geometry.S)])
    return VisibilityRegion(center_m=float(center_m), half_length_m=float(half_length_m),
                            mask=mask, D_total=int(mask.sum()), D_per_subarray=d_sub)


def normalization_diagonal(vr: VisibilityRegion, M: int, mode: Normalization) -> np.ndarray:
    """Diagonal of the covariance-level VR scaling matrix.

    Norm1 puts M/D_k on active antennas (trace M); Norm2 puts 1 (trace D_k).
    A user with no active antennas gets an all-zero diagonal.
    """
    diag = np.zeros(M)
    if vr.D_total == 0:
        return diag
    if mode == Normalization.NORM1:
        diag[vr.mask] = M / vr.D_total
    else:
        diag[vr.mask] = 1.0
    return diag


def path_loss_vector(user_position: Sequence[float], geometry: ArrayGeometry,
                     omega: float, nu: float) -> np.ndarray:
    """Per-antenna large-scale gain omega * d^(-nu), d the user-element distance."""
    d = np.hypot(geometry.element_positions[:, 0] - user_position[0],
                 geometry.element_positions[:, 1] - user_position[1])
    if np.any(d == 0.0):
        raise DegenerateGeometryError("user coincides with an antenna element")
    return omega * d ** (-nu)


CorrelationProvider = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray                 # (M, K) complex
    vrs: list[VisibilityRegion]
    normalization_mode: Normalization
    path_loss: np.ndarray         # (M, K) per-antenna large-scale gains
    geometry: ArrayGeometry
    drop: UserDrop = None
    subarray_blocks: list[np.ndarray] = field(default=None)

    @property
    def K(self) -> int:
        return self.H.shape[1]

    def block(self, s: int) -> np.ndarray:
        """Ms x K channel view of subarray s."""
        return self.H[self.geometry.subarray_slice(s), :]

    def active_users(self, s: int) -> np.ndarray:
        """Indices of users with at least one active antenna at subarray s."""
        return np.flatnonzero(self.active_counts(s) > 0)

    def active_counts(self, s: int) -> np.ndarray:
        """(K,) active-antenna counts D_k^(s) at subarray s."""
        return np.array([vr.D_per_subarray[s] for vr in self.vrs])


def _covariance_sqrt_column(diag: np.ndarray, R: np.ndarray | None,
                            g: np.ndarray) -> np.ndarray:
    """Apply Theta^(1/2) = (D^(1/2) R D^(1/2))^(1/2) to the Gaussian vector g."""
    if R is None:
        return np.sqrt(diag) * g
    sq = np.sqrt(diag)
    theta = sq[:, None] * R * sq[None, :]
    evals, evecs = np.linalg.eigh(theta)
    if evals.min() < -1e-10 * max(evals.max(), 1.0):
        raise CorrelationModelError("correlation matrix is not positive semi-definite")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))[None, :]
    return root @ (evecs.conj().T @ g)


def draw_channel(geometry: ArrayGeometry, drop: UserDrop,
                 vr_params: tuple[float, float], mode: Normalization,
                 rng_vr: np.random.Generator, rng_fading: np.random.Generator,
                 correlation: CorrelationProvider | np.ndarray | None = None,
                 omega: float = 4.0, nu: float = 3.0) -> ChannelRealization:
    """Draw one full channel realization H (M x K) with per-user VRs.

    For each user: draw the VR, build the blockwise small-scale covariance
    Theta_k = D^(1/2) R D^(1/2), draw hbar = Theta^(1/2) g with g standard
    complex Gaussian, and apply the per-antenna path-loss amplitude
    sqrt(w) elementwise. Rows are grouped into S contiguous subarray blocks.

    vr_params is (mu_l_m, sigma_l). correlation is None (identity), an M x M
    matrix shared by all users, or a callable k -> M x M matrix.
    """
    M, K, S = geometry.M, drop.K, geometry.S
    mu_l, sigma_l = vr_params
    H = np.zeros((M, K), dtype=complex)
    W = np.zeros((M, K))
    vrs = []
    for k in range(K):
        vr = draw_visibility_region(geometry, mu_l, sigma_l, rng_vr)
        vrs.append(vr)
        diag = normalization_diagonal(vr, M, mode)
        g = (rng_fading.standard_normal(M) + 1j * rng_fading.standard_normal(M)) / np.sqrt(2.0)
        if correlation is None:
            R_k = None
        elif callable(correlation):
            R_k = np.asarray(correlation(k))
        else:
            R_k = np.asarray(correlation)
        w = path_loss_vector(drop.positions[k], geometry, omega, nu)
        W[:, k] = w
        col = np.zeros(M, dtype=complex)
        for s in range(S):
            sl = geometry.subarray_slice(s)
            Rb = None if R_k is None else R_k[sl, sl]
            col[sl] = _covariance_sqrt_column(diag[sl], Rb, g[sl])
        H[:, k] = np.sqrt(w) * col
        # antennas outside the VR must be exactly zero, not merely tiny
        H[~vr.mask, k] = 0.0
    blocks = [H[geometry.subarray_slice(s), :] for s in range(S)]
    return ChannelRealization(H=H, vrs=vrs, normalization_mode=mode, path_loss=W,
                              geometry=geometry, drop=drop, subarray_blocks=blocks)


def realization_for_trial(geometry: ArrayGeometry, master_seed: int, trial: int,
                          K: int, cell: tuple[float, float, float, float],
                          min_distance_m: float, vr_params: tuple[float, float],
                          mode: Normalization, p_mW: float = 1.0,
                          correlation=None, omega: float = 4.0,
                          nu: float = 3.0) -> ChannelRealization:
    """Channel realization for one Monte-Carlo trial, fully determined by seeds."""
    drop = draw_user_positions(K, cell, min_distance_m,
                               streams.substream(master_seed, streams.TAG_USER_DROP, trial),
                               p_mW=p_mW)
    return draw_channel(geometry, drop, vr_params, mode,
                        streams.substream(master_seed, streams.TAG_VISIBILITY, trial),
                        streams.substream(master_seed, streams.TAG_SMALL_SCALE, trial),
                        correlation=correlation, omega=omega, nu=nu)


# --- serialization (regression fixtures) -----------------------------------

def realization_to_json(r: ChannelRealization) -> str:
    """Serialize a realization; complex entries stored as [re, im] pairs."""
    payload = {
        "geometry": {
            "M": r.geometry.M, "S": r.geometry.S,
            "spacing_m": r.geometry.spacing_m, "L_m": r.geometry.L_m,
        },
        "normalization": r.normalization_mode.value,
        "H": [[[z.real, z.imag] for z in col] for col in r.H.T],
        "path_loss": r.path_loss.T.tolist(),
        "vrs": [
            {"center_m": vr.center_m, "half_length_m": vr.half_length_m,
             "mask": vr.mask.astype(int).tolist()}
            for vr in r.vrs
        ],
        "user_positions": r.drop.positions.tolist() if r.drop is not None else None,
        "p_mW": r.drop.p_mW if r.drop is not None else None,
    }
    return json.dumps(payload)


def realization_from_json(text: str) -> ChannelRealization:
    payload = json.loads(text)
    g = payload["geometry"]
    M, S = g["M"], g["S"]
    x = (np.arange(M) - (M - 1) / 2.0) * g["spacing_m"]
    geometry = ArrayGeometry(M=M, S=S, spacing_m=g["spacing_m"],
                             element_positions=np.column_stack([x, np.zeros(M)]),
                             L_m=g["L_m"])
    H = np.array([[complex(re, im) for re, im in col] for col in payload["H"]]).T
    vrs = []
    for v in payload["vrs"]:
        mask = np.array(v["mask"], dtype=bool)
        d_sub = np.array([int(np.count_nonzero(mask[geometry.subarray_slice(s)]))
                          for s in range(S)])
        vrs.append(VisibilityRegion(center_m=v["center_m"], half_length_m=v["half_length_m"],
                                    mask=mask, D_total=int(mask.sum()), D_per_subarray=d_sub))
    drop = None
    if payload["user_positions"] is not None:
        pos = np.array(payload["user_positions"])
        drop = UserDrop(K=pos.shape[0], positions=pos, p_mW=payload["p_mW"])
    blocks_H = np.ascontiguousarray(H)
    blocks = [blocks_H[geometry.subarray_slice(s), :] for s in range(S)]
    return ChannelRealization(H=blocks_H, vrs=vrs,
                              normalization_mode=Normalization(payload["normalization"]),
                              path_loss=np.array(payload["path_loss"]).T,
                              geometry=geometry, drop=drop, subarray_blocks=blocks)
