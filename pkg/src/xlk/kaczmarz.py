"""Randomized-Kaczmarz estimation of the receive combining matrix.

Each active user k at a subarray gets its own solve of the augmented system
(B^H) w = e_k with B = [Hs; sqrt(xi) I]. The state z accumulates the
already-rescaled last K components of w, so the returned z column is the
factor column W[:, k] directly and V_hat = Hs @ W. Iteration t = 0 always
projects onto the target user's own equation (self-initialization); rows
at t >= 1 are sampled from the update schedule.

Two engines are provided: `rka_user_solve` is the per-user reference, and
`_BatchedRka` runs all active users of a subarray in lockstep for the
Monte-Carlo harness. Both consume per-user row streams in the same way, so
they agree to floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, EmptyScheduleError
from . import streams


class ScheduleMode(str, Enum):
    POWER = "power"
    UNIFORM = "uniform"
    ACTIVE_ANTENNAS = "active_antennas"


@dataclass(frozen=True)
class UpdateSchedule:
    """Row-sampling distribution over the active users of one subarray."""

    mode: ScheduleMode
    probabilities: np.ndarray      # over active users, sums to 1
    active_index_map: np.ndarray   # sample index -> user id
    col_norms_sq: np.ndarray       # ||h_k||^2 cached for all K users

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probabilities)

    def sample_rows(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n user ids by inverse-CDF on a block of uniforms.

        Drawing uniforms in blocks keeps the stream prefix-consistent: the
        first n draws are identical whether requested in one call or many.
        """
        u = rng.random(n)
        idx = np.searchsorted(self.cdf, u, side="right")
        idx = np.minimum(idx, len(self.probabilities) - 1)
        return self.active_index_map[idx]


def build_schedule(Hs: np.ndarray, xi: float, mode: ScheduleMode,
                   active_counts: np.ndarray | None = None) -> UpdateSchedule:
    """Build the update schedule for one subarray.

    power: P_k proportional to ||h_k||^2 + xi; uniform: 1/K_active;
    active_antennas: proportional to the active-antenna counts D_k^(s)
    (active_counts required for that mode). Support is exactly the set of
    users with a nonzero column (equivalently D_k^(s) > 0).
    """
    mode = ScheduleMode(mode)
    norms_sq = np.sum(np.abs(Hs) ** 2, axis=0)
    if active_counts is not None:
        active = np.flatnonzero(np.asarray(active_counts) > 0)
    else:
        active = np.flatnonzero(norms_sq > 0.0)
    if active.size == 0:
        raise EmptyScheduleError("no active users at this subarray")
    if mode == ScheduleMode.POWER:
        weights = norms_sq[active] + xi
    elif mode == ScheduleMode.UNIFORM:
        weights = np.ones(active.size)
    else:
        if active_counts is None:
            raise ConfigurationError("active_antennas schedule needs active-antenna counts")
        weights = np.asarray(active_counts, dtype=float)[active]
    probs = weights / weights.sum()
    return UpdateSchedule(mode=mode, probabilities=probs, active_index_map=active,
                          col_norms_sq=norms_sq)


@dataclass
class RkaState:
    """State of one user solve: u in C^Ms, z in C^K, iteration counter t."""

    u: np.ndarray
    z: np.ndarray
    t: int = 0


@dataclass
class RkaStats:
    """Instrumentation of the solves run at one subarray.

    inner_mults counts the Ms complex multiplications of <h_r, u> per
    iteration; setup_mults the schedule setup (2*Ms per active user for the
    power schedule's norm precompute, a flat Ms otherwise). first_rows
    records (target user, first projected row) per solve.
    """

    Ms: int = 0
    mode: ScheduleMode = None
    n_active: int = 0
    iterations: int = 0
    setup_mults: int = 0
    first_rows: list = field(default_factory=list)

    @property
    def inner_mults(self) -> int:
        return self.Ms * self.iterations

    @property
    def combining_mults(self) -> int:
        return self.inner_mults + self.setup_mults

    def charge_setup(self, Ms: int, mode: ScheduleMode, n_active: int):
        self.Ms = Ms
        self.mode = mode
        self.n_active = n_active
        self.setup_mults = 2 * Ms * n_active if mode == ScheduleMode.POWER else Ms


def rka_user_solve(Hs: np.ndarray, xi: float, k: int, T: int,
                   schedule: UpdateSchedule, rng: np.random.Generator,
                   stats: RkaStats | None = None,
                   residual_trace: list | None = None) -> np.ndarray:
    """Solve (B^H) w = e_k for user k with T iterations; returns z (column of W).

    T counts all loop passes including the forced t = 0 self-initialization.
    """
    if T < 1:
        raise ConfigurationError("iteration count T must be >= 1")
    Ms, K = Hs.shape
    rows = np.empty(T, dtype=np.intp)
    rows[0] = k
    if T > 1:
        rows[1:] = schedule.sample_rows(rng, T - 1)
    state = RkaState(u=np.zeros(Ms, dtype=complex), z=np.zeros(K, dtype=complex))
    norms_sq = schedule.col_norms_sq
    if stats is not None:
        stats.first_rows.append((int(k), int(rows[0])))
    for t in range(T):
        r = rows[t]
        denom = norms_sq[r] + xi
        if denom == 0.0:
            raise AssertionError("schedule sampled a user with a zero column at xi=0")
        eta = ((1.0 if r == k else 0.0) - np.vdot(Hs[:, r], state.u) - xi * state.z[r]) / denom
        state.u += eta * Hs[:, r]
        state.z[r] += eta
        state.t = t + 1
        if residual_trace is not None:
            residual_trace.append(float(np.linalg.norm(
                _unit_vector(K, k) - Hs.conj().T @ state.u - xi * state.z)))
    if stats is not None:
        stats.iterations += T
    return state.z


def _unit_vector(K: int, k: int) -> np.ndarray:
    e = np.zeros(K)
    e[k] = 1.0
    return e


def estimate_combiner(Hs: np.ndarray, xi: float, T: int, schedule: UpdateSchedule,
                      seed: int, subarray: int = 0, trial: int = 0,
                      stats: RkaStats | None = None):
    """Run the per-user solves for every active user and assemble the combiner.

    Inactive users are skipped and keep zero columns. Each user solve draws
    rows from its own substream mixed from (seed, trial, subarray, user), so
    results are identical however the solves are scheduled.
    """
    from .baseline import Combiner  # local import to avoid a cycle at module load

    Ms, K = Hs.shape
    W = np.zeros((K, K), dtype=complex)
    if stats is not None:
        stats.charge_setup(Ms, schedule.mode, schedule.active_index_map.size)
    for k in schedule.active_index_map:
        rng = streams.rka_row_stream(seed, trial, subarray, int(k))
        W[:, k] = rka_user_solve(Hs, xi, int(k), T, schedule, rng, stats=stats)
    V = Hs @ W
    return Combiner(V=V, active_users=schedule.active_index_map.copy(), xi=float(xi), W=W)


class BatchedRka:
    """All active-user solves of one subarray advanced in lockstep.

    Column j of the internal state is user active[j]'s solve. Rows for each
    user are drawn from the same per-user substreams as `rka_user_solve`,
    in prefix-consistent blocks, so advancing to T here matches T fresh
    reference iterations up to floating-point rounding. Supports cheap
    snapshot/restore, which the iteration-calibration search relies on.
    """

    def __init__(self, Hs: np.ndarray, xi: float, schedule: UpdateSchedule,
                 seed: int, subarray: int = 0, trial: int = 0,
                 stats: RkaStats | None = None):
        self.Hs = Hs
        self.xi = xi
        self.schedule = schedule
        self.active = schedule.active_index_map
        Ms, K = Hs.shape
        n = self.active.size
        self.U = np.zeros((Ms, n), dtype=complex)
        self.Z = np.zeros((K, n), dtype=complex)
        self.t = 0
        self._rngs = [streams.rka_row_stream(seed, trial, subarray, int(k))
                      for k in self.active]
        self._norms_sq = schedule.col_norms_sq
        self.stats = stats
        if stats is not None:
            stats.charge_setup(Ms, schedule.mode, n)

    def advance_to(self, T: int):
        """Run iterations until every solve has executed T total passes."""
        if T < 1:
            raise ConfigurationError("iteration count T must be >= 1")
        if T <= self.t:
            return
        n_new = T - self.t
        cols = np.arange(self.active.size)
        rows = np.empty((n_new, self.active.size), dtype=np.intp)
        start = self.t
        for j, rng in enumerate(self._rngs):
            if start == 0:
                rows[0, j] = self.active[j]
                if n_new > 1:
                    rows[1:, j] = self.schedule.sample_rows(rng, n_new - 1)
                if self.stats is not None:
                    self.stats.first_rows.append((int(self.active[j]), int(rows[0, j])))
            else:
                rows[:, j] = self.schedule.sample_rows(rng, n_new)
        e_target = self.active
        for i in range(n_new):
            r = rows[i]
            Hr = self.Hs[:, r]                                   # (Ms, n)
            proj = np.einsum("mj,mj->j", Hr.conj(), self.U)      # h_r^H u per solve
            rhs = (r == e_target).astype(float)
            eta = (rhs - proj - self.xi * self.Z[r, cols]) / (self._norms_sq[r] + self.xi)
            self.U += eta[None, :] * Hr
            self.Z[r, cols] += eta
        self.t = T
        if self.stats is not None:
            self.stats.iterations += n_new * self.active.size

    def snapshot(self):
        return (self.t, self.U.copy(), self.Z.copy(),
                [rng.bit_generator.state for rng in self._rngs])

    def restore(self, snap):
        self.t, U, Z, rng_states = snap
        self.U = U.copy()
        self.Z = Z.copy()
        for rng, st in zip(self._rngs, rng_states):
            rng.bit_generator.state = st

    def factor(self) -> np.ndarray:
        """Current K x K factor W (zero columns for inactive users)."""
        K = self.Hs.shape[1]
        W = np.zeros((K, K), dtype=complex)
        W[:, self.active] = self.Z
        return W

    def combiner(self):
        from .baseline import Combiner

        W = self.factor()
        return Combiner(V=self.Hs @ W, active_users=self.active.copy(),
                        xi=float(self.xi), W=W)
