"""Monte-Carlo experiment drivers: CRD sweep, SER sweep, complexity sweep.

Trials are independent and embarrassingly parallel: every random draw comes
from a substream keyed by (master seed, stage, trial, ...), and aggregation
uses exactly-rounded summation, so serial and parallel runs of the same
config produce identical results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baseline, channel, detection, kaczmarz, streams
from .channel import Normalization
from .complexity import Scheme, crd, iteration_upper_bound, scheme_for_schedule, table1_counts
from .detection import Constellation
from .errors import ConfigurationError
from .kaczmarz import ScheduleMode


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment parameters; defaults reproduce the reference setup."""

    m: int = 100
    s: int = 4
    k: int = 25
    p_dbm: float = 0.0
    sigma2_dbm: tuple = (-55.0, -50.0, -45.0, -40.0)
    omega: float = 4.0
    nu: float = 3.0
    carrier_hz: float = 2.6e9
    spacing_wavelengths: float = 2.0
    cell_x: tuple = (-50.0, 50.0)
    cell_y: tuple = (30.0, 130.0)
    min_distance_m: float = 30.0
    vr_mean_length_frac: float = 0.1
    vr_sigma: float = 0.1
    normalizations: tuple = (Normalization.NORM1, Normalization.NORM2)
    schedules: tuple = (ScheduleMode.POWER, ScheduleMode.UNIFORM, ScheduleMode.ACTIVE_ANTENNAS)
    deltas: tuple = (0.10, 0.01)
    constellation: Constellation = Constellation.QPSK
    trials: int = 100
    frames: int = 1
    tau_ul: int = 190
    t_fixed: int = 500
    t_max: int | None = None
    seed: int = 1
    threads: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.m <= 0 or self.s <= 0 or self.k <= 0:
            raise ConfigurationError("m, s and k must be positive")
        if self.m % self.s != 0:
            raise ConfigurationError(f"m={self.m} not divisible by s={self.s}")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.frames < 1:
            raise ConfigurationError("frames must be >= 1")
        if not self.sigma2_dbm:
            raise ConfigurationError("sigma2_dbm grid must be non-empty")
        for d in self.deltas:
            if not 0.0 < d < 1.0:
                raise ConfigurationError(f"delta={d} outside (0, 1)")
        if not all(math.isfinite(v) for v in (self.p_dbm, *self.sigma2_dbm)):
            raise ConfigurationError("powers must be finite")
        if self.vr_mean_length_frac <= 0 or self.vr_sigma <= 0:
            raise ConfigurationError("VR length parameters must be positive")
        if self.tau_ul < 0 or self.t_fixed < 1 or self.threads < 1:
            raise ConfigurationError("tau_ul, t_fixed, threads out of domain")
        self.geometry()  # raises on bad array parameters
        return self

    def geometry(self) -> channel.ArrayGeometry:
        return channel.build_array_geometry(self.m, self.s, self.carrier_hz,
                                            self.spacing_wavelengths)

    @property
    def p_mw(self) -> float:
        return 10.0 ** (self.p_dbm / 10.0)

    @property
    def cell(self) -> tuple:
        return (self.cell_x[0], self.cell_x[1], self.cell_y[0], self.cell_y[1])

    def sigma2_mw(self, sigma2_dbm: float) -> float:
        return 10.0 ** (sigma2_dbm / 10.0)

    def xi(self, sigma2_dbm: float) -> float:
        return self.sigma2_mw(sigma2_dbm) / self.p_mw

    def vr_params(self) -> tuple:
        return (self.vr_mean_length_frac * self.geometry().L_m, self.vr_sigma)

    def realization(self, trial: int, normalization: Normalization) -> channel.ChannelRealization:
        # normalizations share VR/fading substreams, so cross-normalization
        # comparisons run on common random numbers
        return channel.realization_for_trial(
            self.geometry(), self.seed, trial, self.k, self.cell, self.min_distance_m,
            self.vr_params(), normalization, p_mW=self.p_mw, omega=self.omega, nu=self.nu)


@dataclass
class SweepResult:
    name: str
    columns: tuple
    rows: list
    axis: tuple
    trials: int

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_csv_cell(v) for v in row))
        return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return "nan"
    return repr(f)


def _fmean(values) -> float:
    values = list(values)
    if not values:
        return float("nan")
    return math.fsum(values) / len(values)


def _ci95(values) -> float:
    values = list(values)
    n = len(values)
    if n < 2:
        return float("nan")
    m = _fmean(values)
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return 1.96 * math.sqrt(var / n)


# --- iteration calibration ---------------------------------------------------

@dataclass(frozen=True)
class SubarrayCalibration:
    subarray: int
    T: int | None          # smallest passing iteration count, None if no active users
    n_active: int
    censored: bool


def calibrate_for_realization(real: channel.ChannelRealization, p_mw: float,
                              sigma2_mw: float, schedule: ScheduleMode, delta: float,
                              seed: int, trial: int,
                              t_max: int | None = None) -> list:
    """Smallest per-user iteration count meeting the SINR target, per subarray.

    The target is (1 - delta) times the average active-user SINR of the
    exact RZF combiner at the same subarray. The search doubles T until the
    target is met, then bisects; the incremental engine with snapshots makes
    re-evaluation at intermediate T cheap. Searches that exceed t_max
    (default 50 * n_active^2) are reported censored at t_max, not raised.
    """
    xi = sigma2_mw / p_mw
    out = []
    for s in range(real.geometry.S):
        Hs = real.block(s)
        counts = real.active_counts(s)
        n_active = int(np.count_nonzero(counts > 0))
        if n_active == 0:
            out.append(SubarrayCalibration(subarray=s, T=None, n_active=0, censored=False))
            continue
        cap = t_max if t_max is not None else 50 * n_active * n_active
        target = (1.0 - delta) * baseline.average_active_sinr(
            baseline.rzf_combiner(Hs, xi), Hs, p_mw, sigma2_mw)
        sch = kaczmarz.build_schedule(Hs, xi, schedule, active_counts=counts)
        eng = kaczmarz.BatchedRka(Hs, xi, sch, seed=seed, subarray=s, trial=trial)

        def passes() -> bool:
            return baseline.average_active_sinr(eng.combiner(), Hs, p_mw, sigma2_mw) >= target

        T = 1
        eng.advance_to(1)
        snaps = {1: eng.snapshot()}
        ok = passes()
        while not ok and T < cap:
            T = min(2 * T, cap)
            eng.advance_to(T)
            snaps[T] = eng.snapshot()
            ok = passes()
        if not ok:
            out.append(SubarrayCalibration(subarray=s, T=cap, n_active=n_active, censored=True))
            continue
        if T > 1:
            lo = max(t for t in snaps if t < T)
            hi = T
            while hi - lo > 1:
                mid = (lo + hi) // 2
                eng.restore(snaps[lo])
                eng.advance_to(mid)
                if passes():
                    hi = mid
                else:
                    lo = mid
                    snaps[lo] = eng.snapshot()
            T = hi
        out.append(SubarrayCalibration(subarray=s, T=T, n_active=n_active, censored=False))
    return out


@dataclass
class CalibrationResult:
    sigma2_dbm: float
    normalization: Normalization
    schedule: ScheduleMode
    delta: float
    tbar: np.ndarray       # (S,) mean per-user iterations over trials
    tbar_ci95: np.ndarray
    kbar: np.ndarray       # (S,) mean active-user counts over trials
    censored: np.ndarray   # (S,) censored-trial counts
    trials: int


def _calibration_trial(config: ExperimentConfig, normalization: Normalization,
                       trial: int, points: tuple, schedules: tuple,
                       deltas: tuple) -> dict:
    """One trial's calibrations for every (sigma2, schedule, delta); worker-safe."""
    real = config.realization(trial, normalization)
    result = {}
    for sigma2_dbm in points:
        sigma2 = config.sigma2_mw(sigma2_dbm)
        for schedule in schedules:
            for delta in deltas:
                cals = calibrate_for_realization(real, config.p_mw, sigma2, schedule,
                                                 delta, config.seed, trial,
                                                 t_max=config.t_max)
                result[(sigma2_dbm, schedule, delta)] = [
                    (c.T, c.n_active, c.censored) for c in cals]
    return result


def _map_trials(worker, jobs, threads: int):
    if threads <= 1:
        return [worker(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_apply, [(worker, job) for job in jobs]))


def _apply(packed):
    worker, job = packed
    return worker(*job)


def calibrate_iterations(config: ExperimentConfig, sigma2_dbm: float,
                         schedule: ScheduleMode, delta: float,
                         normalization: Normalization | None = None,
                         trials: int | None = None,
                         threads: int | None = None) -> CalibrationResult:
    """Mean calibrated iteration count per subarray over Monte-Carlo trials."""
    config.validate()
    schedule = ScheduleMode(schedule)
    normalization = Normalization(normalization or config.normalizations[0])
    n_trials = trials if trials is not None else config.trials
    n_threads = threads if threads is not None else config.threads
    jobs = [(config, normalization, t, (sigma2_dbm,), (schedule,), (delta,))
            for t in range(n_trials)]
    per_trial = _map_trials(_calibration_trial, jobs, n_threads)
    return _aggregate_calibration(config, sigma2_dbm, normalization, schedule, delta,
                                  [r[(sigma2_dbm, schedule, delta)] for r in per_trial])


def _aggregate_calibration(config, sigma2_dbm, normalization, schedule, delta,
                           trial_rows) -> CalibrationResult:
    S = config.s
    tbar = np.full(S, np.nan)
    ci = np.full(S, np.nan)
    kbar = np.zeros(S)
    censored = np.zeros(S, dtype=int)
    for s in range(S):
        ts = [row[s][0] for row in trial_rows if row[s][0] is not None]
        ks = [row[s][1] for row in trial_rows]
        censored[s] = sum(1 for row in trial_rows if row[s][2])
        kbar[s] = _fmean(ks)
        if ts:
            tbar[s] = _fmean(ts)
            ci[s] = _ci95(ts)
    return CalibrationResult(sigma2_dbm=sigma2_dbm, normalization=normalization,
                             schedule=schedule, delta=delta, tbar=tbar, tbar_ci95=ci,
                             kbar=kbar, censored=censored, trials=len(trial_rows))


# --- CRD sweep ---------------------------------------------------------------

CRD_COLUMNS = ("sigma2_dbm", "normalization", "schedule", "delta", "subarray",
               "kbar", "tbar", "tbar_ci95", "t_up", "crd", "censored_trials", "trials")


def run_crd_sweep(config: ExperimentConfig, threads: int | None = None) -> SweepResult:
    """Computational relaxation degree across the noise grid.

    For each noise point, normalization and schedule: calibrate the average
    iteration count, evaluate the iteration upper bound at the measured mean
    active-user count, and report per-subarray and subarray-mean CRD.
    """
    config.validate()
    n_threads = threads if threads is not None else config.threads
    points = tuple(config.sigma2_dbm)
    rows = []
    for normalization in config.normalizations:
        jobs = [(config, normalization, t, points, tuple(config.schedules),
                 tuple(config.deltas)) for t in range(config.trials)]
        per_trial = _map_trials(_calibration_trial, jobs, n_threads)
        for sigma2_dbm in points:
            for schedule in config.schedules:
                for delta in config.deltas:
                    cal = _aggregate_calibration(
                        config, sigma2_dbm, normalization, schedule, delta,
                        [r[(sigma2_dbm, schedule, delta)] for r in per_trial])
                    rows.extend(_crd_rows(config, cal))
    return SweepResult(name="crd_sweep", columns=CRD_COLUMNS, rows=rows,
                       axis=points, trials=config.trials)


def _crd_rows(config: ExperimentConfig, cal: CalibrationResult) -> list:
    Ms = config.m // config.s
    rows = []
    crds, tups = [], []
    for s in range(config.s):
        t_up = (iteration_upper_bound(cal.schedule, Ms, cal.kbar[s])
                if cal.kbar[s] > 0 else float("nan"))
        c = (crd(cal.tbar[s], t_up)
             if not (math.isnan(cal.tbar[s]) or math.isnan(t_up)) else float("nan"))
        crds.append(c)
        tups.append(t_up)
        rows.append((cal.sigma2_dbm, cal.normalization.value, cal.schedule.value,
                     cal.delta, str(s), cal.kbar[s], cal.tbar[s], cal.tbar_ci95[s],
                     t_up, c, int(cal.censored[s]), cal.trials))
    rows.append((cal.sigma2_dbm, cal.normalization.value, cal.schedule.value,
                 cal.delta, "mean", _fmean(cal.kbar), _fmean(cal.tbar),
                 float("nan"), _fmean(tups), _fmean(crds),
                 int(cal.censored.sum()), cal.trials))
    return rows


def iteration_table_from_crd(sweep: SweepResult) -> dict:
    """(sigma2_dbm, normalization, schedule, delta) -> per-subarray iteration counts.

    Mean calibrated counts are rounded up to integers >= 1; subarrays that
    never had active users fall back to 1 (a solve there is a no-op anyway).
    """
    cols = {c: i for i, c in enumerate(sweep.columns)}
    table = {}
    for row in sweep.rows:
        if row[cols["subarray"]] == "mean":
            continue
        key = (float(row[cols["sigma2_dbm"]]), str(row[cols["normalization"]]),
               str(row[cols["schedule"]]), float(row[cols["delta"]]))
        tbar = row[cols["tbar"]]
        t = 1 if (tbar is None or math.isnan(tbar)) else max(1, math.ceil(tbar))
        table.setdefault(key, {})[int(row[cols["subarray"]])] = t
    return {key: tuple(v[s] for s in sorted(v)) for key, v in table.items()}


# --- SER sweep ---------------------------------------------------------------

SER_COLUMNS = ("sigma2_dbm", "normalization", "detector", "schedule", "delta",
               "iterations", "ser", "ser_ci95", "undetectable_rate",
               "decisions", "trials", "frames")


def run_ser_sweep(config: ExperimentConfig, iteration_table: dict | None = None,
                  threads: int | None = None) -> SweepResult:
    """Fused symbol error rate across the noise grid, rKA against exact RZF.

    iteration_table comes from `iteration_table_from_crd` (or explicit
    values); when omitted, the calibration is run internally first. The rKA
    and RZF chains share channels, symbols and noise per trial.
    """
    config.validate()
    n_threads = threads if threads is not None else config.threads
    points = tuple(config.sigma2_dbm)
    if iteration_table is None:
        iteration_table = iteration_table_from_crd(run_crd_sweep(config, threads=n_threads))
    rows = []
    for normalization in config.normalizations:
        jobs = [(config, normalization, t, points, iteration_table)
                for t in range(config.trials)]
        per_trial = _map_trials(_ser_trial, jobs, n_threads)
        rows.extend(_aggregate_ser(config, normalization, points, per_trial,
                                   iteration_table))
    return SweepResult(name="ser_sweep", columns=SER_COLUMNS, rows=rows,
                       axis=points, trials=config.trials)


def _detect_frame(combiners, real, x, y_per_subarray, p_mw, sigma2_mw) -> detection.FusedEstimate:
    S = real.geometry.S
    K = real.K
    est = np.zeros((S, K), dtype=complex)
    gam = np.zeros((S, K))
    for s in range(S):
        Hs = real.block(s)
        comb = combiners[s]
        raw = detection.subarray_estimates(comb, Hs, y_per_subarray[s])
        est[s] = detection.normalize_gains(raw, comb, Hs)
        gam[s] = baseline.sinr_per_user(comb, Hs, p_mw, sigma2_mw)
    return detection.fuse(est, gam)


def _ser_trial(config: ExperimentConfig, normalization: Normalization, trial: int,
               points: tuple, iteration_table: dict) -> dict:
    """Error counts for one trial at every noise point; worker-safe."""
    real = config.realization(trial, normalization)
    S = config.s
    Ms = config.m // S
    p = config.p_mw
    pts = detection.constellation_points(config.constellation)
    counts = {}
    rka_keys = [(schedule, delta) for schedule in config.schedules
                for delta in config.deltas]
    frames = []
    for fi in range(config.frames):
        sym_rng = streams.substream(config.seed, streams.TAG_SYMBOLS, trial, fi)
        x = pts[sym_rng.integers(0, len(pts), config.k)]
        noise = []
        for s in range(S):
            nrng = streams.substream(config.seed, streams.TAG_NOISE, trial, fi, s)
            noise.append((nrng.standard_normal(Ms) + 1j * nrng.standard_normal(Ms))
                         / np.sqrt(2.0))
        signal = [np.sqrt(p) * (real.block(s) @ x) for s in range(S)]
        frames.append((x, noise, signal))
    for sigma2_dbm in points:
        sigma2 = config.sigma2_mw(sigma2_dbm)
        xi = sigma2 / p
        chains = {(sigma2_dbm, "rzf", "", ""):
                  [baseline.rzf_combiner(real.block(s), xi) for s in range(S)]}
        for schedule, delta in rka_keys:
            t_key = (float(sigma2_dbm), normalization.value, schedule.value,
                     float(delta))
            try:
                t_by_sub = iteration_table[t_key]
            except KeyError:
                raise ConfigurationError(
                    f"iteration table has no entry for {t_key}") from None
            combs = []
            for s in range(S):
                Hs = real.block(s)
                c_counts = real.active_counts(s)
                if not np.any(c_counts > 0):
                    combs.append(baseline.Combiner(
                        V=np.zeros_like(Hs), active_users=np.array([], dtype=int),
                        xi=xi, W=np.zeros((config.k, config.k), dtype=complex)))
                    continue
                sch = kaczmarz.build_schedule(Hs, xi, schedule, active_counts=c_counts)
                eng = kaczmarz.BatchedRka(Hs, xi, sch, seed=config.seed,
                                          subarray=s, trial=trial)
                eng.advance_to(t_by_sub[s])
                combs.append(eng.combiner())
            chains[(sigma2_dbm, "rka", schedule.value, delta)] = combs
        for x, noise, signal in frames:
            y = [signal[s] + np.sqrt(sigma2) * noise[s] for s in range(S)]
            for key, combiners in chains.items():
                fused = _detect_frame(combiners, real, x, y, p, sigma2)
                _accumulate(counts, key, fused, x, config.constellation)
    return counts


def _accumulate(counts: dict, key, fused: detection.FusedEstimate, x, constellation):
    decided = detection.hard_decide(fused.x_hat, constellation)
    sent = detection.hard_decide(np.asarray(x), constellation)
    errs = int(np.count_nonzero(decided != sent))
    und = int(np.count_nonzero(fused.undetectable))
    total = len(x)
    prev = counts.get(key, (0, 0, 0))
    counts[key] = (prev[0] + errs, prev[1] + total, prev[2] + und)


def _aggregate_ser(config, normalization, points, per_trial) -> list:
    rows = []
    keys = [(sigma2_dbm, "rzf", "", "") for sigma2_dbm in points]
    keys += [(sigma2_dbm, "rka", schedule.value, delta)
             for sigma2_dbm in points for schedule in config.schedules
             for delta in config.deltas]
    for key in keys:
        sigma2_dbm, detector, schedule, delta = key
        errs = sum(t[key][0] for t in per_trial)
        total = sum(t[key][1] for t in per_trial)
        und = sum(t[key][2] for t in per_trial)
        ser = errs / total
        ci = 1.96 * math.sqrt(max(ser * (1 - ser), 1e-300) / total)
        rows.append((sigma2_dbm, normalization.value, detector, schedule,
                     delta if delta != "" else "", "", ser, ci, und / total,
                     total, config.trials, config.frames))
    return rows


# --- complexity sweep ---------------------------------------------------------

COMPLEXITY_COLUMNS = ("Ms", "Kbar", "scheme", "S", "T", "tau_ul",
                      "combining_mults", "combining_divs", "reception_mults",
                      "total", "t_crossover", "rka_beats_rzf")

ALL_SCHEMES = (Scheme.ZF, Scheme.RZF, Scheme.RKA_POWER, Scheme.RKA_UNIFORM,
               Scheme.RKA_ACTIVE_ANTENNAS)


def run_complexity_sweep(config: ExperimentConfig, ms_grid, kbar_grid,
                         fixed_t_policy=None) -> SweepResult:
    """Symbolic operation counts for all five schemes over an (Ms, Kbar) grid.

    fixed_t_policy fixes the rKA iteration count per grid point: an int, a
    {(Ms, Kbar): T} mapping, or a callable (Ms, Kbar) -> T. Defaults to the
    config's fixed iteration count. Pure formula evaluation, no sampling.
    """
    ms_grid = tuple(ms_grid)
    kbar_grid = tuple(kbar_grid)
    if not ms_grid or not kbar_grid:
        raise ConfigurationError("complexity sweep grids must be non-empty")
    if fixed_t_policy is None:
        fixed_t_policy = config.t_fixed
    if callable(fixed_t_policy):
        policy = fixed_t_policy
    elif isinstance(fixed_t_policy, dict):
        policy = lambda ms, kb: fixed_t_policy[(ms, kb)]
    else:
        policy = lambda ms, kb: fixed_t_policy
    rows = []
    for ms in ms_grid:
        for kb in kbar_grid:
            T = policy(ms, kb)
            rzf_total = table1_counts(Scheme.RZF, config.s, ms, kb,
                                      tau_ul=config.tau_ul).combining_total
            for scheme in ALL_SCHEMES:
                rep = table1_counts(scheme, config.s, ms, kb,
                                    T=T if scheme not in (Scheme.ZF, Scheme.RZF) else None,
                                    tau_ul=config.tau_ul)
                if scheme in (Scheme.ZF, Scheme.RZF):
                    t_cross, beats = "", ""
                else:
                    t_cross = iteration_upper_bound(scheme, ms, kb)
                    beats = rep.combining_total < rzf_total
                rows.append((ms, kb, scheme.value, config.s, rep.T, config.tau_ul,
                             rep.combining_mults, rep.combining_divs,
                             rep.reception_mults, rep.total, t_cross, beats))
    return SweepResult(name="complexity_sweep", columns=COMPLEXITY_COLUMNS,
                       rows=rows, axis=ms_grid, trials=0)
