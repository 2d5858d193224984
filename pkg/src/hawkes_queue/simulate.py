"""Monte Carlo oracle: Ogata thinning for the Hawkes process and infinite-server
queues fed by it.

Randomness comes from a splitmix64 counter generator keyed by
(seed, replication, role). Roles: 0 arrivals, 1 service, 2 offspring of an
injected event, 3 service of those offspring. Each arrival's service draws
use their own substream keyed by the arrival index, so results do not depend
on how replications are chunked across threads or on the probe grid.

Queue statistics are read at fixed probe times; per-replication values are
kept so any moment can be formed afterwards.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .errors import EventCapExceeded, InsufficientReps, ConfigError
from .hawkes_core import HawkesParams
from .phase_type import PhaseTypeDist, embedded_chain

EVENT_CAP = 10_000_000

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)

ROLE_ARRIVALS = 0
ROLE_SERVICE = 1
ROLE_OFFSPRING = 2
ROLE_OFFSPRING_SERVICE = 3

# service kinds understood by the compiled kernels
_PH, _DET, _LOGN = 0, 1, 2


# ------------------------------------------------------------------- RNG

@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _key(seed, rep, role):
    k = _mix(seed ^ _GOLD)
    k = _mix(k + np.uint64(rep) * _GOLD + _ONE)
    return _mix(k ^ (np.uint64(role) * _M2 + np.uint64(7)))


@njit(cache=True, nogil=True)
def _sub(key, j):
    return _mix(key ^ _mix(np.uint64(j) + _GOLD))


@njit(cache=True, nogil=True)
def _next(st):
    st[0] += _GOLD
    return _mix(st[0])


@njit(cache=True, nogil=True)
def _unif(st):
    # open interval (0, 1)
    return (np.float64(_next(st) >> _S11) + 0.5) * 1.1102230246251565e-16


@njit(cache=True, nogil=True)
def _expo(st, rate):
    return -math.log(_unif(st)) / rate


@njit(cache=True, nogil=True)
def _normal(st):
    u1 = _unif(st)
    u2 = _unif(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, nogil=True)
def _pick(st, cum):
    u = _unif(st)
    for i in range(cum.shape[0]):
        if u < cum[i]:
            return i
    return cum.shape[0] - 1


def uniforms(seed, rep, role, size):
    """First ``size`` uniforms of the (seed, rep, role) stream (for tests)."""
    return _uniforms(np.uint64(seed), rep, role, size)


@njit(cache=True)
def _uniforms(seed, rep, role, size):
    st = np.empty(1, dtype=np.uint64)
    st[0] = _key(seed, rep, role)
    out = np.empty(size)
    for i in range(size):
        out[i] = _unif(st)
    return out


# --------------------------------------------------------------- services

@dataclass(frozen=True)
class Deterministic:
    length: float


@dataclass(frozen=True)
class Lognormal:
    """Lognormal service with the given mean and variance (variance 0 is deterministic)."""

    mean: float
    variance: float

    @property
    def log_params(self):
        s2 = math.log1p(self.variance / self.mean**2)
        return math.log(self.mean) - s2 / 2, math.sqrt(s2)


@dataclass(frozen=True)
class Hook:
    """User sampler: ``draw(rng: numpy.random.Generator) -> duration``. Runs in
    Python and reports total occupancy only."""

    draw: Callable


def _encode(service):
    """(kind, n_phases, rates, theta_cum, jump_cum, par) for the kernels."""
    empty = np.zeros(1)
    empty2 = np.zeros((1, 1))
    if isinstance(service, PhaseTypeDist):
        rates, P = embedded_chain(service)
        return (_PH, service.n, rates.astype(np.float64), np.cumsum(service.theta),
                np.cumsum(P, axis=1), empty)
    if isinstance(service, Deterministic):
        if not service.length > 0:
            raise ConfigError("deterministic service length must be positive")
        return _DET, 1, empty, empty, empty2, np.array([service.length, 0.0])
    if isinstance(service, Lognormal):
        if not (service.mean > 0 and service.variance >= 0):
            raise ConfigError("lognormal service needs mean > 0 and variance >= 0")
        mu, sig = service.log_params
        return _LOGN, 1, empty, empty, empty2, np.array([mu, sig])
    raise ConfigError(f"unsupported service sampler {service!r}")


@njit(cache=True, nogil=True)
def _add_interval(Q, r, probes, start, stop, phase):
    # probes in [start, stop)
    k = np.searchsorted(probes, start, side="left")
    while k < probes.shape[0] and probes[k] < stop:
        Q[r, k, phase] += 1
        k += 1


@njit(cache=True, nogil=True)
def _serve(st, a, kind, rates, tcum, jcum, par, Q, r, probes, n):
    """Sample one service starting at a, add it to Q at the probe times, and
    return its duration."""
    if kind == _DET:
        d = par[0]
        _add_interval(Q, r, probes, a, a + d, 0)
        return d
    if kind == _LOGN:
        if par[1] == 0.0:
            d = math.exp(par[0])
        else:
            d = math.exp(par[0] + par[1] * _normal(st))
        _add_interval(Q, r, probes, a, a + d, 0)
        return d
    ph = _pick(st, tcum)
    s = a
    while ph < n:
        h = _expo(st, rates[ph])
        _add_interval(Q, r, probes, s, s + h, ph)
        s += h
        ph = _pick(st, jcum[ph])
    return s - a


@njit(cache=True, nogil=True)
def _run_reps(seed, rep0, reps, ls, a, b, l0, horizon, probes, kind, n, rates, tcum,
              jcum, par, cap, lam_out, N_out, Q_out, quart):
    """Fill per-replication probe arrays. Returns -1, or the index of the first
    replication that hit the event cap."""
    K = probes.shape[0]
    st = np.empty(1, dtype=np.uint64)
    sv = np.empty(1, dtype=np.uint64)
    for r in range(reps):
        st[0] = _key(seed, rep0 + r, 0)
        skey = _key(seed, rep0 + r, 1)
        t = 0.0
        lam = l0
        cnt = 0
        k = 0
        while k < K and probes[k] <= 0.0:
            lam_out[r, k] = l0
            N_out[r, k] = 0
            k += 1
        while True:
            M = lam if lam > ls else ls
            if M <= 0.0:
                tn = math.inf
            else:
                tn = t + _expo(st, M)
            while k < K and probes[k] < tn:
                lam_out[r, k] = ls + (lam - ls) * math.exp(-b * (probes[k] - t))
                N_out[r, k] = cnt
                k += 1
            if tn > horizon:
                break
            lam = ls + (lam - ls) * math.exp(-b * (tn - t))
            t = tn
            if _unif(st) * M <= lam:
                q = int(4.0 * t / horizon)
                if q > 3:
                    q = 3
                quart[r, q] += 1
                sv[0] = _sub(skey, cnt)
                cnt += 1
                lam += a
                _serve(sv, t, kind, rates, tcum, jcum, par, Q_out, r, probes, n)
                if cnt >= cap:
                    return r
    return -1


@njit(cache=True, nogil=True)
def _hawkes_path(seed, rep, role, ls, a, b, l0, horizon, cap):
    st = np.empty(1, dtype=np.uint64)
    st[0] = _key(seed, rep, role)
    times = np.empty(1024)
    lams = np.empty(1024)
    t = 0.0
    lam = l0
    cnt = 0
    while True:
        M = lam if lam > ls else ls
        if M <= 0.0:
            break
        tn = t + _expo(st, M)
        if tn > horizon:
            break
        lam = ls + (lam - ls) * math.exp(-b * (tn - t))
        t = tn
        if _unif(st) * M <= lam:
            if cnt == times.shape[0]:
                times = np.concatenate((times, np.empty(cnt)))
                lams = np.concatenate((lams, np.empty(cnt)))
            times[cnt] = t
            lams[cnt] = lam
            cnt += 1
            lam += a
            if cnt >= cap:
                return times[:cnt], lams[:cnt], True
    return times[:cnt], lams[:cnt], False


@njit(cache=True, nogil=True)
def _service_durations(seed, rep, role, times, kind, rates, tcum, jcum, par, n):
    """Durations for the given arrivals, using the same substreams as _run_reps."""
    skey = _key(seed, rep, role)
    sv = np.empty(1, dtype=np.uint64)
    dummy_q = np.zeros((1, 1, max(n, 1)), dtype=np.int32)
    no_probes = np.empty(0)
    out = np.empty(times.shape[0])
    for j in range(times.shape[0]):
        sv[0] = _sub(skey, j)
        out[j] = _serve(sv, times[j], kind, rates, tcum, jcum, par, dummy_q, 0, no_probes, n)
    return out


@njit(cache=True, nogil=True)
def _phase_path(seed, rep, role, j, a, rates, tcum, jcum, n):
    skey = _key(seed, rep, role)
    sv = np.empty(1, dtype=np.uint64)
    sv[0] = _sub(skey, j)
    phases = []
    holds = []
    ph = _pick(sv, tcum)
    while ph < n:
        h = _expo(sv, rates[ph])
        phases.append(ph)
        holds.append(h)
        ph = _pick(sv, jcum[ph])
    return np.array(phases, dtype=np.int64), np.array(holds)


# ----------------------------------------------------------- public paths

@dataclass
class SamplePath:
    arrival_times: np.ndarray
    intensity_at_arrivals: np.ndarray
    service_durations: np.ndarray | None = None
    phase_paths: list | None = None
    params: HawkesParams | None = None
    horizon: float = 0.0

    def intensity(self, t):
        """Right-continuous intensity at time t."""
        p = self.params
        i = np.searchsorted(self.arrival_times, t, side="right")
        if i == 0:
            return p.baseline + (p.initial_intensity - p.baseline) * np.exp(-p.decay * t)
        s = self.arrival_times[i - 1]
        lam = self.intensity_at_arrivals[i - 1] + p.jump
        return p.baseline + (lam - p.baseline) * np.exp(-p.decay * (t - s))

    def count(self, t):
        return int(np.searchsorted(self.arrival_times, t, side="right"))

    def occupancy(self, t):
        """Per-phase occupancy for PH service, else a length-1 total."""
        if self.service_durations is None:
            raise ValueError("path has no service information")
        if self.phase_paths is None:
            a = self.arrival_times
            return np.array([np.sum((a <= t) & (t < a + self.service_durations))])
        n = self._n
        out = np.zeros(n, dtype=np.int64)
        for a, (ph, hold) in zip(self.arrival_times, self.phase_paths):
            if a > t:
                break
            ends = a + np.cumsum(hold)
            k = np.searchsorted(ends, t, side="right")
            if k < len(ph):
                out[ph[k]] += 1
        return out


def _params(p: HawkesParams):
    return p.baseline, p.jump, p.decay, p.initial_intensity


def simulate_hawkes(p: HawkesParams, horizon, seed, rep=0, cap=EVENT_CAP) -> SamplePath:
    if not horizon > 0:
        raise ConfigError("horizon must be positive")
    ls, a, b, l0 = _params(p)
    times, lams, hit = _hawkes_path(np.uint64(seed), rep, ROLE_ARRIVALS, ls, a, b, l0,
                                    float(horizon), cap)
    if hit:
        raise EventCapExceeded(f"more than {cap} events before the horizon")
    return SamplePath(times.copy(), lams.copy(), params=p, horizon=float(horizon))


def simulate_queue(p: HawkesParams, service, horizon, seed, rep=0, cap=EVENT_CAP) -> SamplePath:
    """One replication with service attached; occupancy(t) reads the path."""
    path = simulate_hawkes(p, horizon, seed, rep, cap)
    if isinstance(service, Hook):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, rep, ROLE_SERVICE])))
        path.service_durations = np.array([float(service.draw(rng)) for _ in path.arrival_times])
        return path
    kind, n, rates, tcum, jcum, par = _encode(service)
    path.service_durations = _service_durations(np.uint64(seed), rep, ROLE_SERVICE, path.arrival_times,
                                                kind, rates, tcum, jcum, par, n)
    if kind == _PH:
        path.phase_paths = [_phase_path(np.uint64(seed), rep, ROLE_SERVICE, j, t, rates, tcum, jcum, n)
                            for j, t in enumerate(path.arrival_times)]
        path._n = n
    return path


# ------------------------------------------------------------ replications

@dataclass
class ReplicationData:
    """Per-replication values at the probe times."""

    probes: np.ndarray
    lam: np.ndarray          # (reps, K)
    N: np.ndarray            # (reps, K)
    Q: np.ndarray            # (reps, K, n)
    quartiles: np.ndarray    # (reps, 4) arrival counts per quarter of the horizon
    horizon: float

    @property
    def reps(self):
        return self.lam.shape[0]

    def at(self, t):
        k = np.searchsorted(self.probes, t)
        if k >= len(self.probes) or not np.isclose(self.probes[k], t, rtol=0, atol=1e-12):
            raise ConfigError(f"time {t} is not a probe time")
        return k


def _hook_reps(p, service, horizon, probes, seed, rep0, reps, cap):
    K = len(probes)
    lam = np.zeros((reps, K))
    N = np.zeros((reps, K), dtype=np.int64)
    Q = np.zeros((reps, K, 1), dtype=np.int32)
    quart = np.zeros((reps, 4), dtype=np.int64)
    for r in range(reps):
        path = simulate_queue(p, service, horizon, seed, rep0 + r, cap)
        for k, t in enumerate(probes):
            lam[r, k] = path.intensity(t)
            N[r, k] = path.count(t)
            Q[r, k, 0] = path.occupancy(t)[0]
        q = np.minimum((4 * path.arrival_times / horizon).astype(int), 3)
        quart[r] = np.bincount(q, minlength=4)
    return lam, N, Q, quart


def run_replications(p: HawkesParams, service, horizon, probes, reps, seed=0, n_jobs=1,
                     cap=EVENT_CAP) -> ReplicationData:
    """Simulate ``reps`` replications and record (lambda, N, Q) at the probes.

    Output is identical for any n_jobs: each replication owns its substreams
    and chunks are concatenated in replication order.
    """
    if reps < 2:
        raise InsufficientReps("at least 2 replications are needed")
    probes = np.sort(np.atleast_1d(np.asarray(probes, dtype=float)))
    if probes.size == 0:
        raise ConfigError("probe grid is empty")
    horizon = float(max(horizon, probes[-1]))
    if isinstance(service, Hook):
        lam, N, Q, quart = _hook_reps(p, service, horizon, probes, seed, 0, reps, cap)
        return ReplicationData(probes, lam, N, Q, quart, horizon)
    kind, n, rates, tcum, jcum, par = _encode(service)
    K = len(probes)
    lam = np.zeros((reps, K))
    N = np.zeros((reps, K), dtype=np.int64)
    Q = np.zeros((reps, K, n), dtype=np.int32)
    quart = np.zeros((reps, 4), dtype=np.int64)
    ls, a, b, l0 = _params(p)
    s = np.uint64(seed)
    n_jobs = max(1, int(n_jobs))
    bounds = np.linspace(0, reps, n_jobs + 1).astype(int)

    def work(c):
        lo, hi = bounds[c], bounds[c + 1]
        if hi <= lo:
            return -1
        bad = _run_reps(s, lo, hi - lo, ls, a, b, l0, horizon, probes, kind, n, rates, tcum,
                        jcum, par, cap, lam[lo:hi], N[lo:hi], Q[lo:hi], quart[lo:hi])
        return -1 if bad < 0 else lo + bad

    if n_jobs == 1:
        flags = [work(0)]
    else:
        with ThreadPoolExecutor(n_jobs) as ex:
            flags = list(ex.map(work, range(n_jobs)))
    bad = [f for f in flags if f >= 0]
    if bad:
        raise EventCapExceeded(f"replication {min(bad)} exceeded {cap} events")
    return ReplicationData(probes, lam, N, Q, quart, horizon)


# --------------------------------------------------------------- estimates

@dataclass(frozen=True)
class EstimateReport:
    point: float
    std_error: float
    replications: int

    def z(self, exact):
        if self.std_error == 0:
            return 0.0 if exact == self.point else math.copysign(math.inf, self.point - exact)
        return (self.point - exact) / self.std_error


@dataclass(frozen=True)
class Statistic:
    """What to estimate. ``phase``/``phase2`` select queue phases (None: total)."""

    name: str
    t: float = 0.0
    tau: float = 0.0
    phase: int | None = None
    phase2: int | None = None
    delta: tuple = field(default_factory=tuple)

    NAMES = ("mean_q", "var_q", "cov_lq", "cov_qq", "autocov", "mean_N", "var_N",
             "autocov_N", "mgf", "quartile", "mean_lambda", "var_lambda")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise ConfigError(f"unknown statistic {self.name!r}")

    def probes(self):
        if self.name == "quartile":
            return []
        if self.name in ("autocov", "autocov_N"):
            return [self.t - self.tau, self.t]
        return [self.t]


def _mean_report(x):
    x = np.asarray(x, dtype=float)
    n = len(x)
    return EstimateReport(float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)), n)


def _cov_report(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    z = (x - x.mean()) * (y - y.mean())
    return EstimateReport(float(z.sum() / (n - 1)), float(z.std(ddof=1) / math.sqrt(n)), n)


def _q(data, k, phase):
    Q = data.Q[:, k, :]
    return Q.sum(axis=1) if phase is None else Q[:, phase]


def evaluate(data: ReplicationData, stat: Statistic) -> EstimateReport:
    """Estimate a statistic from stored replications."""
    nm = stat.name
    if nm == "quartile":
        q = data.quartiles
        tot = q.sum(axis=1)
        hit = (tot > 0) & (2 * q.max(axis=1) > tot)
        return _mean_report(hit.astype(float))
    k = data.at(stat.t)
    if nm == "mean_q":
        return _mean_report(_q(data, k, stat.phase))
    if nm == "var_q":
        x = _q(data, k, stat.phase)
        return _cov_report(x, x)
    if nm == "cov_lq":
        return _cov_report(data.lam[:, k], _q(data, k, stat.phase))
    if nm == "cov_qq":
        return _cov_report(_q(data, k, stat.phase), _q(data, k, stat.phase2))
    if nm == "mean_N":
        return _mean_report(data.N[:, k])
    if nm == "var_N":
        return _cov_report(data.N[:, k], data.N[:, k])
    if nm == "mean_lambda":
        return _mean_report(data.lam[:, k])
    if nm == "var_lambda":
        return _cov_report(data.lam[:, k], data.lam[:, k])
    if nm in ("autocov", "autocov_N"):
        if stat.tau > stat.t:
            return EstimateReport(0.0, 0.0, data.reps)
        k0 = data.at(stat.t - stat.tau)
        if nm == "autocov_N":
            return _cov_report(data.N[:, k], data.N[:, k0])
        return _cov_report(_q(data, k, stat.phase), _q(data, k0, stat.phase2))
    if nm == "mgf":
        d = np.asarray(stat.delta, dtype=float)
        expo = d[0] * data.lam[:, k] + data.Q[:, k, :] @ d[1:]
        return _mean_report(np.exp(expo))
    raise ConfigError(f"unknown statistic {nm!r}")


def estimate(p: HawkesParams, service, horizon, reps, statistic: Statistic, seed=0,
             n_jobs=1) -> EstimateReport:
    if reps < 2:
        raise InsufficientReps("at least 2 replications are needed")
    probes = statistic.probes() or [horizon]
    data = run_replications(p, service, horizon, probes, reps, seed, n_jobs)
    return evaluate(data, statistic)


def quartile_fraction(p: HawkesParams, horizon, reps, seed=0, n_jobs=1) -> EstimateReport:
    """Fraction of runs in which more than half of the arrivals in [0, horizon]
    fall in a single quarter of the horizon (runs without arrivals do not count)."""
    return estimate(p, Deterministic(1e-9), horizon, reps, Statistic("quartile"), seed, n_jobs)


# ------------------------------------------------------ injected-click pairs

@njit(cache=True, nogil=True)
def _click_reps(seed, rep0, reps, a, b, mu, horizon, cap, gap_n, gap_dwell):
    # offspring of one extra event at time 0: a Hawkes cluster with zero
    # baseline and initial intensity alpha. The baseline stream is shared with
    # the unperturbed run, so it cancels exactly from both gaps.
    st = np.empty(1, dtype=np.uint64)
    sv = np.empty(1, dtype=np.uint64)
    for r in range(reps):
        st[0] = _key(seed, rep0 + r, ROLE_OFFSPRING)
        skey = _key(seed, rep0 + r, ROLE_OFFSPRING_SERVICE)
        sv[0] = _sub(skey, np.uint64(0xFFFFFFFF))
        d0 = _expo(sv, mu)
        dwell = min(d0, horizon)
        t = 0.0
        lam = a
        cnt = 0
        while lam > 0.0:
            tn = t + _expo(st, lam)
            if tn > horizon:
                break
            lam_n = lam * math.exp(-b * (tn - t))
            t = tn
            if _unif(st) * lam <= lam_n:
                sv[0] = _sub(skey, cnt)
                d = _expo(sv, mu)
                dwell += min(d, horizon - t)
                cnt += 1
                lam = lam_n + a
                if cnt >= cap:
                    return r
            else:
                lam = lam_n
        gap_n[r] = 1 + cnt
        gap_dwell[r] = dwell
    return -1


def click_gap(p: HawkesParams, mu, horizon, reps, seed=0, cap=EVENT_CAP):
    """Paired estimates of E[N^_T] - E[N_T] and of the dwell-time gap
    int_0^T (E[Q^_t] - E[Q_t]) dt for one extra event at time 0."""
    if reps < 2:
        raise InsufficientReps("at least 2 replications are needed")
    gn = np.zeros(reps)
    gd = np.zeros(reps)
    bad = _click_reps(np.uint64(seed), 0, reps, p.jump, p.decay, float(mu), float(horizon), cap, gn, gd)
    if bad >= 0:
        raise EventCapExceeded(f"replication {bad} exceeded {cap} events")
    return _mean_report(gn), _mean_report(gd)
