"""Exact event-driven simulation of asynchronously sampled, delayed,
error-corrupted, zero-order-held multi-agent dynamics.

Between events every unit evolves exactly (to matrix-exponential accuracy)
under a constant drive: x(t + dt) = e^{A dt} x(t) + Phi(dt) v with
Phi(dt) = integral of e^{A s}. Sample events read the true state and apply
the error model; deliver events update the zero-order holds of every
controller using that channel simultaneously.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .graphs import InteractionGraph, build_algebra, is_connected
from .matan import LtiModel
from .sampling import (ChannelSchedule, ErrorModel, ScheduleError,
                       apply_additive_error, apply_multiplicative_error,
                       channel_rng, event_trigger_check, generate_schedule,
                       log_quantize, saturation_scale, validate_schedule)

# Deterministic tie-break at equal event times: a sample taken exactly at a
# delivery instant sees the freshly delivered hold.
RANK_DELIVER = 0
RANK_SAMPLE = 1
RANK_DWELL_EXPIRE = 2
RANK_TRIGGER_CHECK = 3
RANK_GRID = 4

MAX_EVENTS = 10_000_000
TRIGGER_REFINE_TOL = 1e-9

MODES = ("abstract_coupled", "relative_edges", "broadcast",
         "event_triggered", "saturated")


class ScenarioError(ValueError):
    """Inconsistent scenario description."""


@dataclass(frozen=True)
class ScheduleParams:
    h_min: float
    h_max: float
    tau_max: float


@dataclass(frozen=True)
class Scenario:
    """One runnable experiment."""

    mode: str
    model: LtiModel
    gain: np.ndarray
    x0: np.ndarray
    horizon: float
    seed: int = 0
    graph: InteractionGraph | None = None
    coupling: np.ndarray | None = None
    schedule: ScheduleParams | None = None
    schedules: tuple[ChannelSchedule, ...] | None = None
    error_model: ErrorModel = field(default_factory=ErrorModel.none)
    saturation: float | None = None
    input_delay: float = 0.0
    lyapunov_P: np.ndarray | None = None
    startup: str = "zero"  # or "first_sample"
    snapshot_points: int = 1000
    stop_at_consensus: bool = False
    consensus_tol: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ScenarioError(f"unknown mode {self.mode!r}")
        if self.startup not in ("zero", "first_sample"):
            raise ScenarioError("startup must be 'zero' or 'first_sample'")
        object.__setattr__(self, "gain", np.asarray(self.gain, dtype=float))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).ravel())
        if self.horizon < 0:
            raise ScenarioError("horizon must be nonnegative")
        if self.input_delay < 0:
            raise ScenarioError("input delay must be nonnegative")
        N = self.model.N
        if self.mode in ("relative_edges", "broadcast"):
            if self.graph is None:
                raise ScenarioError(f"mode {self.mode} requires a graph")
            if self.mode == "relative_edges" and not is_connected(self.graph):
                raise ScenarioError("relative_edges mode needs a connected graph")
            if self.gain.shape != (self.model.M, N):
                raise ScenarioError(f"gain must be {self.model.M}x{N}")
            if self.x0.size != self.graph.n * N:
                raise ScenarioError("x0 length must be n * N")
        else:
            if self.coupling is None:
                raise ScenarioError(f"mode {self.mode} requires a coupling matrix")
            G = np.asarray(self.coupling, dtype=float)
            if G.ndim != 2 or G.shape[0] != G.shape[1]:
                raise ScenarioError("coupling matrix must be square")
            object.__setattr__(self, "coupling", G)
            if self.gain.shape != (N, N):
                raise ScenarioError(f"gain must be {N}x{N} in {self.mode} mode")
            if self.x0.size != G.shape[0] * N:
                raise ScenarioError("x0 length must be m * N")

    @property
    def n_units(self) -> int:
        if self.mode in ("relative_edges", "broadcast"):
            return self.graph.n
        return self.coupling.shape[0]

    @property
    def n_channels(self) -> int:
        if self.mode == "relative_edges":
            return self.graph.m
        return self.n_units


@dataclass
class Trace:
    """Time-stamped log of one simulation run."""

    scenario: Scenario
    t: np.ndarray
    states: np.ndarray                 # (len, units * N)
    delta_sq: np.ndarray
    lyapunov: np.ndarray | None
    delta_tilde_sq: np.ndarray | None
    events: list                       # (time, channel, kind)
    drive_changes: list                # (time, drive matrix snapshot)
    held_changes: list                 # (time, channel, held value)
    consensus_time: float | None = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


class Propagator:
    """Exact flow maps (e^{A dt}, Phi(dt)) for one system matrix.

    Uses the eigendecomposition of A when it is well conditioned (covers
    normal and diagonal matrices, including A = 0, at a few microseconds per
    step); falls back to the block-matrix exponential otherwise.
    """

    COND_LIMIT = 1e6

    def __init__(self, A):
        self.A = np.asarray(A, dtype=float)
        self.n = self.A.shape[0]
        self._diag = False
        try:
            w, V = np.linalg.eig(self.A)
            Vi = np.linalg.inv(V)
            cond = np.linalg.cond(V)
            recon = np.linalg.norm(V @ np.diag(w) @ Vi - self.A)
            if cond < self.COND_LIMIT and recon <= 1e-10 * (1.0 + np.linalg.norm(self.A)):
                self.w, self.V, self.Vi = w, V, Vi
                self._diag = True
        except np.linalg.LinAlgError:
            pass
        if not self._diag:
            blk = np.zeros((2 * self.n, 2 * self.n))
            blk[: self.n, : self.n] = self.A
            blk[: self.n, self.n:] = np.eye(self.n)
            self._blk = blk

    def pair(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """(e^{A dt}, integral of e^{A s} over [0, dt]); dt may be negative."""
        if self._diag:
            wd = self.w * dt
            ew = np.exp(wd)
            small = np.abs(wd) < 1e-8
            phiw = np.where(small, dt * (1.0 + wd / 2.0 + wd * wd / 6.0),
                            np.divide(ew - 1.0, self.w,
                                      out=np.full_like(ew, dt), where=~small))
            expA = (self.V * ew) @ self.Vi
            phi = (self.V * phiw) @ self.Vi
            return expA.real, phi.real
        E = sla.expm(self._blk * dt)
        return E[: self.n, : self.n], E[: self.n, self.n:]


class _Engine:
    """Shared event-loop state for all simulation modes."""

    def __init__(self, s: Scenario):
        self.s = s
        N = s.model.N
        self.N = N
        self.units = s.n_units
        self.channels = s.n_channels
        self.X = s.x0.reshape(self.units, N).copy()
        self.prop = Propagator(s.model.A)
        self.consensus_mode = s.mode in ("relative_edges", "broadcast")
        self.kappa = self.X.mean(axis=0) if self.consensus_mode else None
        if s.mode == "relative_edges":
            self.algebra = build_algebra(s.graph)
            self.couple = self.algebra.incidence           # n x m
            self.KT = (s.model.B @ s.gain).T
        elif s.mode == "broadcast":
            self.algebra = build_algebra(s.graph)
            self.couple = self.algebra.graph_laplacian     # n x n
            self.KT = (s.model.B @ s.gain).T
        else:
            self.algebra = None
            self.couple = s.coupling                       # m x m
            self.KT = s.gain.T
        self.H = np.zeros((self.channels, N))
        self.H_live = np.zeros(self.channels, dtype=bool)
        self.drive = np.zeros((self.units, N))
        self.t = 0.0
        self.last_drive_change = 0.0
        self.heap = []
        self.seq = 0
        self.events = []
        self.drive_changes = [(0.0, self.drive.copy())]
        self.held_changes = []
        self.snap_t = []
        self.snap_x = []
        self.snap_dsq = []
        self.snap_v = [] if (s.mode == "relative_edges" and s.lyapunov_P is not None) else None
        self.track_tilde = s.mode == "broadcast"
        self.snap_tilde = [] if self.track_tilde else None
        if self.track_tilde:
            self.delta_tilde = self.X - self.kappa
        self.err_rngs = [channel_rng(s.seed, ch, stream=1)
                         for ch in range(self.channels)]
        d0 = self._delta()
        self.consensus_tol = (s.consensus_tol if s.consensus_tol is not None
                              else 1e-8 * (1.0 + float(np.sum(d0 * d0))))
        self.below_since = None
        self.consensus_time = None

    # -- queue ------------------------------------------------------------
    def push(self, time, rank, channel):
        heapq.heappush(self.heap, (time, rank, channel, self.seq))
        self.seq += 1
        if self.seq > MAX_EVENTS:
            raise RuntimeError("event budget exhausted (more than 1e7 events)")

    # -- state ------------------------------------------------------------
    def advance(self, t_new):
        dt = t_new - self.t
        if dt != 0.0:
            expA, phi = self.prop.pair(dt)
            self.X = self.X @ expA.T + self.drive @ phi.T
            if self.kappa is not None:
                self.kappa = expA @ self.kappa
            self.t = t_new

    def state_at(self, t_query):
        """State matrix at t_query under the current constant drive."""
        dt = t_query - self.t
        if dt == 0.0:
            return self.X
        expA, phi = self.prop.pair(dt)
        return self.X @ expA.T + self.drive @ phi.T

    def read_channel(self, ch, X=None):
        X = self.X if X is None else X
        if self.s.mode == "relative_edges":
            tail, head = self.s.graph.edges[ch]
            return X[head - 1] - X[tail - 1]
        return X[ch]

    def recompute_drive(self):
        H = self.H
        if self.s.mode == "saturated":
            H = H.copy()
            for j in range(self.channels):
                if self.H_live[j]:
                    _, H[j] = saturation_scale(H[j], self.s.saturation)
        couple = self.couple
        if self.s.mode == "broadcast" and not np.all(self.H_live):
            # Before an agent's first broadcast arrives, the pairwise
            # controller terms involving it are absent (not zero-valued):
            # restrict the Laplacian to edges with both holds live.
            couple = self._masked_laplacian()
        self.drive = -(couple @ (H @ self.KT))
        self.last_drive_change = self.t
        self.drive_changes.append((self.t, self.drive.copy()))

    def _masked_laplacian(self):
        n = self.units
        L = np.zeros((n, n))
        for i, j in self.s.graph.edges:
            if self.H_live[i - 1] and self.H_live[j - 1]:
                L[i - 1, i - 1] += 1.0
                L[j - 1, j - 1] += 1.0
                L[i - 1, j - 1] -= 1.0
                L[j - 1, i - 1] -= 1.0
        return L

    def set_hold(self, ch, value):
        self.H[ch] = value
        self.H_live[ch] = True
        self.held_changes.append((self.t, ch, np.array(value, copy=True)))
        self.recompute_drive()

    # -- measurement ------------------------------------------------------
    def measure(self, ch, value):
        em = self.s.error_model
        if em.kind == "none" or em.kind == "event_trigger":
            return np.array(value, copy=True)
        if em.kind == "multiplicative":
            measured, _ = apply_multiplicative_error(
                value, em.omega, self.err_rngs[ch], adversarial=em.adversarial)
            return measured
        if em.kind == "additive":
            measured, _ = apply_additive_error(
                value, em.delta_e, self.err_rngs[ch], adversarial=em.adversarial)
            return measured
        return log_quantize(value, em.quant_level)

    # -- metrics ----------------------------------------------------------
    def _delta(self):
        if self.consensus_mode:
            return self.X - self.kappa
        return self.X

    def snapshot(self):
        if self.snap_t and self.snap_t[-1] == self.t:
            # refresh in place so the post-event state wins at equal times
            idx = -1
            self.snap_x[idx] = self.X.ravel().copy()
            d = self._delta()
            self.snap_dsq[idx] = float(np.sum(d * d))
            if self.snap_v is not None:
                self.snap_v[idx] = self._lyapunov_value()
            if self.track_tilde:
                self.snap_tilde[idx] = float(np.sum(self.delta_tilde ** 2))
        else:
            self.snap_t.append(self.t)
            self.snap_x.append(self.X.ravel().copy())
            d = self._delta()
            self.snap_dsq.append(float(np.sum(d * d)))
            if self.snap_v is not None:
                self.snap_v.append(self._lyapunov_value())
            if self.track_tilde:
                self.snap_tilde.append(float(np.sum(self.delta_tilde ** 2)))
        self._consensus_watch(self.snap_dsq[-1])

    def _lyapunov_value(self):
        Z = self.couple.T @ self.X   # m x N rows of relative states
        return 0.5 * float(np.sum(Z * (Z @ self.s.lyapunov_P.T)))

    def _consensus_watch(self, dsq):
        if dsq < self.consensus_tol:
            if self.below_since is None:
                self.below_since = self.t
            elif self.consensus_time is None and self.t - self.below_since >= 1.0:
                self.consensus_time = self.t
        else:
            self.below_since = None
            if self.consensus_time is not None and self.t > self.consensus_time:
                self.consensus_time = None

    def finish(self) -> Trace:
        if self.t < self.s.horizon and not (
                self.s.stop_at_consensus and self.consensus_time is not None):
            self.advance(self.s.horizon)
            self.snapshot()
        return Trace(
            scenario=self.s,
            t=np.array(self.snap_t),
            states=np.array(self.snap_x) if self.snap_x else np.zeros((0, self.units * self.N)),
            delta_sq=np.array(self.snap_dsq),
            lyapunov=np.array(self.snap_v) if self.snap_v is not None else None,
            delta_tilde_sq=np.array(self.snap_tilde) if self.snap_tilde is not None else None,
            events=self.events,
            drive_changes=self.drive_changes,
            held_changes=self.held_changes,
            consensus_time=self.consensus_time,
        )


def _build_schedules(s: Scenario) -> list[ChannelSchedule]:
    if s.schedules is not None:
        scheds = list(s.schedules)
        if len(scheds) != s.n_channels:
            raise ScenarioError(f"expected {s.n_channels} schedules, got {len(scheds)}")
        for sc in scheds:
            # structural admissibility only; no (h, tau) caps are declared
            validate_schedule(sc, math.inf, math.inf)
    elif s.schedule is not None:
        p = s.schedule
        scheds = [generate_schedule(p.h_min, p.h_max, p.tau_max, s.horizon,
                                    s.seed, ch) for ch in range(s.n_channels)]
        for sc in scheds:
            validate_schedule(sc, p.h_max, p.tau_max)
    else:
        raise ScenarioError("scenario needs schedule parameters or explicit schedules")
    return scheds


def run(s: Scenario) -> Trace:
    """Simulate one scenario; dispatches to the event-triggered loop when the
    error model is of trigger type."""
    if s.error_model.kind == "event_trigger":
        return run_event_triggered(s)
    eng = _Engine(s)
    if s.horizon == 0.0:
        eng.snapshot()
        return eng.finish()
    scheds = _build_schedules(s)
    pending = {}
    pending_tilde = {}
    for ch, sc in enumerate(scheds):
        for tk in sc.sample_instants:
            if tk > s.horizon:
                break
            eng.push(tk, RANK_SAMPLE, ch)
    for tg in np.linspace(0.0, s.horizon, s.snapshot_points + 1):
        eng.push(tg, RANK_GRID, -1)
    counters = [0] * len(scheds)
    if s.startup == "first_sample":
        for ch in range(eng.channels):
            eng.set_hold(ch, eng.read_channel(ch))
    eng.snapshot()
    while eng.heap:
        te, rank, ch, _ = heapq.heappop(eng.heap)
        if te > s.horizon:
            break
        eng.advance(te)
        if rank == RANK_DELIVER:
            eng.set_hold(ch, pending.pop((ch, te)))
            if eng.track_tilde:
                eng.delta_tilde[ch] = pending_tilde.pop((ch, te))
            eng.events.append((te, ch, "deliver"))
        elif rank == RANK_SAMPLE:
            k = counters[ch]
            counters[ch] += 1
            value = eng.read_channel(ch)
            measured = eng.measure(ch, value)
            deliver_at = te + scheds[ch].delays[k] + s.input_delay
            pending[(ch, deliver_at)] = measured
            if eng.track_tilde:
                # disagreement at the sampling instant, held from delivery on
                pending_tilde[(ch, deliver_at)] = eng.X[ch] - eng.kappa
            eng.push(deliver_at, RANK_DELIVER, ch)
            eng.events.append((te, ch, "sample"))
        eng.snapshot()
        if s.stop_at_consensus and eng.consensus_time is not None:
            break
    return eng.finish()


def run_event_triggered(s: Scenario) -> Trace:
    """Event-triggered updates with a mandatory dwell time.

    Two flavors:
      * abstract monitoring (mode abstract_coupled or event_triggered):
        each subsystem monitors its own state continuously after the dwell
        window, with trigger checks every dwell/50 and bisection refinement
        of the crossing instant; updates are delay-free.
      * scheduled broadcasting (mode broadcast): each agent samples on its
        own admissible schedule and broadcasts, with delay, only when the
        (optionally capped) trigger condition holds at the sampling instant.
    """
    em = s.error_model
    if em.kind != "event_trigger":
        raise ScenarioError("run_event_triggered needs an event_trigger error model")
    if s.mode == "broadcast":
        return _run_triggered_broadcast(s)
    if s.mode not in ("abstract_coupled", "event_triggered"):
        raise ScenarioError("event triggering supports abstract or broadcast modes")
    if s.input_delay != 0.0:
        raise ScenarioError("abstract event-triggered mode excludes delays")

    eng = _Engine(s)
    if s.horizon == 0.0:
        eng.snapshot()
        return eng.finish()
    dwell = em.dwell
    dt_check = dwell / 50.0
    last_update = [0.0] * eng.channels
    # first update at t = 0 for every channel
    for ch in range(eng.channels):
        eng.set_hold(ch, eng.read_channel(ch))
        eng.events.append((0.0, ch, "update"))
        eng.push(dwell, RANK_DWELL_EXPIRE, ch)
    for tg in np.linspace(0.0, s.horizon, s.snapshot_points + 1):
        eng.push(tg, RANK_GRID, -1)
    eng.snapshot()

    def triggered(ch, X):
        return event_trigger_check(eng.read_channel(ch, X), eng.H[ch],
                                   em.omega, cap=em.cap)

    while eng.heap:
        te, rank, ch, _ = heapq.heappop(eng.heap)
        if te > s.horizon:
            break
        eng.advance(te)
        if rank in (RANK_DWELL_EXPIRE, RANK_TRIGGER_CHECK):
            if triggered(ch, eng.X):
                if rank == RANK_TRIGGER_CHECK:
                    # refine the crossing inside the constant-drive window
                    lo = max(te - dt_check, eng.last_drive_change,
                             last_update[ch] + dwell)
                    hi = te
                    if lo < hi and not triggered(ch, eng.state_at(lo)):
                        while hi - lo > TRIGGER_REFINE_TOL:
                            mid = 0.5 * (lo + hi)
                            if triggered(ch, eng.state_at(mid)):
                                hi = mid
                            else:
                                lo = mid
                        te = hi
                    else:
                        te = lo if lo < hi else te
                    eng.X = eng.state_at(te)
                    if eng.kappa is not None:
                        expA, _ = eng.prop.pair(te - eng.t)
                        eng.kappa = expA @ eng.kappa
                    eng.t = te
                eng.set_hold(ch, eng.read_channel(ch))
                eng.events.append((te, ch, "update"))
                last_update[ch] = te
                eng.push(te + dwell, RANK_DWELL_EXPIRE, ch)
            else:
                eng.push(te + dt_check, RANK_TRIGGER_CHECK, ch)
        eng.snapshot()
    return eng.finish()


def _run_triggered_broadcast(s: Scenario) -> Trace:
    em = s.error_model
    if s.schedule is None and s.schedules is None:
        raise ScenarioError("scheduled event triggering needs sampling schedules")
    eng = _Engine(s)
    if s.horizon == 0.0:
        eng.snapshot()
        return eng.finish()
    scheds = _build_schedules(s)
    if s.schedule is not None and em.dwell > s.schedule.h_min + 1e-12:
        raise ScenarioError("dwell time must not exceed the minimum sampling gap")
    pending = {}
    pending_tilde = {}
    counters = [0] * len(scheds)
    last_broadcast = [None] * eng.channels
    for ch, sc in enumerate(scheds):
        for tk in sc.sample_instants:
            if tk > s.horizon:
                break
            eng.push(tk, RANK_SAMPLE, ch)
    for tg in np.linspace(0.0, s.horizon, s.snapshot_points + 1):
        eng.push(tg, RANK_GRID, -1)
    eng.snapshot()
    while eng.heap:
        te, rank, ch, _ = heapq.heappop(eng.heap)
        if te > s.horizon:
            break
        eng.advance(te)
        if rank == RANK_DELIVER:
            eng.set_hold(ch, pending.pop((ch, te)))
            eng.delta_tilde[ch] = pending_tilde.pop((ch, te))
            eng.events.append((te, ch, "deliver"))
        elif rank == RANK_SAMPLE:
            k = counters[ch]
            counters[ch] += 1
            value = eng.read_channel(ch)
            fire = last_broadcast[ch] is None or event_trigger_check(
                value, last_broadcast[ch], em.omega, cap=em.cap)
            if fire:
                last_broadcast[ch] = np.array(value, copy=True)
                deliver_at = te + scheds[ch].delays[k] + s.input_delay
                pending[(ch, deliver_at)] = np.array(value, copy=True)
                pending_tilde[(ch, deliver_at)] = eng.X[ch] - eng.kappa
                eng.push(deliver_at, RANK_DELIVER, ch)
                eng.events.append((te, ch, "update"))
            eng.events.append((te, ch, "sample"))
        eng.snapshot()
        if s.stop_at_consensus and eng.consensus_time is not None:
            break
    return eng.finish()


def metrics(trace: Trace, window: float = 0.1) -> dict:
    """Derived metric series: per-window event counts, the consensus flag,
    and trailing minima of the consensus errors."""
    s = trace.scenario
    counts = {}
    if s.horizon > 0:
        edges = np.arange(0.0, s.horizon + window, window)
        for kind in ("sample", "deliver", "update"):
            times = [t for t, _, k in trace.events if k == kind]
            if times:
                counts[kind] = np.histogram(times, bins=edges)[0]
    out = {
        "delta_sq": trace.delta_sq,
        "lyapunov": trace.lyapunov,
        "delta_tilde_sq": trace.delta_tilde_sq,
        "event_counts": counts,
        "consensus": trace.consensus_time is not None,
        "consensus_time": trace.consensus_time,
        "final_delta_sq": float(trace.delta_sq[-1]) if len(trace.delta_sq) else None,
    }
    if trace.delta_tilde_sq is not None and len(trace.t):
        tail = trace.t >= trace.t[-1] - 1.0
        out["trailing_min_delta_tilde_sq"] = float(trace.delta_tilde_sq[tail].min())
    return out


def min_update_gap(trace: Trace) -> float:
    """Smallest gap between consecutive updates of the same channel in an
    event-triggered run (the Zeno-freeness witness)."""
    per_channel: dict[int, list[float]] = {}
    for t, ch, kind in trace.events:
        if kind == "update":
            per_channel.setdefault(ch, []).append(t)
    gaps = [np.diff(ts).min() for ts in per_channel.values() if len(ts) > 1]
    return float(min(gaps)) if gaps else math.inf


def average_state_error(trace: Trace) -> float:
    """Max over snapshots of || mean_i x_i(t) - e^{At} mean_i x_i(0) ||."""
    s = trace.scenario
    if s.mode not in ("relative_edges", "broadcast"):
        raise ScenarioError("average-state invariance applies to consensus modes")
    N = s.model.N
    n = s.graph.n
    prop = Propagator(s.model.A)
    mean0 = s.x0.reshape(n, N).mean(axis=0)
    worst = 0.0
    for t, row in zip(trace.t, trace.states):
        expA, _ = prop.pair(t)
        worst = max(worst, float(np.linalg.norm(
            row.reshape(n, N).mean(axis=0) - expA @ mean0)))
    return worst
