"""Cycle-jump engines: adaptive (ACJ), fixed-size (FCJ), extrapolation-criterion (ECJ).

The adaptive scheme picks a global monitor per stage of the fatigue life
(max alpha_bar, max d, crack length), fits a parabola to its recent history
and skips as many cycles as needed for the monitor to advance by a target
increment. The skipped state is predicted by a backward finite-difference
extrapolation of alpha_bar and then validated by a trial cycle.

All engines share one driver, :func:`run_engine`; HF is the same loop with
jumping disabled.
"""
from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .cycle import CycleFailure, CycleRecord, Simulation, SystemState

# backward FD weights over cycles (N-3, N-2, N-1, N)
FD_FIRST = np.array([-2.0, 9.0, -18.0, 11.0]) / 6.0
FD_SECOND = np.array([-1.0, 4.0, -5.0, 2.0]) / 2.0

_C2_ZERO = 1e-14
_ECJ_ZERO = 1e-14


class Stage(IntEnum):
    I = 1
    II = 2
    III = 3


class InsufficientData(ValueError):
    """Not enough monitor points for a quadratic fit."""


# outcomes of a jump decision
JUMPED = "Jumped"
NO_JUMP = "NoJump"
REJECTED_NONCONVERGED = "RejectedNonConverged"
REJECTED_OVERSHOOT = "RejectedOvershoot"
HALVED_FALLBACK = "HalvedFallback"
LINEAR_FALLBACK = "LinearFallback"


@dataclass(frozen=True)
class AcjSettings:
    N_s: int = 4
    lambda_II: float = 1.0
    lambda_III: float = 1.0
    d_loc_tol: float = 0.01
    overshoot_factor: float = 1.5
    stage_II_base_increment: float = 0.02

    def __post_init__(self):
        if self.N_s != 4:
            raise ValueError("the finite-difference stencil requires N_s = 4")
        for name in ("lambda_II", "lambda_III", "d_loc_tol", "overshoot_factor", "stage_II_base_increment"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


# ----------------------------------------------------------------------
# Stage logic
# ----------------------------------------------------------------------
def detect_stage(max_alpha_bar: float, max_d: float, alpha_th: float,
                 settings: AcjSettings = AcjSettings()) -> Stage:
    if max_alpha_bar <= alpha_th:
        return Stage.I
    if max_d <= 1.0 - settings.d_loc_tol:
        return Stage.II
    return Stage.III


def target_increment(stage: Stage, settings: AcjSettings = AcjSettings(), max_alpha_bar: float = None,
                     alpha_th: float = None, ell: float = None) -> float:
    """Target growth of the stage monitor during one jump."""
    if stage == Stage.I:
        if max_alpha_bar is None or alpha_th is None:
            raise ValueError("stage I needs max_alpha_bar and alpha_th")
        if max_alpha_bar >= alpha_th:
            raise ValueError("stage I target requested above the fatigue threshold")
        return alpha_th - max_alpha_bar
    if stage == Stage.II:
        return settings.lambda_II * settings.stage_II_base_increment
    if ell is None:
        raise ValueError("stage III needs the length scale")
    return settings.lambda_III * ell / 2.0


def monitor_value(stage: Stage, record: CycleRecord) -> float:
    """Global monitor of a stage read from a cycle record.

    In stage III this is the corrected smeared length before clamping at
    zero: while the process zone at a fresh crack is still smaller than the
    tip allowance the length is negative but already growing.
    """
    if stage == Stage.I:
        return record.max_alpha_bar
    if stage == Stage.II:
        return record.max_d
    if math.isfinite(record.a_signed):
        return record.a_signed
    return record.a_smeared


def estimate_resolved(lambda_II: float, lambda_III: float, N_s: int, a_u_over_ell: float) -> float:
    """Rough number of cycles the adaptive scheme has to resolve over a whole life."""
    if lambda_II <= 0 or lambda_III <= 0 or N_s <= 0 or a_u_over_ell < 0:
        raise ValueError("invalid inputs")
    return N_s + 0.99 / (lambda_II * 0.02) * N_s + a_u_over_ell / (lambda_III * 0.5) * N_s


# ----------------------------------------------------------------------
# Monitor history and fitting
# ----------------------------------------------------------------------
class MonitorHistory:
    """Recent ``(N, Lambda)`` pairs and the last ``N_s`` alpha_bar fields."""

    def __init__(self, N_s: int = 4):
        self.N_s = N_s
        self.points = deque(maxlen=3 * N_s)
        self.alpha = deque(maxlen=N_s)

    def push(self, N: int, value: float, alpha_bar=None):
        if self.points and N <= self.points[-1][0]:
            raise ValueError("cycle numbers must increase")
        self.points.append((int(N), float(value)))
        if alpha_bar is not None:
            if self.alpha and N != self.alpha[-1][0] + 1:
                self.alpha.clear()
            self.alpha.append((int(N), np.array(alpha_bar, copy=True)))

    def reset_monitor(self):
        self.points.clear()

    def reset_alpha(self):
        self.alpha.clear()

    @property
    def alpha_ready(self) -> bool:
        return len(self.alpha) == self.N_s

    def alpha_stack(self) -> np.ndarray:
        if not self.alpha_ready:
            raise InsufficientData("alpha_bar buffer is not full")
        return np.stack([a for _, a in self.alpha])

    def arrays(self):
        N = np.array([p[0] for p in self.points], dtype=float)
        L = np.array([p[1] for p in self.points], dtype=float)
        return N, L

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class FitCoefficients:
    """Quadratic ``c0 + c1 t + c2 t^2`` and linear ``lin0 + lin1 t`` fits in ``t = N - center``."""

    c0: float
    c1: float
    c2: float
    lin0: float = float("nan")
    lin1: float = float("nan")
    center: float = 0.0

    def shifted(self, new_center: float) -> "FitCoefficients":
        s = new_center - self.center
        return FitCoefficients(self.c0 + self.c1 * s + self.c2 * s * s, self.c1 + 2.0 * self.c2 * s, self.c2,
                               self.lin0 + self.lin1 * s, self.lin1, new_center)

    def __call__(self, N):
        t = np.asarray(N, dtype=float) - self.center
        return self.c0 + self.c1 * t + self.c2 * t * t


def fit_quadratic(N, Lambda=None, center=None) -> FitCoefficients:
    """Least-squares parabola (and line) through monitor points.

    ``N`` may be a :class:`MonitorHistory`. With ``center=None`` the fit is
    expressed about the last cycle, which keeps it well conditioned for large N.
    """
    if isinstance(N, MonitorHistory):
        N, Lambda = N.arrays()
    N = np.asarray(N, dtype=float)
    L = np.asarray(Lambda, dtype=float)
    if len(N) < 3:
        raise InsufficientData(f"need 3 points for a quadratic fit, got {len(N)}")
    c = float(N[-1]) if center is None else float(center)
    t = N - c
    A = np.stack([np.ones_like(t), t, t * t], axis=1)
    q = np.linalg.lstsq(A, L, rcond=None)[0]
    lin = np.linalg.lstsq(A[:, :2], L, rcond=None)[0]
    return FitCoefficients(float(q[0]), float(q[1]), float(q[2]), float(lin[0]), float(lin[1]), c)


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class JumpSize:
    """Signed jump size with the branch that produced it."""

    delta_N: int
    branch: str            # "quadratic", "LinearFallback", "HalvedFallback"
    N_bar: float = float("nan")


def compute_jump(fit: FitCoefficients, Lambda_now: float, N_now: int, target: float,
                 last_jump: int = None) -> JumpSize:
    """Cycle count at which the fitted monitor reaches ``Lambda_now + target``.

    Negative discriminant falls back to the linear fit; a negative result
    (or a non-increasing linear fit) falls back to half of ``last_jump``.
    """
    p = fit.shifted(float(N_now))
    c = p.c0 - Lambda_now - target
    branch = "quadratic"
    t = None
    if abs(p.c2) <= _C2_ZERO:
        if p.c1 > 0:
            t = -c / p.c1
    else:
        disc = p.c1 * p.c1 - 4.0 * p.c2 * c
        if disc < 0:
            branch = LINEAR_FALLBACK
            if p.lin1 > 0:
                t = (Lambda_now + target - p.lin0) / p.lin1
        else:
            sq = math.sqrt(disc)
            # numerically stable form of (-c1 + sqrt(disc)) / (2 c2)
            t = -2.0 * c / (p.c1 + sq) if p.c1 >= 0 else (-p.c1 + sq) / (2.0 * p.c2)
    if t is not None and np.isfinite(t):
        dN = round_half_away(t)
        if dN >= 0:
            return JumpSize(dN, branch, N_now + t)
    half = 0 if not last_jump else int(last_jump) // 2
    return JumpSize(half, HALVED_FALLBACK, float("nan"))


def extrapolate_alpha(buffer, delta_N) -> np.ndarray:
    """Second-order backward-FD prediction of alpha_bar ``delta_N`` cycles ahead.

    ``buffer`` holds the fields of four consecutive cycles, oldest first.
    Negative predicted increments are dropped.
    """
    buf = np.asarray(buffer, dtype=float)
    if buf.shape[0] != 4:
        raise InsufficientData("extrapolation needs exactly four consecutive fields")
    d1 = np.tensordot(FD_FIRST, buf, axes=1)
    d2 = np.tensordot(FD_SECOND, buf, axes=1)
    inc = d1 * delta_N + d2 * delta_N * delta_N
    return buf[-1] + np.maximum(inc, 0.0)


def ecj_jump(alpha_fields, q: float, dN_max: int) -> int:
    """Jump size from the local curvature of alpha_bar over three consecutive cycles.

    Points whose increment does not change (zero denominator) are skipped;
    if none remain the maximum jump is returned.
    """
    a = np.asarray(alpha_fields, dtype=float)
    if a.shape[0] != 3:
        raise ValueError("ECJ needs three consecutive fields")
    inc_new = a[2] - a[1]
    inc_old = a[1] - a[0]
    den = np.abs(inc_new - inc_old)
    scale = np.maximum(np.abs(inc_new), np.abs(inc_old))
    valid = den > _ECJ_ZERO * np.maximum(scale, np.finfo(float).tiny)
    if not valid.any():
        return int(dN_max)
    ratio = q * np.min(np.abs(inc_new[valid]) / den[valid])
    return int(math.floor(min(ratio, dN_max)))


# ----------------------------------------------------------------------
# Engines
# ----------------------------------------------------------------------
@dataclass
class EngineSettings:
    """Which engine to run and its knobs.

    ``kind`` is one of ``"HF"``, ``"ACJ"``, ``"FCJ"``, ``"ECJ"``.
    """

    kind: str = "ACJ"
    acj: AcjSettings = field(default_factory=AcjSettings)
    fixed_jump: int = 100
    ecj_q: float = 1.0
    ecj_max_jump: int = 1000
    max_cycles: int = 10 ** 7
    max_wall_seconds: float = float("inf")
    store_alpha_diagnostics: bool = False

    def __post_init__(self):
        if self.kind not in ("HF", "ACJ", "FCJ", "ECJ"):
            raise ValueError(f"unknown engine {self.kind!r}")
        if self.kind == "FCJ" and self.fixed_jump < 2:
            raise ValueError("FCJ needs a jump of at least 2 cycles")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be positive")


@dataclass
class JumpDecision:
    N_before: int
    stage: Stage
    target_increment: float
    delta_N: int
    outcome: str
    observed_increment: float = float("nan")
    branch: str = ""


@dataclass
class AlphaDiagnostic:
    """Prediction-vs-computation data for the cycles after one accepted jump."""

    N_jump: int
    delta_N: int
    stage: Stage
    buffer: np.ndarray
    computed: list = field(default_factory=list)    # (N, alpha_bar) after the trial


@dataclass
class Trace:
    engine: str
    records: list = field(default_factory=list)          # kept cycles, trials included
    rejected: list = field(default_factory=list)         # records of rejected trials
    jumps: list = field(default_factory=list)
    N_final: int = 0
    N_u: int = None
    failure_mode: str = None          # "crack_length", "nonconvergence", "budget"
    wall_time: float = 0.0
    flagged_invalid: bool = False
    hf_lock_events: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    final_state: SystemState = None

    @property
    def N_resolved(self) -> int:
        return len(self.records)

    @property
    def jumped_cycles(self) -> int:
        return sum(j.delta_N - 1 for j in self.jumps if j.outcome == JUMPED)

    @property
    def rejected_trials(self) -> int:
        return len(self.rejected)


class _Driver:
    """State machine shared by all engines."""

    def __init__(self, sim: Simulation, settings: EngineSettings):
        self.sim = sim
        self.s = settings
        self.acj = settings.acj
        self.trace = Trace(settings.kind)
        self.hist = MonitorHistory(self.acj.N_s)
        self.stage = None
        self.since_jump = 0
        self.required = self.acj.N_s
        self.last_jump = None
        self.hf_locked_stage = None
        self.diag = None
        self.t0 = time.perf_counter()

    # -- helpers --------------------------------------------------------
    def _stage_of(self, rec):
        return detect_stage(rec.max_alpha_bar, rec.max_d, self.sim.fatigue.alpha_th, self.acj)

    def _keep(self, state, rec):
        """Register a kept cycle (resolved or accepted trial)."""
        self.trace.records.append(rec)
        st = self._stage_of(rec)
        if st != self.stage:
            self.hist.reset_monitor()
            self.stage = st
        self.hist.push(rec.N, monitor_value(st, rec), state.alpha_bar)
        self.since_jump += 1
        if self.diag is not None:
            self.diag.computed.append((rec.N, state.alpha_bar.copy()))
            if len(self.diag.computed) >= self.acj.N_s - 1:
                self.trace.diagnostics.append(self.diag)
                self.diag = None

    def _out_of_budget(self, N):
        if N >= self.s.max_cycles:
            return True
        return time.perf_counter() - self.t0 > self.s.max_wall_seconds

    def _finish(self, state, N_u=None, mode=None):
        tr = self.trace
        tr.final_state = state
        tr.N_final = int(state.N)
        tr.N_u = N_u
        tr.failure_mode = mode
        tr.wall_time = time.perf_counter() - self.t0
        return tr

    # -- main loop -----------------------------------------------------
    def run(self, state: SystemState = None) -> Trace:
        sim = self.sim
        state = state or sim.initial_state()
        while True:
            try:
                state_new, rec = sim.solve_cycle(state)
            except CycleFailure:
                return self._finish(state, state.N + 1, "nonconvergence")
            state = state_new
            self._keep(state, rec)
            if sim.is_failed(rec):
                return self._finish(state, rec.N, "crack_length")
            if self._out_of_budget(state.N):
                return self._finish(state, None, "budget")
            if self.s.kind == "HF" or self.since_jump < self.required or not self.hist.alpha_ready:
                continue
            state = self._try_jump(state, rec)
            if state.N > rec.N:
                last = self.trace.records[-1]
                if sim.is_failed(last):
                    return self._finish(state, last.N, "crack_length")
                if self._out_of_budget(state.N):
                    return self._finish(state, None, "budget")

    # -- jumping -------------------------------------------------------
    def _proposal(self, rec):
        """Initial jump size and target for the current engine; None if no attempt."""
        st = self.stage
        kind = self.s.kind
        if kind == "FCJ":
            return self.s.fixed_jump, float("nan"), ""
        if kind == "ECJ":
            dN = ecj_jump(self.hist.alpha_stack()[-3:], self.s.ecj_q, self.s.ecj_max_jump)
            return dN, float("nan"), ""
        if self.hf_locked_stage == st or len(self.hist) < self.acj.N_s:
            return None
        target = target_increment(st, self.acj, rec.max_alpha_bar, self.sim.fatigue.alpha_th, self.sim.material.ell)
        fit = fit_quadratic(self.hist)
        js = compute_jump(fit, monitor_value(st, rec), rec.N, target, self.last_jump)
        return js.delta_N, target, js.branch

    def _try_jump(self, state: SystemState, rec: CycleRecord) -> SystemState:
        prop = self._proposal(rec)
        if prop is None:
            return state
        dN, target, branch = prop
        st = self.stage
        lam_now = monitor_value(st, rec)
        buffer = self.hist.alpha_stack()
        adaptive = self.s.kind == "ACJ"
        while True:
            if dN < 2:
                self.trace.jumps.append(JumpDecision(rec.N, st, target, dN, NO_JUMP, branch=branch))
                self.since_jump = self.required
                return state
            trial = state.copy()
            trial.alpha_bar = extrapolate_alpha(buffer, dN)
            trial.N = state.N + dN - 1
            try:
                new, trec = self.sim.solve_trial_cycle(trial)
                failed = self.sim.is_failed(trec)
            except CycleFailure:
                new, trec, failed = None, None, True
            if failed:
                if trec is not None:
                    self.trace.rejected.append(trec)
                self.trace.jumps.append(JumpDecision(rec.N, st, target, dN, REJECTED_NONCONVERGED, branch=branch))
                if not adaptive:
                    self.trace.flagged_invalid = True
                    self.since_jump = 0
                    self.required = self.acj.N_s
                    return state
                base = dN if self.last_jump is None else min(self.last_jump, dN)
                dN = base // 2
                if dN < 2:
                    self.hf_locked_stage = st
                    self.trace.hf_lock_events.append((rec.N, st))
                continue
            observed = monitor_value(st, trec) - lam_now
            if adaptive and observed > self.acj.overshoot_factor * target:
                self.trace.rejected.append(trec)
                self.trace.jumps.append(JumpDecision(rec.N, st, target, dN, REJECTED_OVERSHOOT, observed, branch))
                dN = round_half_away(target / observed * dN)
                continue
            self.trace.jumps.append(JumpDecision(rec.N, st, target, dN, JUMPED, observed, branch))
            self.last_jump = dN
            self.hist.reset_alpha()
            self.since_jump = 0
            self.required = self.acj.N_s - 1
            self._keep(new, trec)
            self.since_jump = 0
            if self.s.store_alpha_diagnostics:
                self.diag = AlphaDiagnostic(rec.N, dN, st, buffer.copy())
            return new


def run_engine(sim: Simulation, settings: EngineSettings, state: SystemState = None) -> Trace:
    """Run a simulation to failure or budget with the configured engine."""
    return _Driver(sim, settings).run(state)


def run_acj(sim: Simulation, settings: AcjSettings = None, **kw) -> Trace:
    return run_engine(sim, EngineSettings("ACJ", settings or AcjSettings(), **kw))


def fcj_engine(fixed_jump: int, **kw) -> EngineSettings:
    return EngineSettings("FCJ", fixed_jump=fixed_jump, **kw)


def ecj_engine(q: float = 1.0, dN_max: int = 1000, **kw) -> EngineSettings:
    return EngineSettings("ECJ", ecj_q=q, ecj_max_jump=dN_max, **kw)
