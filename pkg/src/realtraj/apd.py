"""Correlated three-observer photon counting with an avalanche photodiode.

One noise realisation feeds three conditioned states in lockstep:

* the perfect observer sees every decay the moment it happens and stays
  pure (stored as a state vector, jump times chosen by norm comparison);
* the intermediate observer monitors the microscopic detector transitions,
  so it jumps when a charged pair is created and then waits out a stochastic
  dead interval (response delay plus the fixed dead time);
* the realistic observer only sees avalanches reach threshold and evolves
  the three-block supersystem (ready / charged / dead) between them.

Records are correlated event by event: a perfect jump while the detector is
ready is accepted with the quantum efficiency, an accepted jump creates the
charged pair immediately and fires the avalanche one exponential response
delay later, and the detector resets a fixed dead time after the avalanche.
A jump while the detector is not ready changes nothing in the detector. The
adaptive scheme flips the weak local-oscillator amplitude for everybody at
each avalanche threshold.

Event times are snapped down to the integration grid; the unnormalised
linear forms of the conditioning equations are stepped and states are
renormalised at events and output samples.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from . import engine, tla
from ._kernels import apd_triple_advance, perfect_jump_run
from .trajectory import RecordStreams, TripleTrajectory

DEFAULT_DT = 1e-4

_AVALANCHE, _RESET, _DARK = 0, 1, 2


@dataclass(frozen=True)
class ApdParams:
    """Avalanche photodiode parameters in emitter units.

    Defaults are the realistic laboratory values used throughout: 80%
    efficiency, response rate 7 Gamma, dead time 2/Gamma and a negligible
    (but still simulated) dark rate.
    """

    eta: float = 0.8
    gamma_r: float = 7.0
    tau_dd: float = 2.0
    gamma_dk: float = 5e-6

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.gamma_r <= 0:
            raise ValueError(f"gamma_r must be positive, got {self.gamma_r}")
        if self.tau_dd < 0 or self.gamma_dk < 0:
            raise ValueError("tau_dd and gamma_dk must be non-negative")

    @property
    def instant_response(self) -> bool:
        return math.isinf(self.gamma_r)


@dataclass
class ApdSupersystem:
    """Unnormalised blocks for detector states ready (0), charged pair (1)
    and avalanche/dead (2)."""

    rho_0: np.ndarray
    rho_1: np.ndarray
    rho_2: np.ndarray

    @classmethod
    def ready(cls, rho: np.ndarray) -> "ApdSupersystem":
        z = np.zeros((2, 2), dtype=complex)
        return cls(np.asarray(rho, dtype=complex), z.copy(), z.copy())

    def traces(self) -> np.ndarray:
        return np.array([np.trace(self.rho_0).real, np.trace(self.rho_1).real,
                         np.trace(self.rho_2).real])

    def total(self) -> np.ndarray:
        tot = self.rho_0 + self.rho_1 + self.rho_2
        return tot / np.trace(tot).real

    def normalize(self):
        s = self.traces().sum()
        self.rho_0 /= s
        self.rho_1 /= s
        self.rho_2 /= s


class InconsistentRecordError(RuntimeError):
    """The detector record asked for a transition the state forbids."""


# ---------------------------------------------------------------------------
# single-step contract functions (density-operator semantics)
# ---------------------------------------------------------------------------

def no_detection_operator(system: tla.SystemParams, mu: float) -> np.ndarray:
    """K = iH + c+c/2 + mu* c + |mu|^2/2; no-detection drift is -H[K]."""
    c = system.lowering()
    return (1j * system.hamiltonian() + 0.5 * (c.conj().T @ c)
            + np.conj(mu) * c + 0.5 * abs(mu) ** 2 * tla.IDENTITY)


def perfect_jump_step(system: tla.SystemParams, rho: np.ndarray, mu: float,
                      dt: float, noise: engine.NoiseStream | None = None,
                      jump: bool | None = None):
    """One Euler step of the perfect photon-counting observer.

    The detection flag can be supplied (replaying a record) or drawn from
    the jump probability Tr[(c+mu)+(c+mu) rho] dt. Returns (rho', dN).
    """
    c = system.lowering() + mu * tla.IDENTITY
    if jump is None:
        prob = float(np.real(np.trace(c.conj().T @ c @ rho))) * dt
        jump = noise.uniform() < prob
    if jump:
        return rho + tla.jump_update(c, rho), 1
    k = no_detection_operator(system, mu)
    return rho - dt * tla.innovation_map(k, rho), 0


def intermediate_step(system: tla.SystemParams, params: ApdParams,
                      rho_ready: np.ndarray, rho_dead: np.ndarray, mu: float,
                      dt: float, cpc: bool = False, reset: bool = False):
    """One step of the two-state intermediate observer.

    Exactly one of the blocks carries weight at any time. A charged-pair
    event moves everything into the dead block through the (unnormalised)
    detection map; during the dead interval the state follows the
    unconditioned master equation; a reset moves it back untouched.
    """
    tr_ready = np.trace(rho_ready).real
    if cpc and reset:
        raise InconsistentRecordError("charged pair and reset cannot coincide")
    if cpc:
        if tr_ready < 1e-12:
            raise InconsistentRecordError("charged pair while detector dead")
        jumped = (params.eta * tla.jump_map(system.lowering() + mu * tla.IDENTITY, rho_ready)
                  + params.gamma_dk * rho_ready)
        return np.zeros((2, 2), complex), jumped / np.trace(jumped).real
    if reset:
        return rho_ready + rho_dead, np.zeros((2, 2), complex)
    out_ready = rho_ready + dt * _ready_drift(system, params, rho_ready, mu)
    out_dead = rho_dead + dt * tla.liouvillian(system, rho_dead)
    return out_ready, out_dead


def _ready_drift(system, params, rho, mu):
    c = system.lowering() + mu * tla.IDENTITY
    return (tla.liouvillian(system, rho) - params.gamma_dk * rho
            - params.eta * tla.jump_map(c, rho))


def realistic_step(system: tla.SystemParams, params: ApdParams,
                   s: ApdSupersystem, mu: float, dt: float,
                   avalanche: bool = False, reset: bool = False) -> ApdSupersystem:
    """One step of the realistic observer's three-block supersystem
    (unnormalised linear form; callers renormalise at samples)."""
    if avalanche:
        tr1 = np.trace(s.rho_1).real
        if tr1 <= 1e-12:
            raise InconsistentRecordError("avalanche with empty charged-pair block")
        z = np.zeros((2, 2), complex)
        return ApdSupersystem(z.copy(), z.copy(), s.rho_1 / tr1)
    if reset:
        z = np.zeros((2, 2), complex)
        return ApdSupersystem(s.rho_0 + s.rho_2, s.rho_1.copy(), z)
    c = system.lowering() + mu * tla.IDENTITY
    feed = params.eta * tla.jump_map(c, s.rho_0) + params.gamma_dk * s.rho_0
    d0 = _ready_drift(system, params, s.rho_0, mu)
    d1 = tla.liouvillian(system, s.rho_1) - params.gamma_r * s.rho_1 + feed
    d2 = tla.liouvillian(system, s.rho_2)
    return ApdSupersystem(s.rho_0 + dt * d0, s.rho_1 + dt * d1, s.rho_2 + dt * d2)


# ---------------------------------------------------------------------------
# generators for the jitted lockstep run
# ---------------------------------------------------------------------------

def _superop_matrices(system: tla.SystemParams, params: ApdParams, mu: float):
    """All drift matrices for one local-oscillator sign."""
    c = system.lowering() + mu * tla.IDENTITY
    lmat = tla.liouvillian_matrix(system)
    jmat = tla.superoperator_matrix(lambda r: tla.jump_map(c, r))
    ready = lmat - params.gamma_dk * np.eye(4) - params.eta * jmat
    cpc_map = params.eta * jmat + params.gamma_dk * np.eye(4)
    terms = [engine.GeneratorTerm(0, 0, 1.0, ready),
             engine.GeneratorTerm(2, 2, 1.0, lmat)]
    if params.instant_response:
        # charged-pair block never populated; avalanche fires with the pair
        terms.append(engine.GeneratorTerm(1, 1, 1.0, lmat))
    else:
        terms.append(engine.GeneratorTerm(1, 0, 1.0, cpc_map))
        terms.append(engine.GeneratorTerm(
            1, 1, 1.0, lmat - params.gamma_r * np.eye(4)))
    sup_gen = engine.assemble_generator(3, 4, terms)
    return {
        "kp": no_detection_operator(system, mu),
        "jump_op": c,
        "gi_ready": engine.hermitian_real_rep(ready),
        "gi_dead": engine.hermitian_real_rep(lmat),
        "gr": engine.real_dense(sup_gen),
        "cpc_real": engine.hermitian_real_rep(cpc_map),
    }


def supersystem_generator(system: tla.SystemParams, params: ApdParams,
                          mu: float = 0.0) -> engine.SparseGenerator:
    """Sparse three-block generator of the realistic observer's linear drift."""
    if params.instant_response:
        raise ValueError("sparse form needs a finite response rate; the "
                         "instant-response limit is handled event-wise")
    c = system.lowering() + mu * tla.IDENTITY
    lmat = tla.liouvillian_matrix(system)
    jmat = tla.superoperator_matrix(lambda r: tla.jump_map(c, r))
    ready = lmat - params.gamma_dk * np.eye(4) - params.eta * jmat
    return engine.assemble_generator(3, 4, [
        engine.GeneratorTerm(0, 0, 1.0, ready),
        engine.GeneratorTerm(1, 0, 1.0, params.eta * jmat + params.gamma_dk * np.eye(4)),
        engine.GeneratorTerm(1, 1, 1.0, lmat - params.gamma_r * np.eye(4)),
        engine.GeneratorTerm(2, 2, 1.0, lmat),
    ])


# ---------------------------------------------------------------------------
# offline record correlation (direct detection)
# ---------------------------------------------------------------------------

def correlate_records(jump_times, params: ApdParams,
                      noise: engine.NoiseStream, duration: float,
                      dt: float = DEFAULT_DT) -> RecordStreams:
    """Derive detector records from a known string of perfect jumps.

    Follows the two-state bookkeeping: a jump while ready is accepted with
    probability eta; accepted jumps (and Poisson dark counts while ready)
    create a charged pair on the spot, avalanche one exponential response
    delay later and reset a dead time after the avalanche. Dark-count times
    snap down to the integration grid; jump times are taken as given.
    """
    rec = RecordStreams()
    state = {"dead_until": -math.inf, "dark_t": math.inf}

    def next_dark(t):
        if params.gamma_dk <= 0:
            return math.inf
        return t + (-math.log(noise.uniform_open()) / params.gamma_dk)

    state["dark_t"] = next_dark(0.0)

    def advance_darks(horizon):
        # candidates drawn while the detector turns out to be dead are
        # stale; memorylessness lets us redraw from the reset time
        while True:
            if state["dark_t"] < state["dead_until"]:
                state["dark_t"] = next_dark(state["dead_until"])
            elif state["dark_t"] < horizon:
                t_ev = math.floor(state["dark_t"] / dt) * dt
                _register_cpc(rec, t_ev, params, noise, dark=True)
                state["dead_until"] = rec.reset_times[-1]
                state["dark_t"] = next_dark(state["dark_t"])
            else:
                return

    for t in sorted(jump_times):
        if t >= duration:
            break
        advance_darks(t)
        rec.jump_times.append(t)
        ready = t >= state["dead_until"]
        accept = ready and noise.uniform() < params.eta
        rec.accepted.append(accept)
        if accept:
            _register_cpc(rec, t, params, noise, dark=False)
            state["dead_until"] = rec.reset_times[-1]
    advance_darks(duration)
    return rec


def _register_cpc(rec: RecordStreams, t: float, params: ApdParams,
                  noise: engine.NoiseStream, dark: bool):
    tau_r = (0.0 if params.instant_response
             else -math.log(noise.uniform_open()) / params.gamma_r)
    rec.cpc_times.append(t)
    rec.dark.append(dark)
    rec.avalanche_times.append(t + tau_r)
    rec.reset_times.append(t + tau_r + params.tau_dd)


# ---------------------------------------------------------------------------
# lockstep triple-trajectory run
# ---------------------------------------------------------------------------

def run_direct_triple(system: tla.SystemParams, params: ApdParams,
                      duration: float, seed: int, dt: float = DEFAULT_DT,
                      sample_interval: float = 0.01,
                      initial_bloch=(0.0, 0.0, -1.0)) -> TripleTrajectory:
    """Three correlated observers under direct detection (no local
    oscillator)."""
    return _run_triple(system, params, duration, seed, dt, sample_interval,
                       adaptive=False, initial_bloch=initial_bloch)


def run_adaptive_triple(system: tla.SystemParams, params: ApdParams,
                        duration: float, seed: int, dt: float = DEFAULT_DT,
                        sample_interval: float = 0.01,
                        initial_bloch=(0.0, 0.0, -1.0)) -> TripleTrajectory:
    """Three correlated observers under adaptive detection.

    The weak local oscillator (amplitude +-sqrt(Gamma)/2, starting positive)
    flips for all observers when the realistic observer's avalanche reaches
    threshold, not at the perfect observer's own jumps.
    """
    return _run_triple(system, params, duration, seed, dt, sample_interval,
                       adaptive=True, initial_bloch=initial_bloch)


def _bloch_purity_real(vec):
    """Bloch components and purity from a real-packed, trace-1 block."""
    ee, gg, x, y = vec
    bx, by, bz = 2.0 * x, -2.0 * y, ee - gg
    return (bx, by, bz), 0.5 * (1.0 + bx * bx + by * by + bz * bz)


def _run_triple(system, params, duration, seed, dt, sample_interval,
                adaptive, initial_bloch):
    noise = engine.NoiseStream(seed)
    n_steps = int(round(duration / dt))
    sample_every = max(1, int(round(sample_interval / dt)))
    mus = ([np.sqrt(system.gamma) / 2, -np.sqrt(system.gamma) / 2]
           if adaptive else [0.0, 0.0])
    mats = [_superop_matrices(system, params, mu) for mu in mus]

    rho0 = tla.bloch_to_density(initial_bloch)
    evals = np.linalg.eigvalsh(rho0)
    if evals.min() < -tla.POSITIVITY_TOL or abs(evals.max() - 1) > 1e-9:
        raise ValueError("initial state must be pure for the perfect observer")
    _, psi0 = np.linalg.eigh(rho0)
    psi = np.ascontiguousarray(psi0[:, -1].astype(complex))
    rho_i = engine.pack_hermitian(rho0)
    sup = np.zeros(12)
    sup[:4] = engine.pack_hermitian(rho0)

    lo = 0
    surv = 1.0
    r_jump = noise.uniform()
    int_ready = True
    real_dead = False
    dark_gen = 0

    events = []  # heap of (step, seq, kind, payload)
    seq = 0

    def push(step, kind, payload=0):
        nonlocal seq
        heapq.heappush(events, (step, seq, kind, payload))
        seq += 1

    def dark_delay_steps():
        if params.gamma_dk <= 0:
            return None
        tau = -math.log(noise.uniform_open()) / params.gamma_dk
        return int(math.floor(tau / dt))

    d = dark_delay_steps()
    if d is not None:
        push(d, _DARK, dark_gen)

    rec = RecordStreams()
    n_samples = n_steps // sample_every + 1
    t_out = np.empty(n_samples)
    bloch = {k: np.empty((n_samples, 3)) for k in "pir"}
    pur = {k: np.empty(n_samples) for k in "pir"}
    occup = np.empty((n_samples, 3))
    lo_out = np.empty(n_samples)
    dead_out = np.zeros(n_samples, dtype=bool)
    counts = np.zeros((n_samples, 3))
    jumps_acc = cpc_acc = aval_acc = 0

    def register_cpc(step):
        """Charged pair now; avalanche after the response delay."""
        nonlocal int_ready, dark_gen
        tau_r = (0.0 if params.instant_response
                 else -math.log(noise.uniform_open()) / params.gamma_r)
        aval_step = step + int(math.floor(tau_r / dt))
        rec.cpc_times.append(step * dt)
        rec.avalanche_times.append(aval_step * dt)
        rho_new = mats[lo]["cpc_real"] @ rho_i
        tr = rho_new[0] + rho_new[1]
        if tr <= 1e-300:
            raise InconsistentRecordError("charged-pair map annihilated the state")
        rho_i[:] = rho_new / tr
        int_ready = False
        dark_gen += 1
        push(aval_step, _AVALANCHE)

    def apply_avalanche(step):
        nonlocal real_dead, lo
        if params.instant_response:
            blk = mats[lo]["cpc_real"] @ sup[:4] + sup[4:8]
        else:
            blk = sup[4:8].copy()
        tr = blk[0] + blk[1]
        tot = sup[0] + sup[1] + sup[4] + sup[5] + sup[8] + sup[9]
        if tr / tot <= 1e-12:
            raise InconsistentRecordError("avalanche with empty charged-pair block")
        sup[:] = 0.0
        sup[8:] = blk / tr
        real_dead = True
        push(step + int(round(params.tau_dd / dt)), _RESET)
        if adaptive:
            lo = 1 - lo
            rec.lo_flip_times.append(step * dt)

    def apply_reset(step):
        nonlocal int_ready, real_dead
        sup[:4] += sup[8:]
        sup[8:] = 0.0
        real_dead = False
        int_ready = True
        rec.reset_times.append(step * dt)
        d = dark_delay_steps()
        if d is not None:
            push(step + d, _DARK, dark_gen)

    step = 0
    sample_idx = 0
    while True:
        while events and events[0][0] <= step:
            _, _, kind, payload = heapq.heappop(events)
            if kind == _AVALANCHE:
                apply_avalanche(step)
                aval_acc += 1
            elif kind == _RESET:
                apply_reset(step)
            elif kind == _DARK:
                if payload == dark_gen and int_ready:
                    rec.dark.append(True)
                    cpc_acc += 1
                    register_cpc(step)
        if step % sample_every == 0:
            k = step // sample_every
            t_out[k] = step * dt
            bp = np.real([np.vdot(psi, tla.SIGMA_X @ psi),
                          np.vdot(psi, tla.SIGMA_Y @ psi),
                          np.vdot(psi, tla.SIGMA_Z @ psi)])
            bloch["p"][k] = bp
            pur["p"][k] = 0.5 * (1 + bp @ bp)
            tri = rho_i[0] + rho_i[1]
            rho_i[:] /= tri
            bloch["i"][k], pur["i"][k] = _bloch_purity_real(rho_i)
            tr_blocks = np.array([sup[0] + sup[1], sup[4] + sup[5], sup[8] + sup[9]])
            tot = tr_blocks.sum()
            if not np.isfinite(tot) or tot <= 0:
                raise engine.IntegrationError("supersystem norm corrupted")
            sup[:] /= tot
            total_block = sup[:4] + sup[4:8] + sup[8:]
            bloch["r"][k], pur["r"][k] = _bloch_purity_real(total_block)
            occup[k] = tr_blocks / tot
            lo_out[k] = 1 - 2 * lo
            dead_out[k] = real_dead
            counts[k] = (jumps_acc, cpc_acc, aval_acc)
            jumps_acc = cpc_acc = aval_acc = 0
            sample_idx = k + 1
        if step >= n_steps:
            break
        horizon = min(n_steps, (step // sample_every + 1) * sample_every)
        if events:
            horizon = min(horizon, events[0][0])
        n = horizon - step
        taken, surv, jumped = apd_triple_advance(
            psi, rho_i, sup, mats[lo]["kp"],
            mats[lo]["gi_ready"] if int_ready else mats[lo]["gi_dead"],
            mats[lo]["gr"], dt, n, surv, r_jump)
        step += taken
        # the returned survival already folds in the norm lost this segment
        psi /= np.linalg.norm(psi)
        if jumped:
            jp = mats[lo]["jump_op"] @ psi
            nrm = np.linalg.norm(jp)
            if nrm <= 0:
                raise tla.DegenerateJumpError("jump fired with zero amplitude")
            psi[:] = jp / nrm
            surv = 1.0
            r_jump = noise.uniform()
            rec.jump_times.append(step * dt)
            jumps_acc += 1
            accept = int_ready and noise.uniform() < params.eta
            rec.accepted.append(accept)
            if accept:
                rec.dark.append(False)
                cpc_acc += 1
                register_cpc(step)

    return TripleTrajectory(
        scheme="apd-adaptive" if adaptive else "apd-direct",
        t=t_out[:sample_idx],
        bloch_perfect=bloch["p"][:sample_idx], purity_perfect=pur["p"][:sample_idx],
        bloch_intermediate=bloch["i"][:sample_idx],
        purity_intermediate=pur["i"][:sample_idx],
        bloch_realistic=bloch["r"][:sample_idx], purity_realistic=pur["r"][:sample_idx],
        records=rec,
        occupations=occup[:sample_idx], lo_sign=lo_out[:sample_idx],
        dead_window=dead_out[:sample_idx], event_counts=counts[:sample_idx],
    )


# ---------------------------------------------------------------------------
# perfect-observer-only runs (flux checks, long-horizon statistics)
# ---------------------------------------------------------------------------

def run_perfect_jump(system: tla.SystemParams, scheme: str, duration: float,
                     seed: int, dt: float = DEFAULT_DT):
    """Long perfect-detection run; returns (n_jumps, jump_rate).

    ``scheme`` is ``direct`` (no local oscillator) or ``adaptive`` in its
    idealised form where the oscillator flips at the observer's own jumps.
    """
    if scheme not in ("direct", "adaptive"):
        raise ValueError(f"unknown scheme {scheme!r}")
    adaptive = scheme == "adaptive"
    mu = np.sqrt(system.gamma) / 2 if adaptive else 0.0
    kp_pos = no_detection_operator(system, mu)
    kp_neg = no_detection_operator(system, -mu)
    jm_pos = system.lowering() + mu * tla.IDENTITY
    jm_neg = system.lowering() - mu * tla.IDENTITY
    noise = engine.NoiseStream(seed)
    n_steps = int(round(duration / dt))
    expected = max(100, int(duration * system.gamma))
    psi = np.array([0, 1], dtype=complex)
    total_jumps = 0
    done = 0
    lo = 1
    while done < n_steps:
        thresholds = np.array([noise.uniform() for _ in range(2 * expected + 100)])
        nj, steps, lo = perfect_jump_run(psi, kp_pos, kp_neg, jm_pos, jm_neg,
                                         dt, n_steps - done, thresholds,
                                         adaptive, lo)
        total_jumps += nj
        done += steps
    return total_jumps, total_jumps / duration
