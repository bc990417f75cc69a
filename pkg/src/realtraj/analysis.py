"""Ensemble statistics: steady-state conditional purity, scaled purity,
drive-strength sweeps for the four detection schemes, and the
effective-bandwidth sweep.

Averages follow the time-sampling convention: samples of the conditional
state taken every 1/Gamma along long trajectories (large compared to the
system correlation time), pooled across several independent noise
realisations. Standard errors come from batch means over contiguous blocks,
which absorbs the residual autocorrelation between neighbouring samples.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import apd, photoreceiver, tla

WORKERS_ENV = "REALTRAJ_WORKERS"

SCHEMES = ("apd-direct", "apd-adaptive", "pr-x", "pr-y")

#: samples are spaced by the system correlation time; batches of this many
#: samples make neighbouring batch means effectively independent
BATCH_SIZE = 25

#: default split of an ensemble into independent realisations
SAMPLES_PER_TRAJECTORY = 100


class InsufficientSamplesError(ValueError):
    """Too few purity samples for a meaningful batch-mean error estimate."""


def worker_count(explicit: int | None = None) -> int:
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_jobs(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(workers, len(jobs))) as pool:
        return pool.map(fn, jobs)


def subseed(seed: int, index: int) -> int:
    """Deterministic, well-separated seed for the index-th realisation."""
    return int(np.random.SeedSequence([np.uint32(seed), np.uint32(index)])
               .generate_state(1)[0])


def batch_mean_se(samples: np.ndarray, batch_size: int = BATCH_SIZE):
    """Mean and batch-means standard error of correlated samples.

    ``samples`` may be one array or a list of arrays (one per independent
    trajectory); batches never straddle trajectory boundaries.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 1:
        samples = [samples]
    means = []
    total = 0
    for arr in samples:
        arr = np.asarray(arr, dtype=float)
        total += arr.size
        n_batches = arr.size // batch_size
        for b in range(n_batches):
            means.append(arr[b * batch_size:(b + 1) * batch_size].mean())
        rem = arr.size - n_batches * batch_size
        if n_batches == 0 and rem:
            means.append(arr.mean())
    if total < 2 * batch_size or len(means) < 2:
        raise InsufficientSamplesError(
            f"{total} samples in {len(means)} batches cannot support an "
            "error estimate")
    means = np.asarray(means)
    grand = float(np.concatenate([np.asarray(a, float).ravel()
                                  for a in samples]).mean())
    se = float(means.std(ddof=1) / math.sqrt(len(means)))
    return grand, se, len(means)


def lag1_autocorrelation(samples: np.ndarray) -> float:
    s = np.asarray(samples, dtype=float)
    s = s - s.mean()
    denom = float(np.dot(s, s))
    if denom == 0.0:
        return 0.0
    return float(np.dot(s[:-1], s[1:]) / denom)


# ---------------------------------------------------------------------------
# trajectory plumbing
# ---------------------------------------------------------------------------

def _observer_series(traj, observer: str):
    tag = {"perfect": "perfect", "intermediate": "intermediate",
           "realistic": "realistic"}[observer]
    return (getattr(traj, f"bloch_{tag}"), getattr(traj, f"purity_{tag}"))


def run_scheme_trajectory(scheme: str, system: tla.SystemParams, detector,
                          duration: float, seed: int, dt: float | None = None,
                          sample_interval: float = 1.0,
                          dist_stride: int = 0):
    """One triple trajectory of any of the four schemes."""
    if scheme == "apd-direct":
        return apd.run_direct_triple(system, detector, duration, seed,
                                     dt=dt or apd.DEFAULT_DT,
                                     sample_interval=sample_interval)
    if scheme == "apd-adaptive":
        return apd.run_adaptive_triple(system, detector, duration, seed,
                                       dt=dt or apd.DEFAULT_DT,
                                       sample_interval=sample_interval)
    if scheme in ("pr-x", "pr-y"):
        phi = photoreceiver.PHI_X if scheme == "pr-x" else photoreceiver.PHI_Y
        params = photoreceiver.PrParams(gamma=detector.gamma,
                                        noise=detector.noise,
                                        eta=detector.eta, phi=phi)
        return photoreceiver.run_homodyne_triple(
            system, params, duration, seed,
            dt=dt or photoreceiver.DEFAULT_DT,
            sample_interval=sample_interval, dist_stride=dist_stride)
    raise ValueError(f"unknown scheme {scheme!r}")


def _purity_job(args):
    (scheme, system, detector, n_samples, transient, seed, dt,
     observer) = args
    duration = transient + n_samples
    traj = run_scheme_trajectory(scheme, system, detector, duration, seed,
                                 dt=dt, sample_interval=1.0)
    keep = traj.t > transient - 0.5
    _, purity = _observer_series(traj, observer)
    return purity[keep][:n_samples]


def purity_sample_sets(scheme: str, system: tla.SystemParams, detector,
                       n_samples: int, seed: int, observer: str = "realistic",
                       transient: float = 10.0, dt: float | None = None,
                       samples_per_trajectory: int = SAMPLES_PER_TRAJECTORY,
                       workers: int | None = None) -> list[np.ndarray]:
    """Purity samples split over independent realisations.

    Each realisation runs ``transient`` before contributing
    ``samples_per_trajectory`` samples spaced 1/Gamma apart.
    """
    n_traj = max(1, math.ceil(n_samples / samples_per_trajectory))
    per = math.ceil(n_samples / n_traj)
    jobs = [(scheme, system, detector, per, transient, subseed(seed, i), dt,
             observer) for i in range(n_traj)]
    sets = _run_jobs(_purity_job, jobs, worker_count(workers))
    # trim overshoot deterministically from the last realisation
    excess = per * n_traj - n_samples
    if excess:
        sets[-1] = sets[-1][:per - excess]
    return sets


def ensemble_average_purity(scheme: str, system: tla.SystemParams, detector,
                            n_samples: int, seed: int,
                            observer: str = "realistic",
                            transient: float = 10.0,
                            dt: float | None = None,
                            workers: int | None = None):
    """Steady-state averaged conditional purity with a batch-mean error.

    Returns (purity, stderr, n_samples_used).
    """
    sets = purity_sample_sets(scheme, system, detector, n_samples, seed,
                              observer=observer, transient=transient, dt=dt,
                              workers=workers)
    mean, se, _ = batch_mean_se(sets)
    return mean, se, int(sum(a.size for a in sets))


def _bloch_job(args):
    scheme, system, detector, duration, seed, dt, observer = args
    traj = run_scheme_trajectory(scheme, system, detector, duration, seed,
                                 dt=dt, sample_interval=1.0)
    bloch, _ = _observer_series(traj, observer)
    return traj.t, bloch


def ensemble_bloch_mean(scheme: str, system: tla.SystemParams, detector,
                        t_checks, n_trajectories: int, seed: int,
                        observer: str = "realistic", dt: float | None = None,
                        workers: int | None = None):
    """Ensemble mean and standard error of the conditioned Bloch vector at
    the requested times (unraveling-consistency checks against the
    unconditioned solution)."""
    t_checks = np.asarray(t_checks, dtype=float)
    duration = float(t_checks.max())
    jobs = [(scheme, system, detector, duration, subseed(seed, i), dt,
             observer) for i in range(n_trajectories)]
    results = _run_jobs(_bloch_job, jobs, worker_count(workers))
    t = results[0][0]
    idx = np.searchsorted(t, t_checks - 1e-9)
    stack = np.stack([bloch[idx] for _, bloch in results])
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / math.sqrt(n_trajectories)
    return mean, se


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class PuritySweepResult:
    """One detection scheme swept over a control variable."""

    scheme: str
    variable: str
    values: np.ndarray
    purity: np.ndarray
    scaled: np.ndarray
    stderr: np.ndarray
    n_samples: np.ndarray
    me_purity: np.ndarray

    def rows(self):
        for i in range(len(self.values)):
            yield {
                "scheme": self.scheme,
                self.variable: self.values[i],
                "purity": self.purity[i],
                "scaled_purity": self.scaled[i],
                "stderr": self.stderr[i],
                "n_samples": int(self.n_samples[i]),
                "me_purity": self.me_purity[i],
            }


def purity_vs_omega_sweep(scheme: str, omegas, detector=None,
                          n_samples: int = 1000, seed: int = 0,
                          observer: str = "realistic",
                          transient: float = 10.0, dt: float | None = None,
                          workers: int | None = None) -> PuritySweepResult:
    """Averaged conditional purity as a function of the drive strength."""
    if detector is None:
        detector = (apd.ApdParams() if scheme.startswith("apd")
                    else photoreceiver.PrParams())
    values, ps, scaled, ses, ns, mes = [], [], [], [], [], []
    for i, omega in enumerate(omegas):
        system = tla.SystemParams(omega=float(omega))
        p, se, n = ensemble_average_purity(
            scheme, system, detector, n_samples, subseed(seed, 1000 + i),
            observer=observer, transient=transient, dt=dt, workers=workers)
        p_me = tla.me_steady_purity(system)
        values.append(omega)
        ps.append(p)
        scaled.append(tla.scaled_purity(p, p_me))
        ses.append(se)
        ns.append(n)
        mes.append(p_me)
    return PuritySweepResult(scheme, "omega", np.asarray(values, float),
                             np.asarray(ps), np.asarray(scaled),
                             np.asarray(ses), np.asarray(ns), np.asarray(mes))


def noise_for_bandwidth(b_const: float, gamma: float) -> float:
    """Noise ratio with gamma sqrt((1-N)/N) held at ``b_const``."""
    if b_const <= 0 or gamma <= 0:
        raise ValueError("bandwidth and gamma must be positive")
    noise = gamma**2 / (b_const**2 + gamma**2)
    if noise >= 1.0:
        raise ValueError(f"gamma = {gamma} needs noise ratio >= 1 at "
                         f"bandwidth {b_const}; outside the model's validity")
    return noise


def effective_bandwidth_sweep(b_const: float, gammas, omega: float,
                              eta: float = 0.98, n_samples: int = 1000,
                              seed: int = 0, transient: float = 10.0,
                              dt: float | None = None,
                              workers: int | None = None) -> PuritySweepResult:
    """Homodyne-x purity across filter bandwidths at fixed effective
    bandwidth: the noise ratio is solved from gamma sqrt((1-N)/N) = B for
    each gamma, and the purity should stay approximately flat."""
    system = tla.SystemParams(omega=float(omega))
    p_me = tla.me_steady_purity(system)
    values, ps, scaled, ses, ns = [], [], [], [], []
    for i, gamma in enumerate(gammas):
        noise = noise_for_bandwidth(b_const, float(gamma))
        detector = photoreceiver.PrParams(gamma=float(gamma), noise=noise,
                                          eta=eta)
        p, se, n = ensemble_average_purity(
            "pr-x", system, detector, n_samples, subseed(seed, 2000 + i),
            transient=transient, dt=dt, workers=workers)
        values.append(gamma)
        ps.append(p)
        scaled.append(tla.scaled_purity(p, p_me))
        ses.append(se)
        ns.append(n)
    return PuritySweepResult("pr-x", "gamma", np.asarray(values, float),
                             np.asarray(ps), np.asarray(scaled),
                             np.asarray(ses), np.asarray(ns),
                             np.full(len(values), p_me))
