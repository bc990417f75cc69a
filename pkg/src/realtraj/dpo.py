"""Degenerate parametric oscillator below threshold under realistic
homodyne x detection: Kalman moment equations, steady covariances and the
closed-form purity in terms of the effective bandwidth.

The joint distribution of the x quadrature and the scaled capacitor voltage
is Gaussian, so conditioning reduces to five moments: two means driven by
the innovation and three covariances obeying autonomous Riccati-type
equations. Working in Wigner units where vacuum has unit variance, the
monitored quadrature relaxes at k = (1 - chi)/2 and the unmonitored one at
(1 + chi)/2; x homodyne leaves the latter at its unconditioned variance
1/(1 + chi), so the stationary purity is fixed by the conditional x
variance alone. In the small-noise limit (gamma, N -> 0 with
B = gamma/sqrt(N) fixed) everything depends on the detector only through B
and the efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from ._kernels import kalman_chunk

COVARIANCE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """The covariance fixpoint iteration failed to converge."""


@dataclass(frozen=True)
class DpoParams:
    """Parametric drive chi (|chi| < 1), filter bandwidth, noise ratio and
    photodiode efficiency (photoreceiver conventions)."""

    chi: float
    gamma: float
    noise: float
    eta: float = 1.0

    def __post_init__(self):
        if not abs(self.chi) < 1.0:
            raise ValueError(f"|chi| must be < 1, got {self.chi}")
        if self.gamma <= 0 or self.noise <= 0:
            raise ValueError("gamma and noise must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")

    @property
    def k(self) -> float:
        """Relaxation rate of the monitored quadrature, (1 - chi)/2."""
        return 0.5 * (1.0 - self.chi)

    @property
    def bandwidth(self) -> float:
        """Effective bandwidth gamma/sqrt(N) of the small-noise limit."""
        return self.gamma / math.sqrt(self.noise)


@dataclass
class KalmanMoments:
    """Conditional means and covariances of (x, v)."""

    mean_x: float
    mean_v: float
    var_x: float
    var_v: float
    cov_xv: float

    def validate(self, tol: float = COVARIANCE_TOL) -> "KalmanMoments":
        if self.var_x <= 0 or self.var_v <= 0:
            raise ValueError(f"variances must stay positive: {self}")
        if self.var_x * self.var_v - self.cov_xv**2 < -tol:
            raise ValueError(f"covariance matrix lost positivity: {self}")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.mean_x, self.mean_v, self.var_x, self.var_v,
                         self.cov_xv])


def vacuum_moments(params: DpoParams) -> KalmanMoments:
    """Vacuum system state with the voltage in its unconditioned
    stationary state."""
    return KalmanMoments(0.0, 0.0, 1.0, 0.5 / params.noise, 0.0)


def covariance_rates(params: DpoParams, var_x: float, var_v: float,
                     cov_xv: float) -> tuple[float, float, float]:
    """Right-hand sides of the (deterministic) covariance equations."""
    g = math.sqrt(params.gamma * params.eta / params.noise)
    k = params.k
    dvar_x = -2.0 * k * var_x + 1.0 - params.gamma * cov_xv**2
    dvar_v = (params.gamma / params.noise - 2.0 * g * cov_xv
              - 2.0 * params.gamma * var_v - params.gamma * var_v**2)
    dcov = -((k + params.gamma) * cov_xv + g * (var_x - 1.0)
             + params.gamma * var_v * cov_xv)
    return dvar_x, dvar_v, dcov


def kalman_step(m: KalmanMoments, params: DpoParams, dt: float,
                dwj: float) -> KalmanMoments:
    """One Euler step: stochastic means, deterministic covariances.

    ``dwj`` is the innovation Wiener increment (variance dt). Covariance
    positivity is re-validated after the step; a violation aborts since it
    signals an unstable step size rather than recoverable noise.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    m.validate()
    g = math.sqrt(params.gamma * params.eta / params.noise)
    sqg = math.sqrt(params.gamma)
    rates = covariance_rates(params, m.var_x, m.var_v, m.cov_xv)
    out = KalmanMoments(
        mean_x=m.mean_x - params.k * m.mean_x * dt + sqg * dwj * m.cov_xv,
        mean_v=m.mean_v - (params.gamma * m.mean_v + g * m.mean_x) * dt
        + sqg * dwj * m.var_v,
        var_x=m.var_x + rates[0] * dt,
        var_v=m.var_v + rates[1] * dt,
        cov_xv=m.cov_xv + rates[2] * dt,
    )
    return out.validate()


def run_kalman_filter(params: DpoParams, duration: float, seed: int,
                      dt: float = 1e-4, sample_interval: float = 0.1,
                      initial: KalmanMoments | None = None):
    """Sampled moment trajectory driven by a plain Wiener innovation.

    Returns (t, moments) with moments of shape (n, 5) in the order
    (mean_x, mean_v, var_x, var_v, cov_xv).
    """
    from .engine import NoiseStream

    noise = NoiseStream(seed)
    state = (initial or vacuum_moments(params)).validate().as_array().copy()
    chunk = max(1, int(round(sample_interval / dt)))
    n_samples = int(round(duration / sample_interval))
    out = np.empty((n_samples + 1, 5))
    out[0] = state
    for kk in range(1, n_samples + 1):
        dw = noise.wiener(chunk, dt)
        kalman_chunk(state, params.k, params.gamma, params.noise, params.eta,
                     dt, dw)
        out[kk] = state
    KalmanMoments(*state).validate()
    t = np.arange(n_samples + 1) * sample_interval
    return t, out


def steady_covariances(params: DpoParams, horizon: float = 2000.0,
                       tol: float = 1e-12) -> tuple[float, float, float]:
    """Stationary covariances by relaxing the autonomous equations to their
    fixpoint, then polishing with a root solve.

    Raises :class:`ConvergenceError` when the residual stays large.
    """
    def rhs(_t, u):
        return covariance_rates(params, *u)

    sol = integrate.solve_ivp(rhs, (0.0, horizon),
                              vacuum_moments(params).as_array()[2:],
                              method="LSODA", rtol=1e-12, atol=1e-14)
    guess = sol.y[:, -1]
    polished = optimize.root(lambda u: covariance_rates(params, *u), guess,
                             tol=1e-14)
    u = polished.x if polished.success else guess
    residual = np.max(np.abs(covariance_rates(params, *u)))
    if residual > 1e-10:
        raise ConvergenceError(f"covariance fixpoint residual {residual}")
    if u[0] <= 0 or u[1] <= 0:
        raise ConvergenceError(f"unphysical fixpoint {u}")
    return float(u[0]), float(u[1]), float(u[2])


def scaled_steady_covariances(bandwidth: float, k: float, eta: float
                              ) -> tuple[float, float, float]:
    """Solve the small-noise algebraic equations for (var_x, scaled var_v,
    scaled cov_xv).

    The scaled variables are N^{1/2} var_v and N^{1/4} cov_xv, which stay
    of order unity as gamma, N -> 0 at fixed bandwidth B = gamma/sqrt(N).
    The three equations reduce to one scalar root problem in the scaled
    covariance; the physical branch has positive variances and respects
    var_x * var_y >= 1.
    """
    if bandwidth <= 0 or not 0.0 < k < 1.0 or not 0.0 < eta <= 1.0:
        raise ValueError("need bandwidth > 0, k in (0,1), eta in (0,1]")
    b = bandwidth

    def var_x_of(t):
        return (1.0 - b * t * t) / (2.0 * k)

    def dvt_of(t):
        arg = 1.0 - 2.0 * math.sqrt(eta / b) * t
        return math.sqrt(arg) if arg > 0 else math.nan

    def f(t):
        dvt = dvt_of(t)
        if math.isnan(dvt):
            return math.nan
        return (k * t + math.sqrt(b * eta) * (var_x_of(t) - 1.0)
                + b * t * dvt)

    t_hi = min(1.0 / math.sqrt(b), 0.5 * math.sqrt(b / eta)) * (1 - 1e-12)
    t_lo = -1.0 / math.sqrt(b) * (1 - 1e-12)
    ts = np.linspace(t_lo, t_hi, 2001)
    vals = np.array([f(t) for t in ts])
    dy = 0.5 / (1.0 - k)  # unmonitored-quadrature variance
    roots = []
    for i in range(len(ts) - 1):
        if np.isnan(vals[i]) or np.isnan(vals[i + 1]):
            continue
        if vals[i] == 0.0:
            roots.append(ts[i])
        elif vals[i] * vals[i + 1] < 0:
            roots.append(optimize.brentq(f, ts[i], ts[i + 1], xtol=1e-15))
    physical = []
    for t in roots:
        vx, dvt = var_x_of(t), dvt_of(t)
        if vx > 0 and dvt > 0 and vx * dy >= 1.0 - 1e-9:
            physical.append((vx, dvt, t))
    if not physical:
        raise ConvergenceError("no physical root of the scaled covariance "
                               "equations")
    if len(physical) > 1:
        # keep the root continuous with the no-information limit
        physical.sort(key=lambda p: abs(p[0] - 1.0 / (2 * k)))
    vx, dvt, t = physical[0]
    return float(vx), float(dvt), float(t)


def conjugate_quadrature_variance(chi: float) -> float:
    """Stationary variance of the unmonitored quadrature, 1/(1 + chi).

    x homodyne gains no information about it, so its conditional variance
    equals the unconditioned one.
    """
    return 1.0 / (1.0 + chi)


def gaussian_purity(var_x: float, var_y: float,
                    tol: float = 1e-9) -> float:
    """Purity of an uncorrelated Gaussian state, 1/sqrt(var_x var_y)."""
    prod = var_x * var_y
    if prod < 1.0 - tol:
        raise ValueError(f"variance product {prod} below the uncertainty "
                         "bound; state is unphysical")
    return 1.0 / math.sqrt(max(prod, 1.0))


def unconditioned_purity(chi: float) -> float:
    """Purity of the stationary state with no measurement."""
    k = 0.5 * (1.0 - chi)
    return gaussian_purity(1.0 / (2.0 * k), conjugate_quadrature_variance(chi))


def purity_closed_form(bandwidth: float, k: float, eta: float) -> float:
    """Stationary conditional purity in the small-noise limit.

    Closed form in the effective bandwidth and efficiency; reduces to 1 at
    chi = 0 and interpolates between the unconditioned purity (B -> 0) and
    unity (B -> infinity at unit efficiency).
    """
    if bandwidth <= 0 or not 0.0 < k < 1.0 or not 0.0 < eta <= 1.0:
        raise ValueError("need bandwidth > 0, k in (0,1), eta in (0,1]")
    b = bandwidth
    r = math.sqrt(k * k + eta * (1.0 - 2.0 * k))
    s = k * math.sqrt((2.0 * b * r + k * k + b * b) / (eta * b**3))
    num = 2.0 * k * eta * (1.0 - k) * b * b
    den = (s * math.sqrt(eta * b**3) * (b * r + k * k) - k**4
           - b * b * k * k * (1.0 - eta / k + 2.0 * r / b))
    if den <= 0 or num <= 0:
        raise ValueError("closed form hit a non-physical branch "
                         f"(num={num}, den={den})")
    return math.sqrt(num / den)


def purity_from_params(params: DpoParams) -> float:
    """Purity via the full covariance fixpoint at finite gamma, N."""
    var_x, _, _ = steady_covariances(params)
    return gaussian_purity(var_x, conjugate_quadrature_variance(params.chi))


def dpo_table(bandwidths, chis, eta: float = 1.0, noise: float = 1e-4):
    """Rows (B, chi, k, var_x, var_y, p_closed_form, p_numeric) comparing
    the closed form against the finite-noise fixpoint at gamma = B sqrt(N)."""
    rows = []
    for b in bandwidths:
        for chi in chis:
            k = 0.5 * (1.0 - chi)
            var_x = scaled_steady_covariances(b, k, eta)[0]
            p_cf = purity_closed_form(b, k, eta)
            params = DpoParams(chi=chi, gamma=b * math.sqrt(noise),
                               noise=noise, eta=eta)
            p_num = purity_from_params(params)
            rows.append({
                "bandwidth": b, "chi": chi, "k": k,
                "var_x": var_x,
                "var_y": conjugate_quadrature_variance(chi),
                "purity_closed_form": p_cf,
                "purity_numeric": p_num,
            })
    return rows
