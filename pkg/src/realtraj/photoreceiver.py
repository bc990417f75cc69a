"""Homodyne detection through a photoreceiver: three correlated observers.

The perfect observer conditions on the raw photocurrent noise xi(t); the
intermediate observer sees the current after the photodiode inefficiency
(noise sqrt(eta) xi + sqrt(1-eta) zeta); the realistic observer only sees
the output voltage after the RC filter buried in Johnson noise, and runs a
joint filter for the emitter state tensored with the scaled capacitor
voltage, discretised on a stationary grid.

The voltage grid spans +-7 unconditioned standard deviations of the filter's
stationary distribution with 100 points. Voltage derivatives use
second-order central differences in the interior; the two boundary rows are
the one-sided closures of the flux form with zero flux through the domain
edges, which conserves probability exactly (the binding constraint for long
runs). An abort fires if noticeable mass ever reaches the grid edge.

For a standalone realistic trajectory the innovation increment is a plain
Wiener process; in the correlated triple it is reconstructed from the true
capacitor voltage (driven by the perfect observer's record) plus fresh
Johnson noise, which is what ties the three observers to one experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import constants

from . import engine, tla
from ._kernels import pr_chunk
from .trajectory import RecordStreams, TripleTrajectory

DEFAULT_DT = 1e-5

PHI_X = 0.0
PHI_Y = -np.pi / 2


class GridSpanError(RuntimeError):
    """Probability mass reached the edge of the stationary voltage grid."""


@dataclass(frozen=True)
class PrParams:
    """Photoreceiver parameters: filter bandwidth (1/RC, emitter units),
    electronic-to-vacuum noise ratio, photodiode efficiency and LO phase."""

    gamma: float = 1.5
    noise: float = 0.1
    eta: float = 0.98
    phi: float = PHI_X

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.noise <= 0:
            raise ValueError(f"noise ratio must be positive, got {self.noise}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")

    @property
    def effective_bandwidth(self) -> float:
        """gamma sqrt((1-N)/N), the fastest trackable system rate at small N."""
        if self.noise >= 1.0:
            raise ValueError("effective bandwidth only makes sense for noise "
                             "ratio below 1")
        return self.gamma * math.sqrt((1.0 - self.noise) / self.noise)

    @property
    def unconditioned_variance(self) -> float:
        """Stationary voltage variance without conditioning, 1/2N."""
        return 0.5 / self.noise

    @property
    def conditioned_variance(self) -> float:
        """Stationary voltage variance of the conditioned filter (vacuum
        input), sqrt(1 + 1/N) - 1."""
        return math.sqrt(1.0 + 1.0 / self.noise) - 1.0


def nep_to_noise(nep: float, power: float, wavelength: float) -> float:
    """Noise ratio from a quoted noise-equivalent power.

    Compares the extra photons the NEP (W/sqrt(Hz)) would produce against
    the shot-noise photon-number fluctuation of a local oscillator of the
    given transmitted power (W) at the given wavelength (m):
    N = NEP / sqrt(P hbar omega0).
    """
    if nep < 0 or power <= 0 or wavelength <= 0:
        raise ValueError("nep must be >= 0; power and wavelength positive")
    omega0 = 2.0 * np.pi * constants.c / wavelength
    return nep / math.sqrt(power * constants.hbar * omega0)


def measurement_operator(system: tla.SystemParams, phi: float) -> np.ndarray:
    """e^{-i phi} c, the operator whose quadrature the homodyne current
    reads out."""
    return np.exp(-1j * phi) * system.lowering()


# ---------------------------------------------------------------------------
# voltage grid
# ---------------------------------------------------------------------------

class VoltageGrid:
    """Conditional blocks rho(v_j) on a uniform scaled-voltage grid.

    Blocks are stored in the real Hermitian packing, weighted so that
    sum_j Tr[rho(v_j)] dv = 1.
    """

    N_POINTS = 100
    SPAN_SIGMAS = 7.0

    def __init__(self, v: np.ndarray, blocks: np.ndarray):
        self.v = np.ascontiguousarray(v, dtype=float)
        self.dv = float(self.v[1] - self.v[0])
        self.blocks = np.ascontiguousarray(blocks, dtype=float)
        if self.blocks.shape != (self.v.size, 4):
            raise ValueError("blocks must have shape (n_grid, 4)")

    @classmethod
    def ou_initial(cls, params: PrParams, system_rho: np.ndarray,
                   n_points: int | None = None) -> "VoltageGrid":
        """Stationary filter distribution (Gaussian, variance 1/2N) tensored
        with the system state; grid spans +-7 of its standard deviations."""
        n = n_points or cls.N_POINTS
        sigma = math.sqrt(params.unconditioned_variance)
        v = np.linspace(-cls.SPAN_SIGMAS * sigma, cls.SPAN_SIGMAS * sigma, n)
        p = np.exp(-0.5 * (v / sigma) ** 2)
        p /= p.sum() * (v[1] - v[0])
        blocks = np.outer(p, engine.pack_hermitian(system_rho))
        return cls(v, blocks)

    def copy(self) -> "VoltageGrid":
        return VoltageGrid(self.v, self.blocks.copy())

    def flat(self) -> np.ndarray:
        return self.blocks.reshape(-1)

    def complex_flat(self) -> np.ndarray:
        """Row-major complex vec (ee, eg, ge, gg) per block, for use with
        the complex-basis generator."""
        out = np.empty(self.v.size * 4, dtype=complex)
        eg = self.blocks[:, 2] + 1j * self.blocks[:, 3]
        out[0::4] = self.blocks[:, 0]
        out[1::4] = eg
        out[2::4] = eg.conj()
        out[3::4] = self.blocks[:, 1]
        return out

    @classmethod
    def from_complex_flat(cls, v: np.ndarray, vec: np.ndarray) -> "VoltageGrid":
        blocks = np.empty((v.size, 4))
        blocks[:, 0] = vec[0::4].real
        blocks[:, 1] = vec[3::4].real
        blocks[:, 2] = vec[1::4].real
        blocks[:, 3] = vec[1::4].imag
        return cls(v, blocks)

    def marginal(self) -> np.ndarray:
        """Voltage probability density P(v_j)."""
        return self.blocks[:, 0] + self.blocks[:, 1]

    def norm(self) -> float:
        return float(self.marginal().sum() * self.dv)

    def normalize(self):
        self.blocks /= self.norm()

    def mean_voltage(self) -> float:
        return float((self.v * self.marginal()).sum() * self.dv / self.norm())

    def voltage_variance(self) -> float:
        p = self.marginal() * self.dv
        p = p / p.sum()
        m = float((self.v * p).sum())
        return float((self.v**2 * p).sum() - m * m)

    def tla_state(self) -> np.ndarray:
        """Detector-marginal emitter state (2x2, normalised)."""
        vec = self.blocks.sum(axis=0) * self.dv
        rho = engine.unpack_hermitian(vec)
        return rho / np.trace(rho).real

    def edge_mass(self) -> float:
        p = self.marginal()
        return float((p[0] + p[-1]) * self.dv)

    def check_edges(self, limit: float = 1e-4):
        m = self.edge_mass()
        if m > limit:
            raise GridSpanError(
                f"probability mass {m:.3e} at the grid edges exceeds {limit}; "
                f"the +-{self.SPAN_SIGMAS} sigma span no longer covers the "
                f"conditioned distribution")


def skse_generator(system: tla.SystemParams | None, params: PrParams,
                   grid: VoltageGrid) -> engine.SparseGenerator:
    """Precomputable (linear) part of the joint filtering generator.

    Blockwise emitter evolution, voltage damping and diffusion in exactly
    conserving flux form, and the measurement coupling that correlates the
    voltage with the emitted field. The innovation term is nonlinear and is
    rebuilt every step by the integrator. Passing ``system=None`` drops the
    emitter terms (vacuum input).
    """
    v, dv = grid.v, grid.dv
    n = v.size
    diff = params.gamma / (2.0 * params.noise)
    terms = []
    if system is not None:
        lmat = tla.liouvillian_matrix(system)
        m_op = measurement_operator(system, params.phi)
        meas = tla.superoperator_matrix(lambda r: m_op @ r + r @ m_op.conj().T)
        coupling = math.sqrt(params.gamma * params.eta / params.noise)
        for j in range(n):
            terms.append(engine.GeneratorTerm(j, j, 1.0, lmat))
        c0 = coupling / (2.0 * dv)
        for i in range(n - 1):
            # face between i and i+1; gradient term integrates to zero
            terms.append(engine.GeneratorTerm(i, i, c0, meas))
            terms.append(engine.GeneratorTerm(i, i + 1, c0, meas))
            terms.append(engine.GeneratorTerm(i + 1, i, -c0, meas))
            terms.append(engine.GeneratorTerm(i + 1, i + 1, -c0, meas))
    for i in range(n - 1):
        vf = 0.5 * (v[i] + v[i + 1])
        a = -params.gamma * vf / 2.0 + diff / dv
        b = -params.gamma * vf / 2.0 - diff / dv
        terms.append(engine.GeneratorTerm(i, i, -a / dv, None))
        terms.append(engine.GeneratorTerm(i, i + 1, -b / dv, None))
        terms.append(engine.GeneratorTerm(i + 1, i, a / dv, None))
        terms.append(engine.GeneratorTerm(i + 1, i + 1, b / dv, None))
    return engine.assemble_generator(n, 4, terms)


# ---------------------------------------------------------------------------
# single-step contract functions (density-operator semantics)
# ---------------------------------------------------------------------------

def perfect_homodyne_step(system: tla.SystemParams, rho: np.ndarray,
                          phi: float, dt: float, dxi: float) -> np.ndarray:
    """d rho = dt L rho + dxi H[e^{-i phi} c] rho (normalised Ito form)."""
    m_op = measurement_operator(system, phi)
    return (rho + dt * tla.liouvillian(system, rho)
            + dxi * tla.innovation_map(m_op, rho))


def intermediate_homodyne_step(system: tla.SystemParams, rho: np.ndarray,
                               phi: float, eta: float, dt: float,
                               dxi_prime: float) -> np.ndarray:
    """Conditioning on the inefficient current: the observed noise is
    dxi' = sqrt(eta) dxi + sqrt(1-eta) dzeta and enters with weight
    sqrt(eta)."""
    m_op = measurement_operator(system, phi)
    return (rho + dt * tla.liouvillian(system, rho)
            + math.sqrt(eta) * dxi_prime * tla.innovation_map(m_op, rho))


def true_voltage_step(vprime: float, quadrature: float, params: PrParams,
                      dt: float, dxi: float, dzeta: float) -> float:
    """Scaled capacitor voltage of the actual device.

    ``quadrature`` is the perfect observer's <e^{-i phi} c + h.c.>; the two
    Wiener increments are the shot noise and the inefficiency vacuum noise
    shared with the other observers.
    """
    drive = math.sqrt(params.gamma / params.noise)
    return (vprime - params.gamma * vprime * dt
            - drive * (math.sqrt(params.eta) * (quadrature * dt + dxi)
                       + math.sqrt(1.0 - params.eta) * dzeta))


def realistic_skse_step(grid: VoltageGrid, gen: engine.SparseGenerator,
                        dt: float, innovation_increment: float) -> VoltageGrid:
    """One Euler step of the joint filter on the voltage grid.

    ``innovation_increment`` is the full sqrt(gamma) dW term (a plain Wiener
    increment scaled by sqrt(gamma) standalone, or the correlated
    combination in a triple run). The grid is renormalised afterwards.
    """
    drift = gen.apply(grid.complex_flat())
    drifted = VoltageGrid.from_complex_flat(grid.v, drift)
    vm = grid.mean_voltage()
    f = innovation_increment * (grid.v - vm)
    blocks = grid.blocks + dt * drifted.blocks + f[:, None] * grid.blocks
    out = VoltageGrid(grid.v, blocks)
    out.normalize()
    return out


# ---------------------------------------------------------------------------
# standalone filter runs (vacuum input)
# ---------------------------------------------------------------------------

def run_voltage_filter(params: PrParams, duration: float, seed: int,
                       dt: float = DEFAULT_DT, sample_interval: float = 0.01,
                       conditioned: bool = True, n_points: int | None = None,
                       transient: float = 0.0):
    """Vacuum-input voltage filter: the grid with the emitter decoupled.

    With ``conditioned`` the innovation term uses a plain Wiener increment
    (the realistic observer's own filter); without it the evolution is the
    bare damping-diffusion equation. Returns (t, mean, variance) arrays of
    post-transient samples.
    """
    noise = engine.NoiseStream(seed)
    grid = VoltageGrid.ou_initial(params, tla.bloch_to_density((0, 0, -1)),
                                  n_points)
    gen = skse_generator(None, params, grid)
    indptr, indices, data = engine.real_csr(gen)
    flat = grid.flat().copy()
    psi = np.zeros(2, dtype=complex)
    rho_i = np.zeros(4)
    dummy2 = np.zeros((2, 2), dtype=complex)
    dummy4 = np.zeros((4, 4))
    chunk = max(1, int(round(sample_interval / dt)))
    n_chunks = int(round(duration / sample_interval))
    t_out, means, variances = [], [], []
    zeros = np.zeros(chunk)
    for k in range(n_chunks):
        wj = noise.wiener_output(chunk, dt) if conditioned else zeros
        pr_chunk(psi, rho_i, flat, 0.0, dummy2, dummy2, dummy4, dummy4,
                 indptr, indices, data, grid.v, grid.dv,
                 params.gamma, params.noise, params.eta, dt,
                 zeros, zeros, wj, False)
        t = (k + 1) * sample_interval
        if t < transient:
            continue
        g = VoltageGrid(grid.v, flat.reshape(-1, 4))
        g.check_edges()
        t_out.append(t)
        means.append(g.mean_voltage())
        variances.append(g.voltage_variance())
    return np.asarray(t_out), np.asarray(means), np.asarray(variances)


# ---------------------------------------------------------------------------
# correlated triple run
# ---------------------------------------------------------------------------

def run_homodyne_triple(system: tla.SystemParams, params: PrParams,
                        duration: float, seed: int, dt: float = DEFAULT_DT,
                        sample_interval: float = 0.01,
                        initial_bloch=(0.0, 0.0, -1.0),
                        n_points: int | None = None,
                        dist_stride: int = 0) -> TripleTrajectory:
    """Perfect, intermediate and realistic homodyne observers in lockstep.

    All three consume the same shot-noise and vacuum-noise increments; the
    realistic observer's innovation is built from the true capacitor
    voltage (itself driven by the perfect record) plus fresh Johnson noise.
    ``dist_stride`` > 0 stores every that-many-th voltage distribution for
    grey-scale plots.
    """
    noise = engine.NoiseStream(seed)
    rho0 = tla.bloch_to_density(initial_bloch)
    evals, evecs = np.linalg.eigh(rho0)
    if evals.min() < -tla.POSITIVITY_TOL or abs(evals.max() - 1) > 1e-9:
        raise ValueError("initial state must be pure for the perfect observer")
    psi = np.ascontiguousarray(evecs[:, -1].astype(complex))
    rho_i = engine.pack_hermitian(rho0)
    grid = VoltageGrid.ou_initial(params, rho0, n_points)
    gen = skse_generator(system, params, grid)
    indptr, indices, data = engine.real_csr(gen)
    flat = grid.flat().copy()

    c = system.lowering()
    kp = np.ascontiguousarray(1j * system.hamiltonian() + 0.5 * (c.conj().T @ c))
    m2 = np.ascontiguousarray(measurement_operator(system, params.phi))
    li = engine.hermitian_real_rep(tla.liouvillian_matrix(system))
    hm = engine.hermitian_real_rep(tla.superoperator_matrix(
        lambda r: m2 @ r + r @ m2.conj().T))

    # the device starts in its stationary state, consistent with the
    # observer's initial distribution
    vprime = math.sqrt(params.unconditioned_variance) * noise.wiener(1, 1.0)[0]

    chunk = max(1, int(round(sample_interval / dt)))
    n_samples = int(round(duration / sample_interval))
    t_out = np.empty(n_samples + 1)
    bloch = {k: np.empty((n_samples + 1, 3)) for k in "pir"}
    pur = {k: np.empty(n_samples + 1) for k in "pir"}
    v_mean = np.empty(n_samples + 1)
    v_var = np.empty(n_samples + 1)
    v_true = np.empty(n_samples + 1)
    dist_rows, dist_t = [], []

    def record(k):
        t_out[k] = k * sample_interval
        bp = np.real([np.vdot(psi, tla.SIGMA_X @ psi),
                      np.vdot(psi, tla.SIGMA_Y @ psi),
                      np.vdot(psi, tla.SIGMA_Z @ psi)])
        bloch["p"][k] = bp
        pur["p"][k] = 0.5 * (1 + bp @ bp)
        ee, gg, x, y = rho_i
        bloch["i"][k] = (2 * x, -2 * y, ee - gg)
        pur["i"][k] = 0.5 * (1 + bloch["i"][k] @ bloch["i"][k])
        g = VoltageGrid(grid.v, flat.reshape(-1, 4))
        g.check_edges()
        tot = g.tla_state()
        b = tla.density_to_bloch(tot, tol=1e-6)
        bloch["r"][k] = (b.x, b.y, b.z)
        pur["r"][k] = tla.purity(tot)
        v_mean[k] = g.mean_voltage()
        v_var[k] = g.voltage_variance()
        v_true[k] = vprime
        if dist_stride and k % dist_stride == 0:
            dist_rows.append(g.marginal().copy())
            dist_t.append(t_out[k])

    record(0)
    for k in range(1, n_samples + 1):
        xi = noise.wiener(chunk, dt)
        zeta = noise.wiener_aux(chunk, dt)
        wj = noise.wiener_output(chunk, dt)
        vprime = pr_chunk(psi, rho_i, flat, vprime, kp, m2, li, hm,
                          indptr, indices, data, grid.v, grid.dv,
                          params.gamma, params.noise, params.eta, dt,
                          xi, zeta, wj, True)
        if not np.isfinite(flat[::4]).all() or not math.isfinite(vprime):
            raise engine.IntegrationError("voltage-grid state went non-finite")
        record(k)

    return TripleTrajectory(
        scheme="pr-y" if abs(params.phi - PHI_Y) < 1e-12 else "pr-x",
        t=t_out,
        bloch_perfect=bloch["p"], purity_perfect=pur["p"],
        bloch_intermediate=bloch["i"], purity_intermediate=pur["i"],
        bloch_realistic=bloch["r"], purity_realistic=pur["r"],
        records=RecordStreams(),
        v_mean=v_mean, v_var=v_var, v_true=v_true, v_grid=grid.v.copy(),
        voltage_dist=np.asarray(dist_rows) if dist_rows else None,
        voltage_dist_t=np.asarray(dist_t) if dist_rows else None,
    )
