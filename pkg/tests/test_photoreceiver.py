import numpy as np
import pytest

from realtraj import engine, photoreceiver as pr, tla
from realtraj.trajectory import containment_violations

STRONG = tla.SystemParams(omega=10.0)
PAPER_PR = pr.PrParams()  # gamma 1.5, N 0.1, eta 0.98, phi 0 (x quadrature)
GROUND = tla.bloch_to_density((0, 0, -1))


class TestPrParams:
    def test_defaults(self):
        assert PAPER_PR.gamma == 1.5
        assert PAPER_PR.noise == 0.1
        assert PAPER_PR.eta == 0.98

    def test_effective_bandwidth(self):
        assert PAPER_PR.effective_bandwidth == pytest.approx(4.5)
        with pytest.raises(ValueError):
            pr.PrParams(noise=1.5).effective_bandwidth

    def test_validation(self):
        with pytest.raises(ValueError):
            pr.PrParams(gamma=0.0)
        with pytest.raises(ValueError):
            pr.PrParams(noise=-0.1)
        with pytest.raises(ValueError):
            pr.PrParams(eta=0.0)

    def test_variance_formulas(self):
        assert PAPER_PR.unconditioned_variance == pytest.approx(5.0)
        assert PAPER_PR.conditioned_variance == pytest.approx(np.sqrt(11) - 1)
        assert PAPER_PR.conditioned_variance == pytest.approx(2.3166, abs=1e-4)
        ratio = PAPER_PR.unconditioned_variance / PAPER_PR.conditioned_variance
        assert ratio == pytest.approx(2.16, abs=0.01)


class TestNepToNoise:
    def test_zero_nep(self):
        assert pr.nep_to_noise(0.0, 1e-3, 780e-9) == 0.0

    def test_quadrupling_power_halves_noise(self):
        n1 = pr.nep_to_noise(3e-12, 0.5e-3, 780e-9)
        n2 = pr.nep_to_noise(3e-12, 2e-3, 780e-9)
        assert n1 == pytest.approx(2 * n2)

    def test_catalogue_values(self):
        # 3 pW/sqrt(Hz) at 0.5 mW and 780 nm: same order as the working
        # noise ratio of 0.1 (the formula gives 0.266)
        n = pr.nep_to_noise(3e-12, 0.5e-3, 780e-9)
        assert n == pytest.approx(0.2659, abs=2e-3)
        assert 0.03 < n < 0.3


class TestOuInitialDistribution:
    def test_paper_sigma(self):
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, GROUND)
        assert np.sqrt(PAPER_PR.unconditioned_variance) == pytest.approx(2.236, abs=1e-3)
        assert grid.v[-1] == pytest.approx(7 * np.sqrt(5))
        assert grid.v.size == 100

    def test_normalisation(self):
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, GROUND)
        assert grid.norm() == pytest.approx(1.0, abs=1e-6)
        assert grid.voltage_variance() == pytest.approx(5.0, rel=2e-2)

    def test_stationarity_without_conditioning(self):
        t, mean, var = pr.run_voltage_filter(PAPER_PR, duration=0.1, seed=0,
                                             conditioned=False)
        # 10^4 steps change the variance by well under 1%
        assert var[-1] == pytest.approx(var[0], rel=1e-2)

    def test_tensor_with_system_state(self):
        rho = tla.me_steady_state(STRONG)
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, rho)
        assert np.max(np.abs(grid.tla_state() - rho)) < 1e-12


class TestSkseGenerator:
    def test_mass_conservation_exact(self):
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, GROUND, n_points=40)
        gen = pr.skse_generator(STRONG, PAPER_PR, grid)
        # total trace rate vanishes on random supersystem states
        rng = np.random.default_rng(0)
        trace_row = np.zeros(gen.shape[0])
        trace_row[0::4] = 1.0
        trace_row[3::4] = 1.0
        for _ in range(5):
            probe = rng.standard_normal(gen.shape[0]) + 1j * rng.standard_normal(gen.shape[0])
            rate = trace_row @ gen.apply(probe)
            assert abs(rate) < 1e-9 * np.max(np.abs(probe))

    def test_trace_drift_per_step(self):
        # before renormalisation the Euler step must conserve trace to 1e-8
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, tla.me_steady_state(STRONG))
        gen = pr.skse_generator(STRONG, PAPER_PR, grid)
        stepped = engine.euler_step(grid.complex_flat(), gen, 1e-5)
        tr = (stepped[0::4] + stepped[3::4]).real.sum() * grid.dv
        assert abs(tr - 1.0) < 1e-8

    def test_mean_drift_matches_true_voltage_ode(self):
        # deterministic part only: d<v>/dt = -gamma <v> - sqrt(gamma eta/N) <x>
        rho = tla.bloch_to_density((0.6, 0.2, -0.5))
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, rho)
        gen = pr.skse_generator(STRONG, PAPER_PR, grid)
        dt = 1e-6
        stepped = engine.euler_step(grid.complex_flat(), gen, dt)
        g2 = pr.VoltageGrid.from_complex_flat(grid.v, stepped)
        quad = np.real(np.trace(
            pr.measurement_operator(STRONG, 0.0) @ rho
            + rho @ pr.measurement_operator(STRONG, 0.0).conj().T))
        expected = -np.sqrt(PAPER_PR.gamma * PAPER_PR.eta / PAPER_PR.noise) * quad
        assert (g2.mean_voltage() - grid.mean_voltage()) / dt == pytest.approx(
            expected, rel=1e-3)


class TestVacuumStatistics:
    def test_unconditioned_variance(self):
        t, mean, var = pr.run_voltage_filter(PAPER_PR, duration=20.0, seed=1,
                                             conditioned=False, transient=5.0,
                                             sample_interval=0.1)
        assert np.mean(var) == pytest.approx(PAPER_PR.unconditioned_variance,
                                             rel=2e-2)

    @pytest.mark.parametrize("noise_ratio", [0.05, 0.1, 0.5])
    def test_conditioned_variance(self, noise_ratio):
        params = pr.PrParams(noise=noise_ratio)
        t, mean, var = pr.run_voltage_filter(params, duration=25.0, seed=2,
                                             conditioned=True, transient=5.0,
                                             sample_interval=0.05)
        assert np.mean(var) == pytest.approx(params.conditioned_variance,
                                             rel=2e-2)

    def test_grid_span_abort(self):
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, GROUND)
        # park all the mass on the edge point
        grid.blocks[:] = 0.0
        grid.blocks[0, 1] = 1.0 / grid.dv
        with pytest.raises(pr.GridSpanError):
            grid.check_edges()


class TestStepContracts:
    def test_perfect_step_preserves_trace(self):
        rng = np.random.default_rng(3)
        rho = tla.me_steady_state(STRONG)
        for _ in range(50):
            rho = pr.perfect_homodyne_step(STRONG, rho, 0.0, 1e-5,
                                           rng.normal(0, np.sqrt(1e-5)))
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)

    def test_intermediate_reduces_to_perfect_at_unit_efficiency(self):
        rng = np.random.default_rng(4)
        rho = tla.me_steady_state(STRONG)
        dxi = rng.normal(0, np.sqrt(1e-5))
        a = pr.perfect_homodyne_step(STRONG, rho, 0.0, 1e-5, dxi)
        b = pr.intermediate_homodyne_step(STRONG, rho, 0.0, 1.0, 1e-5, dxi)
        assert np.max(np.abs(a - b)) < 1e-14

    def test_intermediate_at_zero_efficiency_is_unconditioned(self):
        rho = tla.me_steady_state(STRONG)
        out = pr.intermediate_homodyne_step(STRONG, rho, 0.0, 0.0, 1e-5, 0.3)
        me = rho + 1e-5 * tla.liouvillian(STRONG, rho)
        assert np.max(np.abs(out - me)) < 1e-9

    def test_true_voltage_fixpoint(self):
        # constant drive, no noise: v' relaxes to -sqrt(eta/(gamma N)) <x>
        v = 0.0
        quad = 0.7
        for _ in range(40000):
            v = pr.true_voltage_step(v, quad, PAPER_PR, 1e-3, 0.0, 0.0)
        target = -np.sqrt(PAPER_PR.eta / (PAPER_PR.gamma * PAPER_PR.noise)) * quad
        assert v == pytest.approx(target, rel=1e-6)

    def test_true_voltage_vacuum_variance(self):
        # the step is a linear recursion; validate it against lfilter and
        # use the (fast) filtered form for tight long-run statistics
        from scipy.signal import lfilter
        stream = engine.NoiseStream(5)
        dt = 1e-3
        n = 20_000_000
        dxi = stream.wiener(n, dt)
        dzeta = stream.wiener_aux(n, dt)
        drive = -np.sqrt(PAPER_PR.gamma / PAPER_PR.noise)
        kick = drive * (np.sqrt(PAPER_PR.eta) * dxi
                        + np.sqrt(1 - PAPER_PR.eta) * dzeta)
        series = lfilter([1.0], [1.0, -(1.0 - PAPER_PR.gamma * dt)], kick)
        v = 0.0
        for i in range(1000):
            v = pr.true_voltage_step(v, 0.0, PAPER_PR, dt, dxi[i], dzeta[i])
            assert v == pytest.approx(series[i], rel=1e-12)
        burn = int(20 / (PAPER_PR.gamma * dt))
        assert np.var(series[burn:]) == pytest.approx(
            PAPER_PR.unconditioned_variance, rel=2e-2)

    def test_skse_step_matches_kernel(self):
        from realtraj._kernels import pr_chunk
        rho = tla.me_steady_state(STRONG)
        grid = pr.VoltageGrid.ou_initial(PAPER_PR, rho, n_points=30)
        gen = pr.skse_generator(STRONG, PAPER_PR, grid)
        dt = 1e-5
        dwj = 0.003
        ref = pr.realistic_skse_step(grid.copy(), gen, dt,
                                     np.sqrt(PAPER_PR.gamma) * dwj)
        indptr, indices, data = engine.real_csr(gen)
        flat = grid.flat().copy()
        dummy2 = np.zeros((2, 2), dtype=complex)
        dummy4 = np.zeros((4, 4))
        pr_chunk(np.zeros(2, dtype=complex), np.zeros(4), flat, 0.0,
                 dummy2, dummy2, dummy4, dummy4, indptr, indices, data,
                 grid.v, grid.dv, PAPER_PR.gamma, PAPER_PR.noise,
                 PAPER_PR.eta, dt, np.zeros(1), np.zeros(1),
                 np.array([dwj]), False)
        assert np.max(np.abs(flat.reshape(-1, 4) - ref.blocks)) < 1e-12


@pytest.fixture(scope="module")
def homodyne_traj():
    return pr.run_homodyne_triple(STRONG, PAPER_PR, duration=6.0, seed=21,
                                  sample_interval=0.02, dist_stride=10)


class TestHomodyneTriple:

    def test_perfect_purity_unity(self, homodyne_traj):
        assert np.max(np.abs(homodyne_traj.purity_perfect - 1.0)) < 1e-9

    def test_intermediate_tracks_perfect_closely(self, homodyne_traj):
        # eta = 0.98: intermediate hugs the perfect trajectory; realistic
        # (filtered, noisy) sits further away
        keep = homodyne_traj.t > 1.0
        gap_i = np.linalg.norm(
            homodyne_traj.bloch_intermediate[keep] - homodyne_traj.bloch_perfect[keep], axis=1)
        gap_r = np.linalg.norm(
            homodyne_traj.bloch_realistic[keep] - homodyne_traj.bloch_perfect[keep], axis=1)
        assert np.mean(gap_i) < 0.5 * np.mean(gap_r)

    def test_containment_chain(self, homodyne_traj):
        assert containment_violations(homodyne_traj) == []

    def test_voltage_distribution_recorded(self, homodyne_traj):
        assert homodyne_traj.voltage_dist is not None
        sums = homodyne_traj.voltage_dist.sum(axis=1) * (homodyne_traj.v_grid[1] - homodyne_traj.v_grid[0])
        assert np.max(np.abs(sums - 1.0)) < 1e-6

    def test_determinism(self):
        a = pr.run_homodyne_triple(STRONG, PAPER_PR, 0.5, seed=9)
        b = pr.run_homodyne_triple(STRONG, PAPER_PR, 0.5, seed=9)
        assert np.array_equal(a.bloch_realistic, b.bloch_realistic)
        assert np.array_equal(a.v_true, b.v_true)


class TestWeakConvergence:
    """Ensemble mean of the diffusive stepper matches the unconditioned
    solution at two step sizes (first-order weak accuracy)."""

    @staticmethod
    def _ensemble_mean_z(dt, n_traj, t_final, seed):
        rng = np.random.default_rng(seed)
        rho = np.tile(GROUND, (n_traj, 1, 1))
        m_op = pr.measurement_operator(STRONG, 0.0)
        h = STRONG.hamiltonian()
        c = STRONG.lowering()
        cd_c = c.conj().T @ c
        steps = int(round(t_final / dt))
        for _ in range(steps):
            dw = rng.standard_normal(n_traj)[:, None, None] * np.sqrt(dt)
            comm = h @ rho - rho @ h
            diss = c @ rho @ c.conj().T - 0.5 * (cd_c @ rho + rho @ cd_c)
            lin = m_op @ rho + rho @ m_op.conj().T
            expect = np.trace(lin, axis1=1, axis2=2).real[:, None, None]
            rho = rho + dt * (-1j * comm + diss) + dw * (lin - expect * rho)
            tr = np.trace(rho, axis1=1, axis2=2).real[:, None, None]
            rho = rho / tr
        return np.trace(rho @ np.array(tla.SIGMA_Z), axis1=1, axis2=2).real

    def test_ensemble_mean_tracks_unconditioned(self):
        from scipy.linalg import expm
        t_final = 1.0
        lmat = tla.liouvillian_matrix(STRONG)
        exact = (expm(t_final * lmat) @ GROUND.reshape(4)).reshape(2, 2)
        z_exact = np.real(np.trace(exact @ tla.SIGMA_Z))
        for dt, seed in ((2e-4, 0), (1e-4, 1)):
            z = self._ensemble_mean_z(dt, 4000, t_final, seed)
            se = z.std(ddof=1) / np.sqrt(z.size)
            assert abs(z.mean() - z_exact) <= 3 * se + 5.0 * dt


class TestObserverOrdering:
    """Ensemble purity ordering: perfect > intermediate > realistic > the
    unconditioned value, at strong drive with laboratory parameters."""

    @pytest.fixture(scope="class")
    def purity_sets(self):
        sets = {"perfect": [], "intermediate": [], "realistic": []}
        for i in range(2):
            traj = pr.run_homodyne_triple(STRONG, PAPER_PR, duration=60.0,
                                          seed=400 + i, sample_interval=1.0)
            keep = traj.t > 5.0
            sets["perfect"].append(traj.purity_perfect[keep])
            sets["intermediate"].append(traj.purity_intermediate[keep])
            sets["realistic"].append(traj.purity_realistic[keep])
        return sets

    def test_ordering_with_significance(self, purity_sets):
        from realtraj import analysis
        p_me = tla.me_steady_purity(STRONG)
        stats = {}
        for name, arrays in purity_sets.items():
            mean, se, _ = analysis.batch_mean_se(arrays, batch_size=10)
            stats[name] = (mean, se)
        assert stats["perfect"][0] == pytest.approx(1.0, abs=1e-9)
        gap1 = stats["perfect"][0] - stats["intermediate"][0]
        gap2 = stats["intermediate"][0] - stats["realistic"][0]
        gap3 = stats["realistic"][0] - p_me
        assert gap1 > 3 * stats["intermediate"][1]
        assert gap2 > 3 * np.hypot(stats["intermediate"][1],
                                   stats["realistic"][1])
        assert gap3 > 3 * stats["realistic"][1]

    def test_conditioning_degrades_with_electronic_noise(self):
        from realtraj import analysis
        p_me = tla.me_steady_purity(STRONG)
        purities = []
        for noise_ratio in (0.1, 0.8, 5.0):
            det = pr.PrParams(noise=noise_ratio)
            p, se, _ = analysis.ensemble_average_purity(
                "pr-x", STRONG, det, n_samples=60, seed=77, transient=5.0)
            purities.append((p, se))
        assert purities[0][0] - purities[1][0] > 3 * np.hypot(
            purities[0][1], purities[1][1])
        assert purities[1][0] - purities[2][0] > 3 * np.hypot(
            purities[1][1], purities[2][1])
        # heavy noise approaches the unconditioned purity from above
        assert purities[2][0] - p_me < 0.05
        assert purities[2][0] > p_me - 3 * purities[2][1]


class TestHomodyneYDetection:
    def test_x_quadrature_strictly_zero(self):
        params = pr.PrParams(phi=pr.PHI_Y)
        traj = pr.run_homodyne_triple(STRONG, params, duration=3.0, seed=31,
                                      sample_interval=0.05)
        assert np.max(np.abs(traj.bloch_perfect[:, 0])) < 1e-14
        assert np.max(np.abs(traj.bloch_intermediate[:, 0])) < 1e-14
        assert np.max(np.abs(traj.bloch_realistic[:, 0])) < 1e-14
        assert traj.scheme == "pr-y"

    def test_x_homodyne_drives_x(self):
        traj = pr.run_homodyne_triple(STRONG, PAPER_PR, duration=3.0, seed=31,
                                      sample_interval=0.05)
        assert np.max(np.abs(traj.bloch_perfect[:, 0])) > 0.3
