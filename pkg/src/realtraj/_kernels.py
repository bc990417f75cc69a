"""Jitted inner loops for the trajectory steppers.

Density-operator blocks are packed as real 4-vectors (ee, gg, Re eg, Im eg);
pure states stay complex 2-vectors. Generators arrive as dense real matrices
(small supersystems) or CSR arrays (voltage grid). All kernels step one
trajectory strictly sequentially and share nothing mutable.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _norm2(psi):
    return (psi[0].real**2 + psi[0].imag**2
            + psi[1].real**2 + psi[1].imag**2)


@njit(cache=True, inline="always")
def _mat2_vec(m, psi, out):
    out[0] = m[0, 0] * psi[0] + m[0, 1] * psi[1]
    out[1] = m[1, 0] * psi[0] + m[1, 1] * psi[1]


@njit(cache=True)
def dense_euler_run(state, gen, dt, n_steps):
    """state <- (1 + dt*gen)^n_steps state for a dense real generator."""
    dim = state.size
    scratch = np.empty(dim)
    for _ in range(n_steps):
        for i in range(dim):
            acc = 0.0
            for j in range(dim):
                acc += gen[i, j] * state[j]
            scratch[i] = acc
        for i in range(dim):
            state[i] += dt * scratch[i]


@njit(cache=True)
def apd_triple_advance(psi, rho_i, sup, kp, gi, gr, dt, n_steps,
                       surv, r_jump):
    """Advance the three photon-counting observers by up to n_steps.

    psi: unnormalised pure state of the perfect observer (complex 2-vec).
    rho_i: intermediate observer block, real packing (4,).
    sup: realistic supersystem (ready, charged, dead) real packing (12,).
    kp: no-detection generator for psi (complex 2x2), d psi = -kp psi dt.
    gi, gr: real dense drift generators for rho_i and sup.

    Returns (steps_taken, survival, jumped): the survival probability since
    the last perfect jump is surv * |psi|^2 relative to unit entry norm, and
    the loop exits early when it crosses the jump threshold.
    """
    tmp = np.empty(2, dtype=np.complex128)
    di = np.empty(4)
    dr = np.empty(12)
    taken = 0
    jumped = False
    for _ in range(n_steps):
        _mat2_vec(kp, psi, tmp)
        psi[0] -= dt * tmp[0]
        psi[1] -= dt * tmp[1]
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += gi[i, j] * rho_i[j]
            di[i] = acc
        for i in range(4):
            rho_i[i] += dt * di[i]
        for i in range(12):
            acc = 0.0
            for j in range(12):
                acc += gr[i, j] * sup[j]
            dr[i] = acc
        for i in range(12):
            sup[i] += dt * dr[i]
        taken += 1
        if surv * _norm2(psi) < r_jump:
            jumped = True
            break
    return taken, surv * _norm2(psi), jumped


@njit(cache=True)
def perfect_jump_run(psi, kp_pos, kp_neg, jm_pos, jm_neg, dt, n_steps,
                     thresholds, adaptive, lo):
    """Long perfect-observer run with inline jump handling.

    thresholds holds pre-drawn uniforms consumed one per jump; the run
    aborts early (steps_done < n_steps) if they run out. lo is +1/-1 and
    flips at each jump when adaptive is set.

    Returns (n_jumps, steps_done, lo).
    """
    tmp = np.empty(2, dtype=np.complex128)
    n_jumps = 0
    surv = 1.0
    r_jump = thresholds[0]
    next_thr = 1
    for step in range(n_steps):
        if lo > 0 or not adaptive:
            _mat2_vec(kp_pos, psi, tmp)
        else:
            _mat2_vec(kp_neg, psi, tmp)
        psi[0] -= dt * tmp[0]
        psi[1] -= dt * tmp[1]
        if surv * _norm2(psi) < r_jump:
            if lo > 0 or not adaptive:
                _mat2_vec(jm_pos, psi, tmp)
            else:
                _mat2_vec(jm_neg, psi, tmp)
            nrm = np.sqrt(_norm2(tmp))
            psi[0] = tmp[0] / nrm
            psi[1] = tmp[1] / nrm
            n_jumps += 1
            if adaptive:
                lo = -lo
            if next_thr >= thresholds.size:
                return n_jumps, step + 1, lo
            surv = 1.0
            r_jump = thresholds[next_thr]
            next_thr += 1
    # renormalise before handing back
    nrm = np.sqrt(_norm2(psi))
    psi[0] /= nrm
    psi[1] /= nrm
    return n_jumps, n_steps, lo


@njit(cache=True)
def pr_chunk(psi, rho_i, grid, vprime, kp, m2, li, hm,
             indptr, indices, data, v, dv,
             gamma, noise, eta, dt, xi, zeta, wj, correlated):
    """One chunk of the homodyne triple (or standalone filter).

    grid is the flat real-packed supersystem over the voltage points; its
    linear drift lives in the CSR arrays. The xi/zeta/wj arrays hold Wiener
    increments of variance dt (pre-scaled by the caller). Per step the innovation term is
    rebuilt from the current grid mean: with ``correlated`` the output-noise
    increment is combined with the true-voltage mismatch, otherwise it is a
    plain Wiener increment. psi and rho_i are only touched in correlated
    mode. Returns the updated true voltage.
    """
    n = xi.size
    m = v.size
    dim = grid.size
    sqg = np.sqrt(gamma)
    sqeta = np.sqrt(eta)
    sq1me = np.sqrt(1.0 - eta)
    drift = np.empty(dim)
    tmp = np.empty(2, dtype=np.complex128)
    hv = np.empty(4)
    dint = np.empty(4)
    for s in range(n):
        dwj = wj[s]
        # time-t grid statistics
        tot = 0.0
        vm = 0.0
        for j in range(m):
            tr = grid[4 * j] + grid[4 * j + 1]
            tot += tr
            vm += v[j] * tr
        vm /= tot
        if correlated:
            inc = sqg * dwj + gamma * (vprime - vm) * dt
        else:
            inc = sqg * dwj
        # linear drift
        for i in range(dim):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * grid[indices[p]]
            drift[i] = acc
        # Euler update with innovation, then renormalise
        newtot = 0.0
        for j in range(m):
            f = inc * (v[j] - vm)
            base = 4 * j
            for k in range(4):
                grid[base + k] += dt * drift[base + k] + f * grid[base + k]
            newtot += grid[base] + grid[base + 1]
        scale = 1.0 / (newtot * dv)
        for i in range(dim):
            grid[i] *= scale

        if correlated:
            dw = xi[s]
            dz = zeta[s]
            # perfect observer expectation of the measured quadrature
            _mat2_vec(m2, psi, tmp)
            xphi = 2.0 * (np.conj(psi[0]) * tmp[0]
                          + np.conj(psi[1]) * tmp[1]).real
            # true capacitor voltage driven by the perfect record
            vprime += (-gamma * vprime * dt
                       - np.sqrt(gamma / noise)
                       * (sqeta * xphi * dt + sqeta * dw + sq1me * dz))
            # perfect observer: linear record-driven update, renormalised
            dy = dw + xphi * dt
            psi0 = psi[0] - dt * (kp[0, 0] * psi[0] + kp[0, 1] * psi[1]) \
                + dy * tmp[0]
            psi1 = psi[1] - dt * (kp[1, 0] * psi[0] + kp[1, 1] * psi[1]) \
                + dy * tmp[1]
            nrm = np.sqrt(psi0.real**2 + psi0.imag**2
                          + psi1.real**2 + psi1.imag**2)
            psi[0] = psi0 / nrm
            psi[1] = psi1 / nrm
            # intermediate observer, efficiency-weighted record noise
            for i in range(4):
                acch = 0.0
                accl = 0.0
                for j in range(4):
                    acch += hm[i, j] * rho_i[j]
                    accl += li[i, j] * rho_i[j]
                hv[i] = acch
                dint[i] = accl
            yint = hv[0] + hv[1]
            dwp = sqeta * dw + sq1me * dz
            for i in range(4):
                rho_i[i] += dt * dint[i] + sqeta * dwp * (hv[i] - yint * rho_i[i])
            tri = rho_i[0] + rho_i[1]
            for i in range(4):
                rho_i[i] /= tri
    return vprime


@njit(cache=True)
def kalman_chunk(state, k, gamma, noise, eta, dt, dw):
    """Advance filtered Gaussian moments (mean_x, mean_v, Dx, Dv, Dxv).

    Covariances evolve deterministically; the means are driven by the
    pre-scaled Wiener increments in dw (variance dt each).
    """
    g = np.sqrt(gamma * eta / noise)
    sqg = np.sqrt(gamma)
    for s in range(dw.size):
        mx, mv, dx, dvv, dxv = state
        state[0] = mx + (-k * mx) * dt + sqg * dw[s] * dxv
        state[1] = mv - (gamma * mv + g * mx) * dt + sqg * dw[s] * dvv
        state[2] = dx + (-2.0 * k * dx + 1.0 - gamma * dxv * dxv) * dt
        state[3] = dvv + (gamma / noise - 2.0 * g * dxv
                          - 2.0 * gamma * dvv - gamma * dvv * dvv) * dt
        state[4] = dxv - ((k + gamma) * dxv + g * (dx - 1.0)
                          + gamma * dvv * dxv) * dt
