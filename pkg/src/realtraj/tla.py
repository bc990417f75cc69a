"""Two-level emitter algebra: Bloch/density conversions, superoperators,
master-equation facts and purity functionals.

Conventions used throughout the package:

* basis ordering ``{|e>, |g>}``, so the lowering operator is
  ``sigma = |g><e|`` and the excited population is ``rho[0, 0]``;
* internal units with the decay rate ``Gamma = 1`` and time measured in
  ``1/Gamma`` (a physical value such as 300 Ms^-1 enters only when labelling
  output);
* density operators are plain 2x2 complex ``numpy`` arrays, vectorised
  row-major as ``(ee, eg, ge, gg)`` where a flat representation is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)
LOWERING = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)  # |g><e|

GROUND = np.array([0.0, 1.0], dtype=complex)
EXCITED = np.array([1.0, 0.0], dtype=complex)

#: eigenvalues of a density operator may go this far negative before we
#: treat the state as corrupted rather than merely rounded
POSITIVITY_TOL = 1e-9


class PositivityError(ValueError):
    """A density operator violated Hermiticity/positivity beyond tolerance."""


@dataclass(frozen=True)
class BlochVector:
    """Real Bloch components (x, y, z) of a two-level state."""

    x: float
    y: float
    z: float

    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


@dataclass(frozen=True)
class SystemParams:
    """Drive strength and decay rate of the emitter.

    ``omega`` is the Rabi drive in units of the decay rate; ``gamma`` is the
    decay rate itself and stays at 1 in internal units.
    """

    omega: float
    gamma: float = 1.0

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    def hamiltonian(self) -> np.ndarray:
        """Resonant drive Hamiltonian (Omega/2) sigma_x."""
        return 0.5 * self.omega * SIGMA_X

    def lowering(self) -> np.ndarray:
        """Decay channel operator c = sqrt(Gamma) sigma."""
        return np.sqrt(self.gamma) * LOWERING


def bloch_to_density(b: BlochVector | tuple[float, float, float]) -> np.ndarray:
    """Build rho = (I + x sx + y sy + z sz) / 2 from Bloch components."""
    if not isinstance(b, BlochVector):
        b = BlochVector(*b)
    return 0.5 * (IDENTITY + b.x * SIGMA_X + b.y * SIGMA_Y + b.z * SIGMA_Z)


def density_to_bloch(rho: np.ndarray, tol: float = 1e-9) -> BlochVector:
    """Invert :func:`bloch_to_density`.

    Rejects input that is not Hermitian with unit trace, since for those the
    Bloch components would silently misrepresent the operator.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise PositivityError("density operator is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise PositivityError(f"trace is {np.trace(rho)}, expected 1")
    return BlochVector(
        float(np.real(np.trace(rho @ SIGMA_X))),
        float(np.real(np.trace(rho @ SIGMA_Y))),
        float(np.real(np.trace(rho @ SIGMA_Z))),
    )


def check_density(rho: np.ndarray, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity of ``rho``.

    Violations beyond ``tol`` raise :class:`PositivityError` instead of being
    clipped; drift of the explicit Euler stepper is something we want to see,
    not hide.
    """
    rho = np.asarray(rho, dtype=complex)
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise PositivityError("density operator is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise PositivityError(f"trace is {np.trace(rho).real}, expected 1")
    eigs = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if eigs.min() < -tol:
        raise PositivityError(f"negative eigenvalue {eigs.min()}")
    return rho


def purity(rho: np.ndarray) -> float:
    """Tr[rho^2] of a normalised state; equals (1 + x^2 + y^2 + z^2)/2."""
    rho = np.asarray(rho, dtype=complex)
    return float(np.real(np.trace(rho @ rho)))


def scaled_purity(p: float, p_me: float) -> float:
    """Rescale a conditional purity between the unconditioned value (0) and
    perfect detection (1)."""
    if p_me >= 1.0:
        raise ValueError("scaled purity is undefined when the unconditioned "
                         "purity is already 1 (zero drive)")
    return (p - p_me) / (1.0 - p_me)


# ---------------------------------------------------------------------------
# superoperators
# ---------------------------------------------------------------------------

def dissipator(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[a] rho = a rho a+ - (a+ a rho + rho a+ a)/2."""
    ad = a.conj().T
    return a @ rho @ ad - 0.5 * (ad @ a @ rho + rho @ ad @ a)


def jump_map(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """J[a] rho = a rho a+ (unnormalised detection update)."""
    return a @ rho @ a.conj().T


def jump_update(a: np.ndarray, rho: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """G[a] rho = J[a] rho / Tr[J[a] rho] - rho.

    Raises when the jump probability vanishes, because the post-detection
    state is then undefined.
    """
    j = jump_map(a, rho)
    tr = float(np.real(np.trace(j)))
    if tr <= tol:
        raise DegenerateJumpError(f"jump probability {tr} is not positive")
    return j / tr - rho


def innovation_map(a: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """H[a] rho = a rho + rho a+ - Tr[a rho + rho a+] rho.

    Traceless by construction; the nonlinear term subtracts the expectation
    of the measured quadrature.
    """
    lin = a @ rho + rho @ a.conj().T
    return lin - np.real(np.trace(lin)) * rho


class DegenerateJumpError(ValueError):
    """A jump update was requested where the jump probability vanishes."""


def liouvillian(params: SystemParams, rho: np.ndarray) -> np.ndarray:
    """Unconditioned generator: -i[(Omega/2) sx, rho] + D[c] rho."""
    h = params.hamiltonian()
    return -1.0j * (h @ rho - rho @ h) + dissipator(params.lowering(), rho)


def apply_superoperator(kind: str, a: np.ndarray | None, rho: np.ndarray,
                        params: SystemParams | None = None) -> np.ndarray:
    """Apply one of the standard trajectory superoperators.

    ``kind`` is one of ``D`` (dissipator), ``J`` (jump map), ``G``
    (normalised jump update), ``H`` (innovation map) or ``L`` (full
    unconditioned generator, which requires ``params`` instead of ``a``).
    """
    if kind == "L":
        if params is None:
            raise ValueError("kind 'L' needs SystemParams")
        return liouvillian(params, rho)
    table = {"D": dissipator, "J": jump_map, "G": jump_update,
             "H": innovation_map}
    try:
        fn = table[kind]
    except KeyError:
        raise ValueError(f"unknown superoperator kind {kind!r}") from None
    return fn(np.asarray(a, dtype=complex), rho)


def superoperator_matrix(fn) -> np.ndarray:
    """4x4 matrix of a linear superoperator in the row-major vec basis."""
    m = np.zeros((4, 4), dtype=complex)
    for k in range(4):
        e = np.zeros(4, dtype=complex)
        e[k] = 1.0
        m[:, k] = fn(e.reshape(2, 2)).reshape(4)
    return m


def liouvillian_matrix(params: SystemParams) -> np.ndarray:
    """4x4 matrix of the unconditioned generator on vec(rho)."""
    return superoperator_matrix(lambda r: liouvillian(params, r))


# ---------------------------------------------------------------------------
# master-equation facts
# ---------------------------------------------------------------------------

def me_steady_state(params: SystemParams) -> np.ndarray:
    """Closed-form stationary state of the unconditioned master equation."""
    om, ga = params.omega, params.gamma
    denom = 2.0 * om**2 + ga**2
    return (om**2 * IDENTITY + om * ga * SIGMA_Y
            + 0.5 * ga**2 * (IDENTITY - SIGMA_Z)) / denom


def me_steady_purity(params: SystemParams) -> float:
    """Purity of the stationary state; 1 at zero drive, 1/2 at strong drive."""
    om, ga = params.omega, params.gamma
    return 1.0 - 2.0 * (om**2 / (2.0 * om**2 + ga**2)) ** 2


def photon_flux(scheme: str, params: SystemParams) -> float:
    """Stationary photon flux at the detector for a detection scheme.

    Direct detection sees the bare fluorescence, which saturates at
    ``Gamma/2``; the adaptive scheme's weak local oscillator makes the
    combined flux ``Gamma/4`` independent of drive.
    """
    om, ga = params.omega, params.gamma
    if scheme == "direct":
        return ga * om**2 / (2.0 * om**2 + ga**2)
    if scheme == "adaptive":
        return ga / 4.0
    raise ValueError(f"unknown scheme {scheme!r}")


def support_contains(rho_b: np.ndarray, rho_a: np.ndarray,
                     tol: float = POSITIVITY_TOL,
                     overlap_tol: float | None = None) -> bool:
    """True when the support of ``rho_a`` lies inside the support of ``rho_b``.

    Equivalent to the existence of eps > 0 with ``rho_b - eps rho_a >= 0``:
    a weaker observer's state must contain what a better-informed observer
    knows. Decided by eigen-decomposition: directions of ``rho_b`` with
    eigenvalue below ``tol`` must carry at most ``overlap_tol`` of ``rho_a``
    (defaults to ``tol``). When checking states produced by a finite-step
    integrator, both thresholds should sit above the per-sample
    discretisation error rather than at the exact-arithmetic default.
    """
    if overlap_tol is None:
        overlap_tol = tol
    rho_b = np.asarray(rho_b, dtype=complex)
    rho_a = np.asarray(rho_a, dtype=complex)
    eigvals, eigvecs = np.linalg.eigh(0.5 * (rho_b + rho_b.conj().T))
    for val, vec in zip(eigvals, eigvecs.T):
        if val <= tol:  # null direction of rho_b must be dark in rho_a
            overlap = np.real(np.vdot(vec, rho_a @ vec))
            if overlap > overlap_tol:
                return False
    return True
