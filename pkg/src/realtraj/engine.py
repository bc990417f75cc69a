"""Generic stepping machinery: sparse supersystem generators, explicit Euler
integration, and reproducible noise streams.

The supersystem state of a conditioned simulation is a stack of unnormalised
2x2 blocks, one per classical detector state, flattened to a single
coefficient vector. Everything linear in that vector is assembled once into
a sparse generator before the time loop starts; nonlinear or stochastic
terms are applied step by step by the callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class IntegrationError(RuntimeError):
    """The explicit Euler iteration produced non-finite or corrupted state."""


@dataclass(frozen=True)
class GeneratorTerm:
    """One linear contribution: ``coeff * op`` mapping block ``col`` into
    block ``row`` of the supersystem vector.

    ``op`` is a dense matrix on a single block (identity when omitted).
    """

    row: int
    col: int
    coeff: complex
    op: np.ndarray | None = None


class SparseGenerator:
    """Immutable sparse matrix over the flat supersystem vector.

    Stored both as a ``scipy`` CSR matrix (assembly, algebra, verification)
    and as raw CSR arrays for the jitted inner loops. Safe to share between
    trajectory workers.
    """

    def __init__(self, matrix: sp.spmatrix, n_blocks: int, block_dim: int):
        self._csr = sp.csr_matrix(matrix)
        self._csr.sum_duplicates()
        self.n_blocks = n_blocks
        self.block_dim = block_dim
        self.shape = self._csr.shape

    @property
    def indptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def data(self) -> np.ndarray:
        return self._csr.data

    def apply(self, state: np.ndarray) -> np.ndarray:
        return self._csr @ state

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def triples(self) -> list[tuple[int, int, complex]]:
        coo = self._csr.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def __add__(self, other: "SparseGenerator") -> "SparseGenerator":
        if (self.n_blocks, self.block_dim) != (other.n_blocks, other.block_dim):
            raise ValueError("generator layouts differ")
        return SparseGenerator(self._csr + other._csr, self.n_blocks, self.block_dim)


def assemble_generator(n_blocks: int, block_dim: int,
                       terms: list[GeneratorTerm],
                       probe_rng: np.random.Generator | None = None,
                       probe_tol: float = 1e-12) -> SparseGenerator:
    """Assemble a sparse generator from block-coupling terms.

    On assembly the sparse matrix is checked against a direct term-by-term
    evaluation on random probe states, which guards against indexing bugs in
    the flattening.
    """
    dim = n_blocks * block_dim
    rows, cols, vals = [], [], []
    for t in terms:
        if not (0 <= t.row < n_blocks and 0 <= t.col < n_blocks):
            raise ValueError(f"block index out of range in {t}")
        op = np.eye(block_dim, dtype=complex) if t.op is None else np.asarray(t.op, dtype=complex)
        if op.shape != (block_dim, block_dim):
            raise ValueError(f"operator shape {op.shape} does not match block dim {block_dim}")
        nz = np.nonzero(op)
        for i, j in zip(*nz):
            rows.append(t.row * block_dim + i)
            cols.append(t.col * block_dim + j)
            vals.append(t.coeff * op[i, j])
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)
    gen = SparseGenerator(mat.tocsr(), n_blocks, block_dim)

    rng = probe_rng or np.random.default_rng(0)
    for _ in range(3):
        probe = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        direct = np.zeros(dim, dtype=complex)
        for t in terms:
            op = np.eye(block_dim, dtype=complex) if t.op is None else np.asarray(t.op, dtype=complex)
            blk = probe[t.col * block_dim:(t.col + 1) * block_dim]
            direct[t.row * block_dim:(t.row + 1) * block_dim] += t.coeff * (op @ blk)
        err = np.max(np.abs(gen.apply(probe) - direct)) / max(1.0, np.max(np.abs(direct)))
        if err > probe_tol:
            raise AssertionError(f"assembled generator disagrees with direct "
                                 f"evaluation by {err}")
    return gen


def euler_step(state: np.ndarray, generator: SparseGenerator | np.ndarray,
               dt: float, per_step_terms: np.ndarray | None = None) -> np.ndarray:
    """One explicit Euler step: state + dt * (G state) + per-step terms.

    No normalisation happens here. Non-finite output raises, since blow-up
    is the known failure mode of the explicit scheme and must stay visible.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(generator, SparseGenerator):
        drift = generator.apply(state)
    else:
        drift = np.asarray(generator) @ state
    out = state + dt * drift
    if per_step_terms is not None:
        out = out + per_step_terms
    if not np.all(np.isfinite(out.view(np.float64) if out.dtype == complex else out)):
        raise IntegrationError("non-finite state after Euler step (explicit "
                               "scheme exploded; reduce dt)")
    return out


def hermitian_real_rep(superop: np.ndarray) -> np.ndarray:
    """Real 4x4 action of a Hermiticity-preserving superoperator.

    The complex vec basis ``(ee, eg, ge, gg)`` is traded for the real packing
    ``(ee, gg, Re eg, Im eg)`` that the jitted kernels step. Raises if the
    map does not preserve Hermiticity (residual imaginary part).
    """
    # vecC = U @ vecR with vecR = (ee, gg, x, y), eg = x + iy, ge = x - iy
    u = np.array([[1, 0, 0, 0],
                  [0, 0, 1, 1j],
                  [0, 0, 1, -1j],
                  [0, 1, 0, 0]], dtype=complex)
    u_inv = np.array([[1, 0, 0, 0],
                      [0, 0, 0, 1],
                      [0, 0.5, 0.5, 0],
                      [0, -0.5j, 0.5j, 0]], dtype=complex)
    real = u_inv @ np.asarray(superop, dtype=complex) @ u
    if np.max(np.abs(real.imag)) > 1e-12:
        raise ValueError("superoperator does not preserve Hermiticity")
    return np.ascontiguousarray(real.real)


def pack_hermitian(rho: np.ndarray) -> np.ndarray:
    """2x2 Hermitian matrix -> real vector (ee, gg, Re eg, Im eg)."""
    rho = np.asarray(rho, dtype=complex)
    return np.array([rho[0, 0].real, rho[1, 1].real,
                     rho[0, 1].real, rho[0, 1].imag])


def unpack_hermitian(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_hermitian`."""
    ee, gg, x, y = vec
    return np.array([[ee, x + 1j * y], [x - 1j * y, gg]], dtype=complex)


def real_dense(gen: SparseGenerator) -> np.ndarray:
    """Dense real-packed form of a block generator (small supersystems)."""
    if gen.block_dim != 4:
        raise ValueError("real packing is defined for 4-dim (2x2) blocks")
    big = gen.to_dense()
    n = gen.n_blocks
    out = np.zeros(gen.shape)
    for bi in range(n):
        for bj in range(n):
            blk = big[4 * bi:4 * bi + 4, 4 * bj:4 * bj + 4]
            if np.any(blk):
                out[4 * bi:4 * bi + 4, 4 * bj:4 * bj + 4] = hermitian_real_rep(blk)
    return np.ascontiguousarray(out)


def real_csr(gen: SparseGenerator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """CSR arrays of the real-packed form of a block generator.

    Every 4-dim block of the complex generator is conjugated into the
    Hermitian packing; the result must be real (checked blockwise).
    """
    if gen.block_dim != 4:
        raise ValueError("real packing is defined for 4-dim (2x2) blocks")
    coo = gen._csr.tocoo()
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for r, c, v in zip(coo.row, coo.col, coo.data):
        key = (r // 4, c // 4)
        blk = blocks.setdefault(key, np.zeros((4, 4), dtype=complex))
        blk[r % 4, c % 4] += v
    rows, cols, vals = [], [], []
    for (bi, bj), blk in blocks.items():
        real = hermitian_real_rep(blk)
        nz = np.nonzero(np.abs(real) > 0)
        for i, j in zip(*nz):
            rows.append(4 * bi + i)
            cols.append(4 * bj + j)
            vals.append(real[i, j])
    m = sp.coo_matrix((vals, (rows, cols)), shape=gen.shape).tocsr()
    m.sum_duplicates()
    return (m.indptr.astype(np.int64), m.indices.astype(np.int64),
            np.ascontiguousarray(m.data, dtype=np.float64))


# ---------------------------------------------------------------------------
# stochastic inputs
# ---------------------------------------------------------------------------

@dataclass
class NoiseStream:
    """Seeded random inputs for one trajectory.

    Sub-streams keep Wiener increments and uniform deviates independent of
    each other, so that consuming more of one kind never shifts the other.
    An identical ``seed`` (and spawn key) reproduces the streams exactly.
    """

    seed: int
    spawn_key: tuple[int, ...] = ()
    counter: int = field(default=0, init=False)

    def __post_init__(self):
        root = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        kids = root.spawn(4)
        self._wiener = np.random.Generator(np.random.PCG64(kids[0]))
        self._uniform = np.random.Generator(np.random.PCG64(kids[1]))
        self._wiener_aux = np.random.Generator(np.random.PCG64(kids[2]))
        self._wiener_out = np.random.Generator(np.random.PCG64(kids[3]))

    def spawn(self, key: int) -> "NoiseStream":
        """Independent child stream, deterministic in (seed, key)."""
        return NoiseStream(self.seed, self.spawn_key + (key,))

    def wiener(self, n: int, dt: float) -> np.ndarray:
        """n Wiener increments of variance dt (shot-noise channel)."""
        self.counter += n
        return self._wiener.standard_normal(n) * np.sqrt(dt)

    def wiener_aux(self, n: int, dt: float) -> np.ndarray:
        """Second independent Wiener channel (vacuum noise of an
        inefficient diode)."""
        self.counter += n
        return self._wiener_aux.standard_normal(n) * np.sqrt(dt)

    def wiener_output(self, n: int, dt: float) -> np.ndarray:
        """Third independent Wiener channel (electronic output noise)."""
        self.counter += n
        return self._wiener_out.standard_normal(n) * np.sqrt(dt)

    def uniform(self) -> float:
        """Uniform deviate in [0, 1)."""
        self.counter += 1
        return float(self._uniform.random())

    def uniform_open(self) -> float:
        """Uniform deviate in (0, 1]; safe as a log argument."""
        self.counter += 1
        return float(1.0 - self._uniform.random())


def draw_response_time(r: float, gamma_r: float, tau_dd: float) -> float:
    """Stochastic dead interval: exponential response delay plus the fixed
    dead time, tau' = -ln(r)/gamma_r + tau_dd.

    ``r`` must lie in (0, 1]; r = 1 gives exactly ``tau_dd``. An infinite
    response rate gives a zero delay.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"uniform deviate must be in (0, 1], got {r}")
    if gamma_r <= 0:
        raise ValueError(f"response rate must be positive, got {gamma_r}")
    if np.isinf(gamma_r):
        return tau_dd
    return -np.log(r) / gamma_r + tau_dd


class NormJumpClock:
    """Jump timing by comparing the survival norm with a uniform threshold.

    The unnormalised no-detection evolution shrinks the state norm at
    exactly the detection rate, so the first time the accumulated survival
    probability drops below a uniform deviate is a correctly distributed
    jump time. Norm growth between jumps signals an integration bug.
    """

    def __init__(self, threshold: float, tol: float = 1e-9):
        self.survival = 1.0
        self.threshold = float(threshold)
        self.tol = tol

    def update(self, ratio: float) -> bool:
        """Feed one step's norm ratio; returns True when the jump fires."""
        if ratio > 1.0 + self.tol:
            raise IntegrationError(f"survival norm increased by factor {ratio}")
        self.survival *= ratio
        return self.survival < self.threshold

    def reset(self, threshold: float):
        self.survival = 1.0
        self.threshold = float(threshold)
