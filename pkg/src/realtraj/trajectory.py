"""Shared containers for correlated three-observer runs and their CSV form."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class RecordStreams:
    """Event times (units of 1/Gamma) produced by one noise realisation.

    ``jump_times`` are the perfect observer's detections; ``accepted`` marks
    which of them produced a charged pair. ``cpc_times`` merge accepted jumps
    with dark counts, and each entry pairs with an avalanche one response
    delay later and a reset one dead time after that.
    """

    jump_times: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    cpc_times: list = field(default_factory=list)
    dark: list = field(default_factory=list)
    avalanche_times: list = field(default_factory=list)
    reset_times: list = field(default_factory=list)
    lo_flip_times: list = field(default_factory=list)

    def as_arrays(self) -> dict:
        return {k: np.asarray(v, dtype=float if k not in ("accepted", "dark") else bool)
                for k, v in self.__dict__.items()}


@dataclass
class TripleTrajectory:
    """Lockstep samples of the perfect / intermediate / realistic observers.

    Bloch arrays have shape (n, 3); detector fields are scheme specific
    (state occupations for photon counting, voltage statistics for the
    photoreceiver) and stay None when not applicable.
    """

    scheme: str
    t: np.ndarray
    bloch_perfect: np.ndarray
    purity_perfect: np.ndarray
    bloch_intermediate: np.ndarray
    purity_intermediate: np.ndarray
    bloch_realistic: np.ndarray
    purity_realistic: np.ndarray
    records: RecordStreams
    # photon counting
    occupations: np.ndarray | None = None      # (n, 3) Tr[rho_0,1,2]
    lo_sign: np.ndarray | None = None          # (n,)
    dead_window: np.ndarray | None = None      # (n,) bool
    event_counts: np.ndarray | None = None     # (n, 3) jumps/cpc/avalanches
    # photoreceiver
    v_mean: np.ndarray | None = None
    v_var: np.ndarray | None = None
    v_true: np.ndarray | None = None
    v_grid: np.ndarray | None = None
    voltage_dist: np.ndarray | None = None     # (n_dist, n_grid)
    voltage_dist_t: np.ndarray | None = None

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Column names and the stacked numeric table for CSV emission."""
        names = ["t"]
        cols = [self.t]
        for tag, bloch, pur in (
            ("perfect", self.bloch_perfect, self.purity_perfect),
            ("intermediate", self.bloch_intermediate, self.purity_intermediate),
            ("realistic", self.bloch_realistic, self.purity_realistic),
        ):
            names += [f"x_{tag}", f"y_{tag}", f"z_{tag}", f"purity_{tag}"]
            cols += [bloch[:, 0], bloch[:, 1], bloch[:, 2], pur]
        if self.occupations is not None:
            names += ["trace_ready", "trace_charged", "trace_dead",
                      "lo_sign", "jumps", "cpc_events", "avalanches",
                      "dead_window"]
            cols += [self.occupations[:, 0], self.occupations[:, 1],
                     self.occupations[:, 2], self.lo_sign,
                     self.event_counts[:, 0], self.event_counts[:, 1],
                     self.event_counts[:, 2],
                     self.dead_window.astype(float)]
        if self.v_mean is not None:
            names += ["v_mean", "v_var", "v_true"]
            cols += [self.v_mean, self.v_var, self.v_true]
        return names, np.column_stack(cols)


def containment_violations(traj: TripleTrajectory, tol: float = 1e-4,
                           overlap_tol: float = 1e-3) -> list[int]:
    """Sample indices where the observer-support chain fails.

    The chain perfect -> intermediate -> realistic must hold for the exact
    conditioned states. The null threshold sits below the smallest
    eigenvalues legitimate mixed states reach, and the overlap threshold
    above the per-sample Euler error, so only genuine violations (wrongly
    correlated records, sign errors in the conditioning) are flagged: those
    put order-one weight on a direction the coarser observer excludes.
    """
    from . import tla

    bad = []
    for k in range(len(traj.t)):
        rho_p = tla.bloch_to_density(tuple(traj.bloch_perfect[k]))
        rho_i = tla.bloch_to_density(tuple(traj.bloch_intermediate[k]))
        rho_r = tla.bloch_to_density(tuple(traj.bloch_realistic[k]))
        if not (tla.support_contains(rho_i, rho_p, tol, overlap_tol)
                and tla.support_contains(rho_r, rho_i, tol, overlap_tol)
                and tla.support_contains(rho_r, rho_p, tol, overlap_tol)):
            bad.append(k)
    return bad


def write_trajectory_csv(path, traj: TripleTrajectory, header_lines=()):
    """Write one trajectory as CSV with config-echo comment lines."""
    names, table = traj.columns()
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path):
    """Read back a package-written CSV.

    Returns (header_lines, columns) where columns maps each name to a numpy
    array (float where the column parses as numeric, object otherwise).
    """
    header, names, rows = [], None, []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                header.append(line.lstrip("# "))
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append(line.split(","))
    cols = {}
    for i, name in enumerate(names or []):
        raw = [r[i] for r in rows]
        try:
            cols[name] = np.array([float(x) for x in raw])
        except ValueError:
            cols[name] = np.array(raw, dtype=object)
    return header, cols


def write_voltage_matrix(path, traj: TripleTrajectory, header_lines=()):
    """Voltage-distribution snapshots: one row per sample time, one column
    per grid point (for grey-scale plots)."""
    if traj.voltage_dist is None:
        raise ValueError("trajectory carries no voltage distribution")
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("t," + ",".join(repr(float(v)) for v in traj.v_grid) + "\n")
        for t, row in zip(traj.voltage_dist_t, traj.voltage_dist):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(p)) for p in row) + "\n")
