"""Detector-conditioned quantum trajectories for a driven two-level emitter.

Subpackages cover the emitter algebra (:mod:`realtraj.tla`), generic SDE
stepping (:mod:`realtraj.engine`), photon counting with a realistic
avalanche photodiode (:mod:`realtraj.apd`), homodyne detection with a
photoreceiver (:mod:`realtraj.photoreceiver`), the analytically solvable
linear analogue (:mod:`realtraj.dpo`), ensemble statistics
(:mod:`realtraj.analysis`) and a batch CLI (:mod:`realtraj.cli`).
"""

__version__ = "0.1.0"

from . import analysis, apd, dpo, engine, photoreceiver, tla, trajectory  # noqa: E402,F401
