"""Magnetic interference analysis: earth-field estimation and marker SNR.

Rotating the sensor makes the (body-frame) earth field move while the
marker field stays put, so pairs of poses give linear constraints
``delta_b = (R - I) @ b_e`` on the earth field at the reference pose.
``(R - I)`` annihilates the rotation axis, so rotations about a single axis
can never pin down the component along it -- the solver refuses to guess
and reports the blind direction instead.  The printed closed form solves
the one-observation normal equations; its matrix is singular for exactly
that reason, which is why the implementation stacks observations and uses
a rank-revealing decomposition.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRotation, InvalidSignal, RankDeficient
from .magnets import MagnetSpec, build_marker_set, cylinder_flux, effective_signal
from .rotations import is_rotation

IDENTITY_TOL = 1e-9
RANK_TOL = 1e-9


def snr(signal_ut: float, disturbance_ut: float) -> float:
    """Signal fraction s / (s + d) in [0, 1] (not a power ratio)."""
    if signal_ut <= 0.0:
        raise InvalidSignal("signal strength must be positive")
    if disturbance_ut < 0.0:
        raise InvalidSignal("disturbance magnitude cannot be negative")
    return signal_ut / (signal_ut + disturbance_ut)


@dataclass
class RotationObservation:
    """Measured flux change for one rotation away from the reference pose.

    ``rotation`` maps the reference-pose field vector to the rotated-pose
    one: delta_b = (rotation - I) @ b_reference.
    """

    rotation: np.ndarray
    delta_b_ut: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.delta_b_ut = np.asarray(self.delta_b_ut, dtype=float).reshape(3)
        if not is_rotation(self.rotation):
            raise ValueError("observation rotation must be a proper rotation")


@dataclass
class FieldFitReport:
    rank: int
    singular_values: np.ndarray
    condition: float
    residual_rms_ut: float
    n_observations: int


def estimate_earth_field(observations) -> tuple[np.ndarray, FieldFitReport]:
    """Least-squares earth field (reference body frame) from rotations.

    Raises DegenerateRotation if an observation is the identity pose and
    RankDeficient (with the unobservable direction attached) whenever the
    stacked system leaves a direction unconstrained -- e.g. any number of
    rotations about one common axis.
    """
    observations = list(observations)
    if not observations:
        raise RankDeficient("no observations", null_direction=None)
    rows = []
    rhs = []
    for obs in observations:
        R = obs.rotation
        if np.linalg.norm(R - np.eye(3)) < IDENTITY_TOL:
            raise DegenerateRotation("rotation is the identity; no field change")
        rows.append(R - np.eye(3))
        rhs.append(obs.delta_b_ut)
    A = np.vstack(rows)
    y = np.concatenate(rhs)

    _, svals, vt = np.linalg.svd(A, full_matrices=True)
    if svals[-1] < RANK_TOL * svals[0]:
        null = vt[-1]
        raise RankDeficient(
            "rotation set cannot observe the field component along "
            f"({null[0]:+.3f}, {null[1]:+.3f}, {null[2]:+.3f})",
            null_direction=null,
        )
    solution, residual, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ solution
    report = FieldFitReport(
        rank=int(rank),
        singular_values=svals,
        condition=float(svals[0] / svals[-1]),
        residual_rms_ut=float(np.sqrt(np.mean(resid**2))),
        n_observations=len(observations),
    )
    return solution, report


def predicted_disturbance(b_e_ut, rotation) -> np.ndarray:
    """Expected baseline-relative earth contribution at a rotated pose."""
    R = np.asarray(rotation, dtype=float)
    return (R - np.eye(3)) @ np.asarray(b_e_ut, dtype=float)


def cancel_earth_field(sa2_ut, b_e_ut, orientation) -> np.ndarray:
    """Remove the earth contribution from a raw flux sample.

    ``orientation`` is the sensor-to-world rotation of the pose at which
    ``sa2_ut`` was measured; ``b_e_ut`` is the earth field in the world
    (reference) frame.
    """
    R = np.asarray(orientation, dtype=float)
    return np.asarray(sa2_ut, dtype=float) - R.T @ np.asarray(b_e_ut, dtype=float)


@dataclass
class SnrRow:
    magnet_id: int
    dy_mm: float
    signal_ut: float
    disturbance_ut: float
    snr: float


@dataclass
class SnrReport:
    rows: list
    dy_mm: np.ndarray
    out_files: list = field(default_factory=list)

    def table(self, magnet_id: int) -> np.ndarray:
        return np.array(
            [[r.dy_mm, r.signal_ut, r.disturbance_ut, r.snr] for r in self.rows if r.magnet_id == magnet_id]
        )

    def argmax_ids(self) -> np.ndarray:
        """Best marker id at each lateral offset."""
        best = []
        for dy in self.dy_mm:
            rows = [r for r in self.rows if r.dy_mm == dy]
            best.append(max(rows, key=lambda r: r.snr).magnet_id)
        return np.array(best)


def adjacent_snr_sweep(
    magnets: list[MagnetSpec] | None = None,
    dy_mm=None,
    gap_mm: float = 3.0,
) -> SnrReport:
    """SNR of each candidate marker against its own twin one unit over.

    The disturbance at lateral offset ``dy`` is the magnitude of the
    neighbour marker's field at this sensor (neighbour bottom face at
    (0, dy, gap) in this sensor's frame); the signal is the marker's
    1 mm effective signal at the rest gap.
    """
    if magnets is None:
        magnets = build_marker_set(gap_mm)
    if dy_mm is None:
        dy_mm = np.arange(4.0, 30.0 + 0.5, 1.0)
    dy_mm = np.asarray(dy_mm, dtype=float)
    rows = []
    for magnet in magnets:
        s = effective_signal(magnet, gap_mm, model="cylinder")
        for dy in dy_mm:
            d = float(np.linalg.norm(cylinder_flux(magnet, (0.0, -dy, -gap_mm))))
            rows.append(
                SnrRow(
                    magnet_id=magnet.magnet_id,
                    dy_mm=float(dy),
                    signal_ut=s,
                    disturbance_ut=d,
                    snr=snr(s, d),
                )
            )
    return SnrReport(rows=rows, dy_mm=dy_mm)
