"""Magnetic field models for the marker magnet under the fingertip.

Two evaluators are provided:

* ``dipole_flux`` -- ideal point dipole.  Exact far-field behaviour, used as
  the reference model for moment calibration and for closed-form checks.
* ``cylinder_flux`` -- a uniformly magnetised cylinder discretised into
  sub-dipoles (equal-volume quadrature).  In the near field a finite magnet
  is *not* a point dipole: signal per unit moment depends on the magnet's
  shape.  This is what makes differently sized markers genuinely different
  in the interference study; with a pure point-dipole model every marker
  would have an identical signal-to-disturbance ratio by construction.

Units: millimetres in, microtesla out, moments in A*m^2.  For the cylinder
model the offset is measured from the centre of the magnet's bottom face
(the face looking at the flux sensor); sub-dipoles fill z in [0, height].
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NoConvergence, OffsetTooSmall

# B[uT] = MU0_4PI * m[A m^2] * geometry / r[mm]^3
MU0_4PI_UT_MM3 = 1.0e8

# closest approach (mm) at which the dipole approximation is still accepted
MIN_OFFSET_MM = 0.5

# equal-volume quadrature of the cylinder: radial shells x angles x layers
_QUAD_RADIAL = 3
_QUAD_ANGULAR = 8
_QUAD_AXIAL = 3

CALIBRATION_PROBE_MM = 1.0  # lateral displacement used to define the signal
CALIBRATION_REL_TOL = 1e-6
CALIBRATION_MAX_ITER = 200


@dataclass(frozen=True)
class MagnetSpec:
    """Cylindrical marker magnet, axially magnetised along +z."""

    moment_a_m2: float
    height_mm: float = 1.0
    diameter_mm: float = 3.0
    magnet_id: int = 2

    def __post_init__(self):
        if self.moment_a_m2 <= 0.0 or self.height_mm <= 0.0 or self.diameter_mm <= 0.0:
            raise ValueError("magnet moment and dimensions must be strictly positive")


def _dipole_field(moment_vec: np.ndarray, r_mm: np.ndarray) -> np.ndarray:
    """Field of point dipole(s) summed at a single point. r_mm is (n,3)."""
    rn = np.linalg.norm(r_mm, axis=1)
    rhat = r_mm / rn[:, None]
    mdot = rhat @ moment_vec
    contrib = (3.0 * mdot[:, None] * rhat - moment_vec) / rn[:, None] ** 3
    return MU0_4PI_UT_MM3 * contrib.sum(axis=0)


def dipole_flux(magnet: MagnetSpec, offset_mm) -> np.ndarray:
    """Point-dipole flux density (uT) at ``offset_mm`` from the dipole.

    Raises OffsetTooSmall within 0.5 mm of the dipole, where the model
    (and the hardware) stops being meaningful.
    """
    offset = np.asarray(offset_mm, dtype=float).reshape(3)
    if np.linalg.norm(offset) <= MIN_OFFSET_MM:
        raise OffsetTooSmall(f"|offset| = {np.linalg.norm(offset):.3g} mm <= {MIN_OFFSET_MM} mm")
    moment_vec = np.array([0.0, 0.0, magnet.moment_a_m2])
    return _dipole_field(moment_vec, offset[None, :])


@lru_cache(maxsize=32)
def _cylinder_grid(diameter_mm: float, height_mm: float) -> np.ndarray:
    """Equal-weight sub-dipole positions filling the cylinder volume."""
    radii = 0.5 * diameter_mm * np.sqrt((np.arange(_QUAD_RADIAL) + 0.5) / _QUAD_RADIAL)
    angles = 2.0 * np.pi * (np.arange(_QUAD_ANGULAR) + 0.5) / _QUAD_ANGULAR
    layers = height_mm * (np.arange(_QUAD_AXIAL) + 0.5) / _QUAD_AXIAL
    pts = [
        (r * np.cos(t), r * np.sin(t), z)
        for r in radii
        for t in angles
        for z in layers
    ]
    return np.array(pts)


def cylinder_flux(magnet: MagnetSpec, offset_mm) -> np.ndarray:
    """Flux density (uT) of the finite cylindrical magnet.

    ``offset_mm`` points from the centre of the magnet's bottom face to the
    field point.  The total moment is spread uniformly over the volume.
    """
    offset = np.asarray(offset_mm, dtype=float).reshape(3)
    radial = max(0.0, float(np.hypot(offset[0], offset[1])) - 0.5 * magnet.diameter_mm)
    axial = max(0.0, -offset[2], offset[2] - magnet.height_mm)
    if np.hypot(radial, axial) <= MIN_OFFSET_MM:
        raise OffsetTooSmall(
            f"field point within {MIN_OFFSET_MM} mm of the magnet body"
        )
    pts = _cylinder_grid(magnet.diameter_mm, magnet.height_mm)
    r = offset[None, :] - pts
    sub_moment = np.array([0.0, 0.0, magnet.moment_a_m2 / len(pts)])
    return _dipole_field(sub_moment, r)


def effective_signal(magnet: MagnetSpec, gap_mm: float, model: str = "cylinder") -> float:
    """|delta B| at the sensor for a 1 mm lateral shift of the magnet.

    The sensor sits ``gap_mm`` below the magnet; shifting the magnet +1 mm
    in x moves the field point to (-1, 0, -gap) in magnet coordinates.
    """
    flux = cylinder_flux if model == "cylinder" else dipole_flux
    rest = flux(magnet, (0.0, 0.0, -gap_mm))
    shifted = flux(magnet, (-CALIBRATION_PROBE_MM, 0.0, -gap_mm))
    return float(np.linalg.norm(shifted - rest))


def calibrate_moment(
    target_signal_ut: float,
    gap_mm: float,
    *,
    height_mm: float = 1.0,
    diameter_mm: float = 3.0,
    magnet_id: int = 2,
    model: str = "dipole",
) -> MagnetSpec:
    """Find the moment whose 1 mm-shift signal at ``gap_mm`` is the target.

    Bisection on the moment; the signal is monotone in it.  Raises
    NoConvergence for non-positive targets and if the bracket/refinement
    budget of 200 iterations is exhausted.
    """
    if target_signal_ut <= 0.0:
        raise NoConvergence("target signal must be positive")

    def signal(m: float) -> float:
        spec = MagnetSpec(m, height_mm, diameter_mm, magnet_id)
        return effective_signal(spec, gap_mm, model=model)

    lo, hi = 0.0, 1e-9
    iterations = 0
    while signal(hi) < target_signal_ut:
        hi *= 4.0
        iterations += 1
        if iterations >= CALIBRATION_MAX_ITER:
            raise NoConvergence("could not bracket the target signal")
    for _ in range(iterations, CALIBRATION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        if signal(mid) < target_signal_ut:
            lo = mid
        else:
            hi = mid
        if hi - lo <= CALIBRATION_REL_TOL * hi:
            achieved = signal(hi)
            if abs(achieved - target_signal_ut) > 1e-3 * target_signal_ut:
                raise NoConvergence("bisection stalled away from the target")
            return MagnetSpec(hi, height_mm, diameter_mm, magnet_id)
    raise NoConvergence("bisection did not converge in 200 iterations")


# Marker candidates for the interference study: measured signal strengths
# with assumed cylinder geometries (id, diameter mm, height mm, signal uT).
# #2 is the marker built into the fingertip.
MARKER_CANDIDATES = (
    (1, 2.0, 2.0, 211.0),
    (2, 3.0, 1.0, 580.0),
    (3, 4.0, 2.0, 853.0),
    (4, 5.0, 3.0, 1816.0),
)


def build_marker_set(gap_mm: float = 3.0, model: str = "cylinder") -> list[MagnetSpec]:
    """Calibrate all four candidate markers at the given rest gap."""
    return [
        calibrate_moment(
            signal,
            gap_mm,
            height_mm=height,
            diameter_mm=diameter,
            magnet_id=mid,
            model=model,
        )
        for mid, diameter, height, signal in MARKER_CANDIDATES
    ]


def default_magnet(gap_mm: float = 3.0, magnet_id: int = 2, model: str = "cylinder") -> MagnetSpec:
    """The fingertip's own marker, calibrated at the rest gap."""
    for mid, diameter, height, signal in MARKER_CANDIDATES:
        if mid == magnet_id:
            return calibrate_moment(
                signal,
                gap_mm,
                height_mm=height,
                diameter_mm=diameter,
                magnet_id=mid,
                model=model,
            )
    raise ValueError(f"unknown magnet id {magnet_id}")
