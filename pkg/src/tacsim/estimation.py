"""Contact estimation: location, force, torque, and calibration fitting.

Location is the taxel-weighted centroid.  Force is affine per axis; the
normal axis blends the flux z-channel with the taxel sum through a blend
weight picked by a grid search on residual RMS.  The two z-channels are
brought to a comparable scale before blending (their standard deviations
over the calibration sweep); the channel means end up absorbed in the
fitted intercept, which keeps the zero-input output equal to ``b``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoContact, RankDeficientFit
from .sensor import TAXEL_X_MM, TAXEL_Y_MM

DEFAULT_PITCH_MM = 2.5
CONTACT_THRESHOLD_COUNTS = 5.0
BLEND_GRID_STEP = 0.05

# force/torque reference frame origin: 10 mm behind the face centre
DEFAULT_JOINT_CENTER_MM = np.array([6.25, 6.25, -10.0])


@dataclass
class CalibrationParams:
    """Per-axis affine force map plus the z-channel blend."""

    k: np.ndarray = field(default_factory=lambda: np.ones(3))
    b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    blend: float = 0.0
    pitch_mm: float = DEFAULT_PITCH_MM
    scale_bz: float = 1.0
    scale_sum: float = 1.0
    r2: np.ndarray | None = None
    rmsd_curve: np.ndarray | None = None

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=float).reshape(3)
        self.b = np.asarray(self.b, dtype=float).reshape(3)
        if not (0.0 <= self.blend <= 1.0):
            raise ValueError("blend weight must lie in [0, 1]")
        if self.pitch_mm <= 0.0:
            raise ValueError("taxel pitch must be positive")
        if not np.all(np.isfinite(self.k)) or not np.all(np.isfinite(self.b)):
            raise ValueError("slopes and intercepts must be finite")


@dataclass
class ContactEstimate:
    """Location, force, and the torque they imply about the joint.

    The torque is always recomputed from arm x force so the triple can
    never drift out of consistency.
    """

    location_mm: np.ndarray
    force_n: np.ndarray
    arm_mm: np.ndarray
    torque_nmm: np.ndarray = None

    def __post_init__(self):
        self.location_mm = np.asarray(self.location_mm, dtype=float).reshape(2)
        self.force_n = np.asarray(self.force_n, dtype=float).reshape(3)
        self.arm_mm = np.asarray(self.arm_mm, dtype=float).reshape(3)
        self.torque_nmm = np.cross(self.arm_mm, self.force_n)


@dataclass
class SweepSample:
    """One averaged dwell from a characterization run."""

    force_true_n: np.ndarray
    location_true_mm: np.ndarray
    fa1_rel: np.ndarray
    sa2_rel: np.ndarray

    @property
    def fa1_sum(self) -> float:
        return float(np.sum(self.fa1_rel))

    # frame-like aliases so a sample can feed the estimators directly
    @property
    def fa1(self) -> np.ndarray:
        return self.fa1_rel

    @property
    def sa2(self) -> np.ndarray:
        return self.sa2_rel


@dataclass
class CharacterizationSweep:
    location_label: str
    samples: list
    truth_is_noise_free: bool = True

    def force_truth(self) -> np.ndarray:
        return np.array([s.force_true_n for s in self.samples])

    def delta_b(self) -> np.ndarray:
        return np.array([s.sa2_rel for s in self.samples])

    def fa1_sums(self) -> np.ndarray:
        return np.array([s.fa1_sum for s in self.samples])


def estimate_location(
    fa1_rel,
    pitch_mm: float = DEFAULT_PITCH_MM,
    mode: str = "normalized",
    threshold_counts: float = CONTACT_THRESHOLD_COUNTS,
) -> np.ndarray:
    """Contact point (mm) from the relative taxel readings.

    ``normalized`` divides by the live response sum, making the estimate
    independent of how hard the press is.  ``literal`` divides by the taxel
    count (16) instead, so it scales with force; it is kept for comparison
    with the uncompensated formulation.  Raises NoContact when no taxel
    clears the activation threshold.
    """
    r = np.asarray(fa1_rel, dtype=float)
    if r.max() <= threshold_counts:
        raise NoContact(f"no taxel above {threshold_counts} counts")
    r = np.clip(r, 0.0, None)
    grid_x = TAXEL_X_MM / DEFAULT_PITCH_MM * pitch_mm
    grid_y = TAXEL_Y_MM / DEFAULT_PITCH_MM * pitch_mm
    if mode == "normalized":
        denom = r.sum()
    elif mode == "literal":
        denom = float(r.size)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    x = float((grid_x * r).sum() / denom)
    y = float((grid_y * r).sum() / denom)
    return np.array([x, y])


def mixed_z_channel(delta_bz, fa1_sum, params: CalibrationParams):
    """Blend the two normal-force channels on a common scale."""
    zb = np.asarray(delta_bz, dtype=float) / params.scale_bz
    zr = np.asarray(fa1_sum, dtype=float) / params.scale_sum
    return params.blend * zb + (1.0 - params.blend) * zr


def estimate_force(rel_frame, params: CalibrationParams) -> np.ndarray:
    """Affine per-axis force estimate (N) from one relative frame."""
    db = np.asarray(rel_frame.sa2, dtype=float)
    fx = params.k[0] * db[0] + params.b[0]
    fy = params.k[1] * db[1] + params.b[1]
    mixed = mixed_z_channel(db[2], np.sum(rel_frame.fa1), params)
    fz = params.k[2] * mixed + params.b[2]
    return np.array([fx, fy, float(fz)])


def estimate_torque(location_mm, force_n, joint_center_mm=None) -> np.ndarray:
    """Torque (N*mm) about the joint centre: r x F with r to the contact."""
    joint = DEFAULT_JOINT_CENTER_MM if joint_center_mm is None else np.asarray(
        joint_center_mm, dtype=float
    )
    contact = np.array([location_mm[0], location_mm[1], 0.0])
    r = contact - joint
    return np.cross(r, np.asarray(force_n, dtype=float))


def estimate_contact(rel_frame, params: CalibrationParams, joint_center_mm=None) -> ContactEstimate:
    """Full per-frame readout: where, how hard, and the implied torque."""
    joint = DEFAULT_JOINT_CENTER_MM if joint_center_mm is None else np.asarray(
        joint_center_mm, dtype=float
    )
    location = estimate_location(rel_frame.fa1, params.pitch_mm)
    force = estimate_force(rel_frame, params)
    arm = np.array([location[0], location[1], 0.0]) - joint
    return ContactEstimate(location_mm=location, force_n=force, arm_mm=arm)


def _ols_line(x: np.ndarray, y: np.ndarray):
    """Least-squares line y ~ k*x + b. Returns (k, b, r2, rms_residual)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or float(np.std(x)) == 0.0:
        raise RankDeficientFit("regressor has no spread")
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(coef[0]), float(coef[1]), r2, float(np.sqrt(ss_res / len(y)))


def _pool(sweeps):
    force = np.concatenate([s.force_truth() for s in sweeps])
    db = np.concatenate([s.delta_b() for s in sweeps])
    sums = np.concatenate([s.fa1_sums() for s in sweeps])
    return force, db, sums


def select_blend(sweeps, grid_step: float = BLEND_GRID_STEP):
    """Grid search for the z-blend weight minimizing fit residual RMS.

    Both channels are scale-normalised first so the grid is comparable.
    Ties resolve to the smaller weight.  Returns (blend, grid, rmsd_curve).
    """
    force, db, sums = _pool(sweeps)
    scale_bz = float(np.std(db[:, 2]))
    scale_sum = float(np.std(sums))
    if scale_bz == 0.0 or scale_sum == 0.0:
        raise RankDeficientFit("a z-channel is constant over the sweep")
    zb = db[:, 2] / scale_bz
    zr = sums / scale_sum
    grid = np.arange(0.0, 1.0 + grid_step / 2.0, grid_step)
    rmsd = np.empty(len(grid))
    for i, w in enumerate(grid):
        _, _, _, rms = _ols_line(w * zb + (1.0 - w) * zr, force[:, 2])
        rmsd[i] = rms
    best = float(grid[int(np.argmin(rmsd))])
    return best, grid, rmsd


def fit_calibration(sweeps, blend: float | None = None) -> CalibrationParams:
    """Fit the affine force map on pooled characterization sweeps.

    When ``blend`` is not given it is chosen by ``select_blend`` first.
    Raises RankDeficientFit if any axis regressor carries no information.
    """
    force, db, sums = _pool(sweeps)
    rmsd_curve = None
    if blend is None:
        blend, _, rmsd_curve = select_blend(sweeps)
    scale_bz = float(np.std(db[:, 2]))
    scale_sum = float(np.std(sums))
    if scale_bz == 0.0 or scale_sum == 0.0:
        raise RankDeficientFit("a z-channel is constant over the sweep")

    kx, bx, r2x, _ = _ols_line(db[:, 0], force[:, 0])
    ky, by, r2y, _ = _ols_line(db[:, 1], force[:, 1])
    mixed = blend * db[:, 2] / scale_bz + (1.0 - blend) * sums / scale_sum
    kz, bz, r2z, _ = _ols_line(mixed, force[:, 2])

    return CalibrationParams(
        k=np.array([kx, ky, kz]),
        b=np.array([bx, by, bz]),
        blend=float(blend),
        scale_bz=scale_bz,
        scale_sum=scale_sum,
        r2=np.array([r2x, r2y, r2z]),
        rmsd_curve=rmsd_curve,
    )


# ---------------------------------------------------------------------------
# calibration file io
# ---------------------------------------------------------------------------

def save_calibration(params: CalibrationParams, path, metadata: dict | None = None):
    lines = ["[calibration]"]
    for axis, i in (("x", 0), ("y", 1), ("z", 2)):
        lines.append(f"k_{axis} = {float(params.k[i])!r}")
    for axis, i in (("x", 0), ("y", 1), ("z", 2)):
        lines.append(f"b_{axis} = {float(params.b[i])!r}")
    lines.append(f"blend = {float(params.blend)!r}")
    lines.append(f"pitch_mm = {float(params.pitch_mm)!r}")
    lines.append(f"scale_bz = {float(params.scale_bz)!r}")
    lines.append(f"scale_sum = {float(params.scale_sum)!r}")
    lines.append("")
    lines.append("[diagnostics]")
    if params.r2 is not None:
        lines.append("r2 = " + ",".join(repr(float(v)) for v in params.r2))
    if params.rmsd_curve is not None:
        lines.append("rmsd_curve = " + ",".join(repr(float(v)) for v in params.rmsd_curve))
    if metadata:
        lines.append("")
        lines.append("[meta]")
        for key, value in sorted(metadata.items()):
            lines.append(f"{key} = {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_calibration(path) -> CalibrationParams:
    values: dict[str, str] = {}
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                section = line.strip("[]")
                continue
            key, _, val = line.partition("=")
            values[f"{section}.{key.strip()}"] = val.strip()
    params = CalibrationParams(
        k=np.array([float(values[f"calibration.k_{ax}"]) for ax in "xyz"]),
        b=np.array([float(values[f"calibration.b_{ax}"]) for ax in "xyz"]),
        blend=float(values["calibration.blend"]),
        pitch_mm=float(values["calibration.pitch_mm"]),
        scale_bz=float(values["calibration.scale_bz"]),
        scale_sum=float(values["calibration.scale_sum"]),
    )
    if "diagnostics.r2" in values:
        params.r2 = np.array([float(v) for v in values["diagnostics.r2"].split(",")])
    if "diagnostics.rmsd_curve" in values:
        params.rmsd_curve = np.array(
            [float(v) for v in values["diagnostics.rmsd_curve"].split(",")]
        )
    return params
