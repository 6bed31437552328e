"""End-to-end acceptance gate.

Each test exercises one headline capability of the simulator through its
public experiment entry points, prints a single PASS/FAIL line with the
measured numbers, and then asserts the pinned bounds.  Expensive studies
run once per module and are shared.
"""

import time

import numpy as np
import pytest

from tacsim.config import load_config
from tacsim.disturbance import adjacent_snr_sweep, estimate_earth_field
from tacsim.errors import RankDeficient
from tacsim.estimation import (
    CharacterizationSweep,
    SweepSample,
    estimate_force,
    estimate_torque,
    fit_calibration,
    select_blend,
)
from tacsim.experiments import run_characterize, run_disturbance, run_grasp, run_stream
from tacsim.grasp import Phase
from tacsim.pipeline import (
    MovingAverage,
    StreamConfig,
    StreamProcessor,
    TactileFrame,
    decode_frames,
    encode_frames,
)
from tacsim.rotations import axis_angle
from tacsim.sensor import ElastomerSpec, apply_hysteresis

QUIET_NOISE = [
    "noise.fa1_sigma_counts=0",
    "noise.sa2_sigma_ut=0",
    "noise.quantization_ut=0",
]


def report(capsys, index, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {index:02d} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def flat_frame(t, counts, flux, finger=0):
    return TactileFrame(
        timestamp_us=t,
        finger_id=finger,
        fa1=np.full((4, 4), counts, dtype=int),
        sa2=np.asarray(flux, dtype=np.float32),
    )


def random_frame(rng, t):
    return TactileFrame(
        timestamp_us=int(t),
        finger_id=int(rng.integers(0, 4)),
        fa1=rng.integers(0, 1024, size=(4, 4)),
        sa2=rng.normal(scale=800.0, size=3).astype(np.float32),
    )


# ---------------------------------------------------------------------------
# shared expensive runs
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def quiet_characterize():
    cfg = load_config(overrides=QUIET_NOISE)
    t0 = time.perf_counter()
    result = run_characterize(cfg)
    return result, time.perf_counter() - t0


@pytest.fixture(scope="module")
def default_characterize():
    return run_characterize(load_config())


@pytest.fixture(scope="module")
def disturbance_result():
    return run_disturbance(load_config())


@pytest.fixture(scope="module")
def egg_runs():
    return [run_grasp(load_config()) for _ in range(3)]


@pytest.fixture(scope="module")
def tweezers_run():
    cfg = load_config(overrides=["grasp.object=tweezers", "grasp.policy=hysteresis"])
    return run_grasp(cfg)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def test_01_contact_location(quiet_characterize, default_characterize, capsys):
    quiet, seconds = quiet_characterize
    quiet_rmse = [m.location_rmse_mm for m in quiet.metrics]
    noisy_rmse = [m.location_rmse_mm for m in default_characterize.metrics]
    ok = (
        len(quiet_rmse) == 5
        and max(quiet_rmse) <= 0.05
        and max(noisy_rmse) <= 1.0
        and seconds < 10.0
    )
    report(
        capsys, 1, "contact location",
        ok,
        f"noise-free RMSE max {max(quiet_rmse):.4f} mm (<= 0.05), "
        f"default-noise per-location max {max(noisy_rmse):.4f} mm (<= 1.0), "
        f"runtime {seconds:.2f} s (< 10)",
    )


def test_02_force_calibration(default_characterize, capsys):
    # synthetic round trip on exactly linear channels
    kx, bx, ky, by, kz, bz = 3.3e-3, 2e-3, 2.9e-3, -1e-2, 3.1e-4, 5e-2
    db_x = np.linspace(-400.0, 400.0, 9)
    db_y = np.linspace(-250.0, 350.0, 9)
    sums = np.linspace(100.0, 6500.0, 9)
    samples = [
        SweepSample(
            force_true_n=np.array([kx * x + bx, ky * y + by, kz * s + bz]),
            location_true_mm=np.array([6.25, 6.25]),
            fa1_rel=np.full((4, 4), s / 16.0),
            sa2_rel=np.array([x, y, 0.2 * s]),
        )
        for x, y, s in zip(db_x, db_y, sums)
    ]
    params = fit_calibration([CharacterizationSweep("synthetic", samples)], blend=0.0)
    rel_err = max(
        abs(params.k[0] - kx) / kx,
        abs(params.k[1] - ky) / ky,
        abs(params.k[2] / params.scale_sum - kz) / kz,
        abs(params.b[0] - bx) / abs(bx),
        abs(params.b[1] - by) / abs(by),
        abs(params.b[2] - bz) / abs(bz),
    )

    noisy_rmse = [m.force_rmse_n for m in default_characterize.metrics]
    ok = rel_err <= 1e-6 and max(noisy_rmse) <= 0.32
    report(
        capsys, 2, "force calibration",
        ok,
        f"synthetic round-trip rel err {rel_err:.2e} (<= 1e-6), "
        f"default-noise tri-axis RMSE max {max(noisy_rmse):.4f} N (<= 0.32)",
    )


def test_03_channel_blend_selection(default_characterize, capsys):
    a_default = default_characterize.params.blend

    swapped = []
    for sweep in default_characterize.sweeps:
        samples = [
            SweepSample(
                force_true_n=s.force_true_n,
                location_true_mm=s.location_true_mm,
                fa1_rel=np.full((4, 4), s.sa2_rel[2] / 16.0),
                sa2_rel=np.array([s.sa2_rel[0], s.sa2_rel[1], s.fa1_sum]),
            )
            for s in sweep.samples
        ]
        swapped.append(CharacterizationSweep(sweep.location_label, samples))
    a_swapped, _, _ = select_blend(swapped)

    ok = a_default == 0.0 and a_swapped == 1.0
    report(
        capsys, 3, "redundancy weight",
        ok,
        f"default channels a* = {a_default} (expect 0.0), "
        f"swapped channels a* = {a_swapped} (expect 1.0)",
    )


def test_04_torque(default_characterize, capsys):
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(10_000):
        loc = rng.uniform(0.0, 10.0, size=2)
        force = rng.uniform(-10.0, 10.0, size=3)
        joint = rng.uniform(-10.0, 10.0, size=3)
        r = np.array([loc[0] - joint[0], loc[1] - joint[1], -joint[2]])
        manual = np.array(
            [
                r[1] * force[2] - r[2] * force[1],
                r[2] * force[0] - r[0] * force[2],
                r[0] * force[1] - r[1] * force[0],
            ]
        )
        err = np.max(np.abs(estimate_torque(loc, force, joint) - manual))
        worst = max(worst, err)

    noisy_rmse = [m.torque_rmse_nmm for m in default_characterize.metrics]
    ok = worst <= 1e-12 and max(noisy_rmse) <= 0.5
    report(
        capsys, 4, "torque",
        ok,
        f"cross-product max abs err {worst:.2e} N*mm over 1e4 pairs (<= 1e-12), "
        f"pipeline RMSE max {max(noisy_rmse):.4f} N*mm (<= 0.5)",
    )


def test_05_earth_field_estimator(capsys):
    from tacsim.disturbance import RotationObservation

    rng = np.random.default_rng(7)
    worst_rel = 0.0
    for _ in range(100):
        b_true = rng.uniform(-60.0, 60.0, size=3)
        while np.linalg.norm(b_true) < 1.0:
            b_true = rng.uniform(-60.0, 60.0, size=3)
        rotations = [
            axis_angle(rng.normal(size=3), rng.uniform(0.3, 2.8)) for _ in range(3)
        ]
        obs = [RotationObservation(R, (R - np.eye(3)) @ b_true) for R in rotations]
        b_est, _ = estimate_earth_field(obs)
        worst_rel = max(worst_rel, np.linalg.norm(b_est - b_true) / np.linalg.norm(b_true))

    blind_failures = 0
    for _ in range(20):
        axis = rng.normal(size=3)
        b_true = rng.uniform(-60.0, 60.0, size=3)
        obs = [
            RotationObservation(axis_angle(axis, t), (axis_angle(axis, t) - np.eye(3)) @ b_true)
            for t in (0.5, 1.1, 2.3)
        ]
        try:
            estimate_earth_field(obs)
            blind_failures += 1
        except RankDeficient:
            pass

    ok = worst_rel <= 1e-9 and blind_failures == 0
    report(
        capsys, 5, "earth-field estimator",
        ok,
        f"exact recovery worst rel err {worst_rel:.2e} over 100 runs (<= 1e-9), "
        f"single-axis families flagged blind {20 - blind_failures}/20",
    )


def test_06_disturbance_cancellation(disturbance_result, capsys):
    res = disturbance_result
    ok = (
        abs(res.reduction - 0.053) <= 0.015
        and res.recovery_snr >= 0.698 - 0.10
        and res.snr_post > res.snr_pre
    )
    report(
        capsys, 6, "disturbance cancellation",
        ok,
        f"tilt SNR drop {100 * res.reduction:.2f}% (5.3 +- 1.5), "
        f"recovered {100 * res.recovery_snr:.1f}% of the loss (>= 59.8), "
        f"SNR {res.snr_pre:.4f} -> {res.snr_post:.4f}",
    )


def test_07_marker_ratio_sweep(capsys):
    rep = adjacent_snr_sweep()
    ids = rep.argmax_ids()
    far = rep.dy_mm >= 16.0
    winner_ok = bool(np.all(ids[far] == 2))
    t2 = rep.table(2)
    snr2_16 = float(t2[t2[:, 0] == 16.0][0, 3])
    monotone_ok = all(
        bool(np.all(np.diff(rep.table(mid)[:, 3]) > 0.0)) for mid in (1, 2, 3, 4)
    )
    ok = winner_ok and snr2_16 >= 0.93 - 0.02 and monotone_ok
    report(
        capsys, 7, "marker ratio sweep",
        ok,
        f"marker 2 best at all offsets >= 16 mm: {winner_ok}, "
        f"ratio2(16 mm) = {snr2_16:.4f} (>= 0.91), "
        f"strictly increasing for all 4 markers: {monotone_ok}",
    )


def test_08_stream_algebra(capsys):
    # constant input leaves the filter exactly on the baseline-subtracted level
    cfg = StreamConfig()
    proc = StreamProcessor(cfg)
    dt = 4000
    t = 0
    for _ in range(cfg.init_samples):
        t += dt
        proc.process(flat_frame(t, counts=500, flux=(0.0, 0.0, 1600.0)))
    dc_exact = True
    for _ in range(50):
        t += dt
        rel = proc.process(flat_frame(t, counts=510, flux=(3.0, 0.0, 1600.0)))
        dc_exact = dc_exact and bool(np.all(rel.fa1 == 10.0)) and rel.sa2[0] == 3.0

    rng = np.random.default_rng(5)
    noise = rng.normal(0.0, 1.0, size=200_000)
    ma = MovingAverage(6)
    smoothed = np.array([ma.update(np.array([v]))[0] for v in noise])[6:]
    ratio = float(np.std(smoothed) * np.sqrt(6))
    sigma_ok = abs(ratio - 1.0) <= 0.10

    frames = [random_frame(rng, i) for i in range(10_000)]
    decoded = decode_frames(encode_frames(frames))
    codec_ok = len(decoded) == len(frames) and all(
        d.timestamp_us == f.timestamp_us
        and d.finger_id == f.finger_id
        and np.array_equal(d.fa1, f.fa1)
        and np.array_equal(d.sa2, f.sa2)
        for d, f in zip(decoded, frames)
    )

    stream = run_stream(load_config())
    n = len(stream.frames)
    per_finger = {f: 0 for f in (0, 1)}
    for fr in stream.frames:
        per_finger[fr.finger_id] += 1
    channels = stream.frames[0].fa1.size + stream.frames[0].sa2.size
    count_ok = n == 500 and per_finger == {0: 250, 1: 250} and channels == 19

    ok = dc_exact and sigma_ok and codec_ok and count_ok
    report(
        capsys, 8, "stream algebra",
        ok,
        f"constant-input exact: {dc_exact}, "
        f"white-noise sigma ratio x sqrt6 = {ratio:.3f} (1 +- 0.10), "
        f"codec identity over 1e4 frames: {codec_ok}, "
        f"1 s = {per_finger[0]} x 2 fingers x {channels} channels",
    )


def test_09_grasp_controller(egg_runs, tweezers_run, capsys):
    egg = egg_runs[0]
    trace = egg.trace
    threshold = load_config().get("grasp", "threshold")
    interval = load_config().get("stream", "ma_window")

    peak_force = max(r.contact_force_n for r in trace.rows)
    crush = load_config().get("grasp", "egg_crush_n")
    held = (
        trace.state.phase is Phase.HOLDING
        and trace.event_tick("hold_start") is not None
        and peak_force < crush
    )
    overshoots, quanta = [], []
    for f in (0, 1):
        halt = trace.event_tick(f"halt_finger{f}")
        g_at = {r.tick: r.signal for r in trace.rows if r.finger == f}
        overshoots.append(g_at[halt] - threshold)
        quanta.append(g_at[halt] - g_at[halt - interval])
    overshoot_ok = all(o <= q for o, q in zip(overshoots, quanta))

    def signature(run):
        return (
            [(r.tick, r.phase, r.finger, r.motor_deg, r.signal, r.contact_force_n, r.event)
             for r in run.trace.rows],
            run.trace.events,
        )

    deterministic = (
        signature(egg_runs[0]) == signature(egg_runs[1]) == signature(egg_runs[2])
    )

    tw = tweezers_run.trace
    names = [name for _, name in tw.events]
    sequence_ok = names[:1] == ["closing_start"] and names[-2:] == ["release_start", "done"]
    hold_ticks = tw.event_tick("release_start") - tw.event_tick("hold_start")
    hold_ok = abs(hold_ticks - 500) <= 1
    lin = tweezers_run.linearity
    lin_ok = lin is not None and lin.r2 >= 0.99 and len(lin.sizes_mm) >= 5

    ok = held and overshoot_ok and deterministic and sequence_ok and hold_ok and lin_ok
    report(
        capsys, 9, "grasp controller",
        ok,
        f"egg closed->holding, peak {peak_force:.1f} N < {crush:.0f} N crush: {held}, "
        f"overshoot {max(overshoots):.0f} <= last-step quantum {min(quanta):.0f}, "
        f"3 seeded runs identical: {deterministic}, "
        f"pick sequence close/hold/release: {sequence_ok}, hold {hold_ticks} ticks (500 +- 1), "
        f"linearity R2 = {lin.r2:.4f} over {len(lin.sizes_mm)} sizes (>= 0.99)",
    )


def test_10_hysteresis_loop(capsys):
    elastomer = ElastomerSpec()
    up = np.linspace(0.0, 1.2, 1201)
    path = np.concatenate([up, up[::-1][1:]])
    out = apply_hysteresis(path, elastomer.backlash_mm, elastomer.dead_zone_mm)
    press, release = out[: len(up)], out[len(up) - 1:][::-1]
    gap = float(np.max(np.abs(press - release)))
    full_scale = float(out.max() - out.min())
    ratio = gap / full_scale
    dead = bool(np.all(out[: len(up)][up <= 0.2] == 0.0))
    ok = ratio <= 0.02 and dead
    report(
        capsys, 10, "hysteresis loop",
        ok,
        f"press/release max gap {gap:.4f} mm of {full_scale:.3f} mm span "
        f"= {100 * ratio:.2f}% (<= 2%), flat through first 0.2 mm: {dead}",
    )
