import numpy as np
import pytest

from walex.errors import SingularInformationError
from walex.estimator import (
    LEGS,
    N_CORE,
    N_FULL,
    EstimatorState,
    NoiseConfig,
    SensorFrame,
    StateEstimator,
    chassis_orientation,
    chassis_position,
    complementary_turn_filter,
    gnss_residual,
    imu_residual,
    leg_measurement_covariance,
    leg_odometry_residual,
    predict_state,
    quantize_turn_angle,
    rolling_residual,
    state_boxminus,
    state_boxplus,
)
from walex.lie import Rotation, boxminus, boxplus, exp_map, rotate
from walex.model import default_model


@pytest.fixture(scope="module")
def model():
    return default_model()


def random_state(rng, with_landmarks=True):
    state = EstimatorState(
        position=rng.normal(scale=5.0, size=3),
        orientation=exp_map(rng.uniform(-0.8, 0.8, 3)),
        velocity=rng.normal(scale=1.0, size=3),
        accel_bias=rng.normal(scale=0.05, size=3),
        gyro_bias=rng.normal(scale=0.005, size=3),
        landmarks=rng.normal(scale=4.0, size=(4, 3)) if with_landmarks else None,
        turn_angle=rng.uniform(-1.0, 1.0),
    )
    return state


def perturb(state, delta, dim):
    return state_boxplus(state, np.asarray(delta)[:dim] if len(delta) >= dim else delta)


def numeric_jacobian(func, state, dim, eps=1e-6):
    """Central differences of func(state) w.r.t. the state tangent."""
    y0 = func(state)
    jac = np.zeros((y0.shape[0], dim))
    for k in range(dim):
        d = np.zeros(dim)
        d[k] = eps
        y_plus = func(state_boxplus(state, d))
        y_minus = func(state_boxplus(state, -d))
        jac[:, k] = (y_plus - y_minus) / (2 * eps)
    return jac


# ---------------------------------------------------------------------------
# complementary turn filter
# ---------------------------------------------------------------------------


def test_turn_filter_pure_measurement():
    psi, _ = complementary_turn_filter(0.3, 0.7, 0.1, 0.05, 0.01, blend=1.0)
    assert psi == pytest.approx(0.7, abs=1e-15)


def test_turn_filter_pure_integration_at_rest():
    psi, rate = complementary_turn_filter(0.3, 0.0, 0.0, 0.0, 0.01, blend=0.0)
    assert psi == pytest.approx(0.3, abs=1e-15)
    assert rate == 0.0


def test_turn_filter_tracks_quantized_ramp():
    # constant 0.1 rad/s truth, 0.92 deg quantization, blend 0.02 at 100 Hz
    step = np.deg2rad(0.92)
    dt = 0.01
    psi_est = 0.0
    errors = []
    truth = 0.0
    for _ in range(6000):
        truth += 0.1 * dt
        meas = quantize_turn_angle(truth, step)
        psi_est, _ = complementary_turn_filter(psi_est, meas, 0.1, 0.0, dt, blend=0.02)
        errors.append(psi_est - truth)
    rms = float(np.sqrt(np.mean(np.square(errors))))
    assert rms < 0.016


def test_quantizer_floor_and_zero_reset():
    step = np.deg2rad(0.92)
    assert quantize_turn_angle(0.5 * step, step) == 0.0
    assert quantize_turn_angle(2.7 * step, step) == pytest.approx(2 * step)
    assert quantize_turn_angle(-2.7 * step, step) == pytest.approx(-3 * step)


# ---------------------------------------------------------------------------
# chassis frame derivation
# ---------------------------------------------------------------------------


def test_chassis_frame_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        yaw = rng.uniform(-2, 2)
        turn = rng.uniform(-2, 2)
        rot_bi = exp_map([0.0, 0.0, -yaw])
        rot_ci = exp_map([0.0, 0.0, -turn]) * rot_bi
        back = chassis_orientation(rot_ci, turn)
        assert np.allclose(boxminus(back, rot_bi), 0.0, atol=1e-12)


def test_chassis_position_uses_cabin_lever():
    offset = np.array([0.0, 0.0, 0.6])
    rot = exp_map([0.1, -0.2, 0.3])
    r_cabin = np.array([1.0, 2.0, 3.0])
    base = chassis_position(r_cabin, rot, offset)
    assert np.allclose(r_cabin - base, rot.matrix().T @ offset, atol=1e-12)


# ---------------------------------------------------------------------------
# IMU residual
# ---------------------------------------------------------------------------


GRAVITY = np.array([0.0, 0.0, -9.81])


def test_imu_residual_zero_on_consistent_stationary_state():
    state = EstimatorState.initial(position=(1.0, 2.0, 3.0), orientation=exp_map([0.2, 0.1, -0.4]))
    accel = state.orientation.matrix() @ (-GRAVITY)
    y, _, _, _ = imu_residual(state, state, accel, np.zeros(3), 0.01, GRAVITY)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_imu_residual_pure_rotation_step():
    prev = EstimatorState.initial()
    gyro = np.array([0.0, 0.0, 1.0])
    dt = 0.1
    curr = prev.copy()
    curr.orientation = boxplus(Rotation.identity(), np.array([0.0, 0.0, -0.1]))
    accel = np.zeros(3) - GRAVITY  # stationary specific force at identity
    y, _, _, _ = imu_residual(prev, curr, accel, gyro, dt, GRAVITY)
    assert np.allclose(y[3:6], 0.0, atol=1e-12)
    wrong = prev.copy()
    wrong.orientation = boxplus(Rotation.identity(), np.array([0.0, 0.0, 0.1]))
    y2, _, _, _ = imu_residual(prev, wrong, accel, gyro, dt, GRAVITY)
    assert np.linalg.norm(y2[3:6]) > 0.1


def test_imu_residual_jacobians_match_finite_differences():
    rng = np.random.default_rng(11)
    dt = 0.02
    for _ in range(100):
        prev = random_state(rng, with_landmarks=False)
        curr = random_state(rng, with_landmarks=False)
        accel = rng.normal(scale=3.0, size=3)
        gyro = rng.normal(scale=0.5, size=3)
        y, j_prev, j_curr, j_noise = imu_residual(prev, curr, accel, gyro, dt, GRAVITY)

        fd_prev = numeric_jacobian(
            lambda s: imu_residual(s, curr, accel, gyro, dt, GRAVITY)[0], prev, N_CORE
        )
        fd_curr = numeric_jacobian(
            lambda s: imu_residual(prev, s, accel, gyro, dt, GRAVITY)[0], curr, N_CORE
        )
        assert np.allclose(j_prev, fd_prev, atol=1e-5)
        assert np.allclose(j_curr, fd_curr, atol=1e-5)

        eps = 1e-6
        fd_noise = np.zeros((15, 15))
        for k in range(15):
            w = np.zeros(15)
            w[k] = eps
            fd_noise[:, k] = (
                _imu_residual_with_noise(prev, curr, accel, gyro, dt, w)
                - _imu_residual_with_noise(prev, curr, accel, gyro, dt, -w)
            ) / (2 * eps)
        assert np.allclose(j_noise, fd_noise, atol=1e-5)


def _imu_residual_with_noise(prev, curr, accel, gyro, dt, w):
    """Re-evaluate the prediction equations with explicit noise samples
    (independent reference for the noise Jacobian)."""
    sq = np.sqrt(dt)
    rot_prev = prev.orientation.matrix()
    y = np.zeros(15)
    y[0:3] = prev.position + dt * (prev.velocity + w[0:3] / sq) - curr.position
    y[6:9] = (
        prev.velocity
        + dt * (rot_prev.T @ (accel - prev.accel_bias - w[3:6] / sq) + GRAVITY)
        - curr.velocity
    )
    delta = -dt * (gyro - prev.gyro_bias - w[6:9] / sq)
    y[3:6] = boxminus(boxplus(prev.orientation, delta), curr.orientation)
    y[9:12] = prev.accel_bias + sq * w[9:12] - curr.accel_bias
    y[12:15] = prev.gyro_bias + sq * w[12:15] - curr.gyro_bias
    return y


# ---------------------------------------------------------------------------
# GNSS residual
# ---------------------------------------------------------------------------


def test_gnss_residual_zero_on_consistent_fix():
    rng = np.random.default_rng(13)
    state = random_state(rng, with_landmarks=False)
    lever = np.array([0.4, 0.5, 2.1])
    fix = state.position + state.orientation.matrix().T @ lever
    y, _, _ = gnss_residual(state, fix, lever)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_gnss_residual_zero_lever_kills_attitude_information():
    rng = np.random.default_rng(17)
    state = random_state(rng, with_landmarks=False)
    _, j_curr, _ = gnss_residual(state, rng.normal(size=3), np.zeros(3))
    assert np.allclose(j_curr[:, 3:6], 0.0, atol=1e-15)


def test_gnss_residual_jacobians_match_finite_differences():
    rng = np.random.default_rng(19)
    lever = np.array([0.4, -0.5, 2.1])
    for _ in range(100):
        state = random_state(rng, with_landmarks=False)
        fix = rng.normal(scale=5.0, size=3)
        _, j_curr, _ = gnss_residual(state, fix, lever)
        fd = numeric_jacobian(lambda s: gnss_residual(s, fix, lever)[0], state, N_CORE)
        assert np.allclose(j_curr, fd, atol=1e-5)


# ---------------------------------------------------------------------------
# rolling prediction residual
# ---------------------------------------------------------------------------


def test_rolling_residual_stationary_wheel():
    rng = np.random.default_rng(23)
    prev = random_state(rng)
    curr = prev.copy()
    forward = np.array([1.0, 0.0, 0.0])
    normal = np.array([0.0, 0.0, 1.0])
    y, _, _, _ = rolling_residual(prev, curr, 0, 0.0, forward, normal, 0.5, 0.01)
    assert np.allclose(y, 0.0, atol=1e-12)
    moved = prev.copy()
    moved.landmarks = prev.landmarks + np.array([0.01, 0.0, 0.0])
    y2, _, _, _ = rolling_residual(prev, moved, 0, 0.0, forward, normal, 0.5, 0.01)
    assert np.linalg.norm(y2) > 1e-3


def test_rolling_residual_flat_ground_advance():
    # yaw-only attitude keeps the forward direction in the terrain plane,
    # so the projection is a no-op and the landmark advances by dt*rho*speed
    rng = np.random.default_rng(29)
    prev = random_state(rng)
    yaw = rng.uniform(-2, 2)
    turn = rng.uniform(-1, 1)
    prev.orientation = exp_map([0.0, 0.0, -turn]) * exp_map([0.0, 0.0, -yaw])
    prev.turn_angle = turn
    forward = np.array([np.cos(0.3), np.sin(0.3), 0.0])
    normal = np.array([0.0, 0.0, 1.0])
    rho, speed, dt = 0.5, 2.0, 0.01
    rot_bi = chassis_orientation(prev.orientation, prev.turn_angle).matrix()
    curr = prev.copy()
    curr.landmarks = prev.landmarks.copy()
    curr.landmarks[2] = prev.landmarks[2] + dt * rho * speed * (rot_bi.T @ forward)
    y, _, _, _ = rolling_residual(prev, curr, 2, speed, forward, normal, rho, dt)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_rolling_residual_jacobians_match_finite_differences():
    rng = np.random.default_rng(31)
    dt = 0.02
    for _ in range(100):
        prev = random_state(rng)
        curr = random_state(rng)
        curr.turn_angle = prev.turn_angle
        leg = int(rng.integers(0, 4))
        speed = rng.normal(scale=2.0)
        forward = rng.normal(size=3)
        forward /= np.linalg.norm(forward)
        normal = rng.normal(size=3)
        normal /= np.linalg.norm(normal)
        args = (leg, speed, forward, normal, 0.5, dt)
        y, j_prev, j_curr, j_noise = rolling_residual(prev, curr, *args)
        fd_prev = numeric_jacobian(
            lambda s: rolling_residual(s, curr, *args)[0], prev, N_FULL
        )
        fd_curr = numeric_jacobian(
            lambda s: rolling_residual(prev, s, *args)[0], curr, N_FULL
        )
        assert np.allclose(j_prev, fd_prev, atol=1e-5)
        assert np.allclose(j_curr, fd_curr, atol=1e-5)
        # noise enters inside the chassis-frame rotation with the 1/sqrt(dt) hold
        eps = 1e-6
        fd_noise = np.zeros((3, 3))
        rot_bi = chassis_orientation(prev.orientation, prev.turn_angle).matrix()
        for k in range(3):
            w = np.zeros(3)
            w[k] = eps
            plus = _rolling_with_noise(prev, curr, *args, w)
            minus = _rolling_with_noise(prev, curr, *args, -w)
            fd_noise[:, k] = (plus - minus) / (2 * eps)
        assert np.allclose(j_noise, fd_noise, atol=1e-5)


def _rolling_with_noise(prev, curr, leg, speed_rad, forward, normal, rho, dt, w):
    rot_bi = chassis_orientation(prev.orientation, prev.turn_angle).matrix()
    speed = rho * speed_rad
    y = (
        prev.landmarks[leg]
        + dt * rot_bi.T @ (speed * forward + w / np.sqrt(dt))
        - dt * speed * (forward @ (rot_bi @ normal)) * normal
        - curr.landmarks[leg]
    )
    return y


# ---------------------------------------------------------------------------
# leg odometry residual
# ---------------------------------------------------------------------------


def test_leg_odometry_zero_on_consistent_state(model):
    rng = np.random.default_rng(37)
    state = random_state(rng)
    offset = model.cabin_offset
    rot_bi = chassis_orientation(state.orientation, state.turn_angle).matrix()
    base = chassis_position(state.position, state.orientation, offset)
    contact = rot_bi @ (state.landmarks[1] - base)
    y, _, _ = leg_odometry_residual(state, 1, contact, offset)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_leg_odometry_jacobians_match_finite_differences(model):
    rng = np.random.default_rng(41)
    offset = model.cabin_offset
    for _ in range(100):
        state = random_state(rng)
        contact = rng.normal(scale=2.0, size=3)
        _, j_curr, _ = leg_odometry_residual(state, 2, contact, offset)
        fd = numeric_jacobian(
            lambda s: leg_odometry_residual(s, 2, contact, offset)[0], state, N_FULL
        )
        assert np.allclose(j_curr, fd, atol=1e-5)


def test_leg_covariance_reduces_to_measurement_part(model):
    j1 = np.eye(3)
    cov = leg_measurement_covariance(j1, np.zeros(3), np.full(3, 2.5e-5), np.zeros(3))
    assert np.allclose(cov, np.diag(np.full(3, 2.5e-5)))


def test_leg_covariance_matches_monte_carlo(model):
    rng = np.random.default_rng(43)
    leg = "rf"
    piston_std = 0.002
    beta0 = np.array(
        [
            0.5 * (model.legs[leg].actuators[j].stroke[0] + model.legs[leg].actuators[j].stroke[1])
            for j in ("abduction", "flexion", "steering")
        ]
    )
    alpha0 = np.array(
        [
            model.legs[leg].actuators[j].joint_from_piston(b)
            for j, b in zip(("abduction", "flexion", "steering"), beta0)
        ]
    )
    j1 = model.leg_contact_jacobian(leg, alpha0)
    j2 = np.array(
        [
            model.legs[leg].actuators[j].piston_jacobian(b)
            for j, b in zip(("abduction", "flexion", "steering"), beta0)
        ]
    )
    predicted = leg_measurement_covariance(
        j1, j2, np.zeros(3), np.full(3, piston_std**2)
    )
    samples = np.zeros((100_000, 3))
    for idx in range(samples.shape[0]):
        beta = beta0 + rng.normal(scale=piston_std, size=3)
        alpha = np.array(
            [
                model.legs[leg].actuators[j].joint_from_piston(b, check=False)
                for j, b in zip(("abduction", "flexion", "steering"), beta)
            ]
        )
        samples[idx] = model.leg_contact_vector(leg, alpha, check=False)
    mc_cov = np.cov(samples.T)
    for k in range(3):
        assert predicted[k, k] == pytest.approx(mc_cov[k, k], rel=0.10)


# ---------------------------------------------------------------------------
# full filter behavior
# ---------------------------------------------------------------------------


def stationary_frame(model, t, state, leg_angles):
    accel = state.orientation.matrix() @ (-model.gravity)
    fixes = tuple(
        state.position + state.orientation.matrix().T @ lever
        for lever in model.gnss_levers
    )
    return SensorFrame(
        timestamp=t,
        accel=accel,
        gyro=np.zeros(3),
        chassis_gyro=np.zeros(3),
        turn_angle=state.turn_angle,
        pistons=model.leg_joint_to_piston(leg_angles),
        normal=np.array([0.0, 0.0, 1.0]),
        gnss=fixes,
        wheel_speeds=np.zeros(4),
        contacts=np.ones(4, dtype=bool),
    )


def nominal_leg_angles(model):
    return np.zeros(12)


@pytest.mark.parametrize("setup", ["imu_gnss", "full"])
def test_zero_noise_stationary_stream_is_fixed_point(model, setup):
    truth = EstimatorState.initial(position=(5.0, -2.0, 1.2), turn_angle=0.15)
    truth.orientation = exp_map([0.0, 0.0, -0.15])  # chassis level, cabin turned
    leg_angles = nominal_leg_angles(model)
    est = StateEstimator(model, NoiseConfig(), setup=setup, init_state=truth, start_time=0.0)
    dt = 0.01
    for step in range(1, 1001):
        frame = stationary_frame(model, step * dt, truth, leg_angles)
        result = est.step(frame)
    err_pos = np.linalg.norm(result.state.position - truth.position)
    err_rot = np.linalg.norm(boxminus(result.state.orientation, truth.orientation))
    assert err_pos < 1e-9
    assert err_rot < 1e-9
    assert np.linalg.norm(result.state.accel_bias) < 1e-9


def test_filter_translation_equivariance(model):
    rng = np.random.default_rng(47)
    shift = np.array([120.0, -45.0, 3.0])
    leg_angles = nominal_leg_angles(model)
    dt = 0.01

    def run(offset):
        truth = EstimatorState.initial(position=np.array([1.0, 2.0, 1.5]) + offset)
        est = StateEstimator(model, NoiseConfig(), setup="full", init_state=truth)
        rng_local = np.random.default_rng(7)
        state = None
        for step in range(1, 201):
            frame = stationary_frame(model, step * dt, truth, leg_angles)
            frame.gnss = tuple(f + rng_local.normal(scale=0.01, size=3) for f in frame.gnss)
            frame.accel = frame.accel + rng_local.normal(scale=0.02, size=3)
            state = est.step(frame).state
        return state

    state_a = run(np.zeros(3))
    state_b = run(shift)
    assert np.allclose(state_b.position - state_a.position, shift, atol=1e-8)
    assert np.allclose(boxminus(state_b.orientation, state_a.orientation), 0.0, atol=1e-8)
    assert np.allclose(state_b.velocity, state_a.velocity, atol=1e-8)


def test_leg_residual_inflation_equals_removal(model):
    leg_angles = nominal_leg_angles(model)
    truth = EstimatorState.initial(position=(0.0, 0.0, 1.5))
    dt = 0.01

    def run(**kwargs):
        noise = NoiseConfig(**({"liftoff_inflation": 1e6} if "inflate" in kwargs else {}))
        est = StateEstimator(
            model, noise, setup="full", init_state=truth,
            exclude_leg_odometry=kwargs.get("exclude", ()),
        )
        rng_local = np.random.default_rng(11)
        state = None
        for step in range(1, 301):
            frame = stationary_frame(model, step * dt, truth, leg_angles)
            frame.gnss = tuple(f + rng_local.normal(scale=0.01, size=3) for f in frame.gnss)
            if "inflate" in kwargs:
                frame.contacts = np.array([True, True, True, False])
            state = est.step(frame).state
        return state

    inflated = run(inflate=True)
    removed = run(exclude=("rh",))
    scale = max(1.0, np.linalg.norm(removed.position))
    assert np.linalg.norm(inflated.position - removed.position) / scale < 1e-6
    assert np.linalg.norm(boxminus(inflated.orientation, removed.orientation)) < 1e-6


def test_orientation_stays_normalized_many_steps():
    rng = np.random.default_rng(53)
    state = EstimatorState.initial()
    for _ in range(100_000):
        state = state_boxplus(state, np.concatenate([np.zeros(3), rng.normal(scale=0.01, size=3), np.zeros(9)]))
        assert abs(np.linalg.norm(state.orientation.q) - 1.0) < 1e-9


def test_singular_information_raised_without_anchoring(model):
    truth = EstimatorState.initial(position=(0.0, 0.0, 1.5))
    est = StateEstimator(
        model, NoiseConfig(), setup="imu_gnss", init_state=truth,
        init_std=np.zeros(N_CORE),  # no prior information at all
    )
    frame = stationary_frame(model, 0.01, truth, nominal_leg_angles(model))
    frame.gnss = (None, None)
    with pytest.raises(SingularInformationError):
        est.step(frame)


def test_state_boxplus_boxminus_round_trip():
    rng = np.random.default_rng(59)
    state = random_state(rng)
    delta = rng.normal(scale=0.3, size=N_FULL)
    recovered = state_boxminus(state_boxplus(state, delta), state, dim=N_FULL)
    assert np.allclose(recovered, delta, atol=1e-9)


def test_predict_state_matches_imu_residual_zero():
    rng = np.random.default_rng(61)
    prev = random_state(rng, with_landmarks=False)
    accel = rng.normal(size=3)
    gyro = rng.normal(size=3)
    curr = predict_state(prev, accel, gyro, 0.02, GRAVITY)
    y, _, _, _ = imu_residual(prev, curr, accel, gyro, 0.02, GRAVITY)
    assert np.allclose(y, 0.0, atol=1e-12)
