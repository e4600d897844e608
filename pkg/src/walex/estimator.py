"""Two-state implicit filtering for the wheeled-legged machine.

The filter keeps a (previous, current) state pair and works purely on
residual blocks: inertial prediction, absolute position fixes, wheel
rolling prediction and leg-kinematics updates.  Each residual supplies an
innovation, Jacobians with respect to both states and with respect to its
own noise; the filter whitens everything, runs a few Gauss-Newton
iterations on the stacked system and carries the marginal information of
the current state to the next step (Schur complement over the previous
state).

Frames: the inertial frame I, the cabin frame C (sensors are rigid in C,
the filter estimates C) and the chassis frame B derived from C through
the cabin turn angle, which itself comes from a complementary filter fed
by the quantized gear-teeth angle and the two vertical gyro channels.

State vector layout (tangent space): position (3), orientation (3),
velocity (3), accelerometer bias (3), gyro bias (3), then one contact
landmark (3) per leg when the full residual setup is active.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import lie
from .errors import SingularInformationError
from .lie import Rotation, boxminus, boxplus, exp_jacobian, exp_jacobian_inv, skew
from .model import LEGS

SETUP_IMU_GNSS = "imu_gnss"
SETUP_FULL = "full"

N_CORE = 15
N_FULL = 15 + 3 * len(LEGS)

_POS = slice(0, 3)
_ROT = slice(3, 6)
_VEL = slice(6, 9)
_BF = slice(9, 12)
_BW = slice(12, 15)


def _landmark_slice(leg_index):
    return slice(15 + 3 * leg_index, 18 + 3 * leg_index)


_EYE3 = np.eye(3)
_EYE3.setflags(write=False)
_NEG_EYE3 = -np.eye(3)
_NEG_EYE3.setflags(write=False)


@dataclass
class EstimatorState:
    """Full estimator state: cabin pose/velocity, IMU biases, contact
    landmarks, and the separately filtered cabin turn angle."""

    position: np.ndarray
    orientation: Rotation
    velocity: np.ndarray
    accel_bias: np.ndarray
    gyro_bias: np.ndarray
    landmarks: np.ndarray | None = None   # (4, 3) in I, or None
    turn_angle: float = 0.0
    turn_rate: float = 0.0

    @staticmethod
    def initial(position=(0.0, 0.0, 0.0), orientation=None, turn_angle=0.0):
        return EstimatorState(
            position=np.asarray(position, dtype=float),
            orientation=orientation if orientation is not None else Rotation.identity(),
            velocity=np.zeros(3),
            accel_bias=np.zeros(3),
            gyro_bias=np.zeros(3),
            landmarks=None,
            turn_angle=float(turn_angle),
            turn_rate=0.0,
        )

    def copy(self):
        return EstimatorState(
            position=self.position.copy(),
            orientation=self.orientation,
            velocity=self.velocity.copy(),
            accel_bias=self.accel_bias.copy(),
            gyro_bias=self.gyro_bias.copy(),
            landmarks=None if self.landmarks is None else self.landmarks.copy(),
            turn_angle=self.turn_angle,
            turn_rate=self.turn_rate,
        )


def state_boxplus(state: EstimatorState, delta) -> EstimatorState:
    delta = np.asarray(delta, dtype=float)
    landmarks = state.landmarks
    if landmarks is not None and delta.shape[0] >= N_FULL:
        landmarks = landmarks + delta[15:N_FULL].reshape(4, 3)
    return EstimatorState(
        position=state.position + delta[_POS],
        orientation=boxplus(state.orientation, delta[_ROT]),
        velocity=state.velocity + delta[_VEL],
        accel_bias=state.accel_bias + delta[_BF],
        gyro_bias=state.gyro_bias + delta[_BW],
        landmarks=landmarks,
        turn_angle=state.turn_angle,
        turn_rate=state.turn_rate,
    )


def state_boxminus(state_a: EstimatorState, state_b: EstimatorState, dim=N_CORE):
    out = np.zeros(dim)
    out[_POS] = state_a.position - state_b.position
    out[_ROT] = boxminus(state_a.orientation, state_b.orientation)
    out[_VEL] = state_a.velocity - state_b.velocity
    out[_BF] = state_a.accel_bias - state_b.accel_bias
    out[_BW] = state_a.gyro_bias - state_b.gyro_bias
    if dim >= N_FULL and state_a.landmarks is not None and state_b.landmarks is not None:
        out[15:N_FULL] = (state_a.landmarks - state_b.landmarks).ravel()
    return out


@dataclass
class NoiseConfig:
    """Tuning covariances (diagonal, per axis) of the residual blocks.

    Entries are continuous-time spectral densities; the residuals apply
    the zero-order-hold discretization internally.  ``turn_blend`` is the
    complementary-filter weight on the quantized turn-angle measurement.
    Defaults are engineering values for consumer-grade RTK / tactical
    MEMS hardware, not reproductions of any specific sensor.
    """

    pos_pred: np.ndarray = field(default_factory=lambda: np.full(3, 1e-4))
    accel: np.ndarray = field(default_factory=lambda: np.full(3, 4e-4))
    gyro: np.ndarray = field(default_factory=lambda: np.full(3, 1e-6))
    accel_bias_walk: np.ndarray = field(default_factory=lambda: np.full(3, 1e-8))
    gyro_bias_walk: np.ndarray = field(default_factory=lambda: np.full(3, 1e-10))
    gnss: tuple = (
        np.full(3, 1e-4),
        np.full(3, 1e-4),
    )
    rolling: np.ndarray = field(default_factory=lambda: np.full(3, 4e-4))
    leg_meas: np.ndarray = field(default_factory=lambda: np.full(3, 2.5e-5))
    piston: np.ndarray = field(default_factory=lambda: np.full(12, 4e-6))
    turn_blend: float = 0.02
    liftoff_inflation: float = 1e6

    def __post_init__(self):
        for name in ("pos_pred", "accel", "gyro", "accel_bias_walk", "gyro_bias_walk",
                     "rolling", "leg_meas"):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape == ():
                value = np.full(3, float(value))
            setattr(self, name, value)
            if np.any(value <= 0.0):
                raise ValueError(f"noise '{name}' must be positive")
        self.gnss = tuple(np.broadcast_to(np.asarray(g, dtype=float), (3,)).copy() for g in self.gnss)
        self.piston = np.broadcast_to(np.asarray(self.piston, dtype=float), (12,)).copy()
        if not 0.0 <= self.turn_blend <= 1.0:
            raise ValueError("turn_blend must lie in [0, 1]")


@dataclass
class SensorFrame:
    """One time step of raw measurements."""

    timestamp: float
    accel: np.ndarray                 # cabin specific force [m/s^2]
    gyro: np.ndarray                  # cabin angular rate [rad/s]
    chassis_gyro: np.ndarray          # chassis angular rate [rad/s]
    turn_angle: float                 # quantized gear-teeth angle [rad]
    pistons: np.ndarray               # 12 leg piston positions [m]
    normal: np.ndarray                # terrain normal in I (unit)
    gnss: tuple = (None, None)        # up to two antenna fixes in I [m]
    wheel_speeds: np.ndarray | None = None   # 4 wheel speeds [rad/s]
    contacts: np.ndarray = field(default_factory=lambda: np.ones(4, dtype=bool))


def quantize_turn_angle(angle, step):
    """Gear-teeth sensing: floor rounding plus exact zero-crossing reset."""
    if abs(angle) < step:
        return 0.0
    return float(np.floor(angle / step) * step)


def complementary_turn_filter(psi_prev, psi_meas, cabin_rate_z, chassis_rate_z, dt, blend):
    """Blend the quantized turn angle with the integrated differential rate."""
    if not 0.0 <= blend <= 1.0:
        raise ValueError("blend weight must lie in [0, 1]")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rate = float(cabin_rate_z - chassis_rate_z)
    psi = blend * psi_meas + (1.0 - blend) * (psi_prev + dt * rate)
    return float(psi), rate


def chassis_orientation(orientation: Rotation, turn_angle) -> Rotation:
    """Chassis attitude from cabin attitude: undo the turn about z."""
    return lie.exp_map(np.array([0.0, 0.0, float(turn_angle)])) * orientation


def chassis_position(position, orientation: Rotation, cabin_offset):
    """Chassis origin from cabin origin (offset is on the turn axis, in C)."""
    return position - orientation.matrix().T @ np.asarray(cabin_offset, dtype=float)


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


def imu_residual(prev: EstimatorState, curr: EstimatorState, accel, gyro, dt, gravity):
    """Inertial prediction block: position, velocity, orientation and the
    two bias random walks (15 rows).

    Returns (innovation, J_prev, J_curr, J_noise) with noise components
    ordered (position weighting, accel, gyro, accel bias walk, gyro bias
    walk), three per block.
    """
    accel = np.asarray(accel, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    gravity = np.asarray(gravity, dtype=float)
    sq = np.sqrt(dt)
    rot_prev = prev.orientation.matrix()
    force = accel - prev.accel_bias
    delta = -dt * (gyro - prev.gyro_bias)

    y = np.zeros(15)
    y[_POS] = prev.position + dt * prev.velocity - curr.position
    y[_VEL] = prev.velocity + dt * (rot_prev.T @ force + gravity) - curr.velocity
    predicted = boxplus(prev.orientation, delta)
    y_rot = boxminus(predicted, curr.orientation)
    y[_ROT] = y_rot
    y[_BF] = prev.accel_bias - curr.accel_bias
    y[_BW] = prev.gyro_bias - curr.gyro_bias

    gamma_delta = exp_jacobian(delta)
    left_inv = exp_jacobian_inv(y_rot)
    right_inv = exp_jacobian_inv(-y_rot)
    left_gamma = left_inv @ gamma_delta

    j_prev = np.zeros((15, 15))
    j_prev[_POS, _POS] = _EYE3
    j_prev[_POS, _VEL] = dt * _EYE3
    j_prev[_VEL, _VEL] = _EYE3
    j_prev[_VEL, _BF] = -dt * rot_prev.T
    j_prev[_VEL, _ROT] = dt * rot_prev.T @ skew(force)
    j_prev[_ROT, _ROT] = left_inv @ lie.exp_matrix(delta)
    j_prev[_ROT, _BW] = dt * left_gamma
    j_prev[_BF, _BF] = _EYE3
    j_prev[_BW, _BW] = _EYE3

    j_curr = np.zeros((15, 15))
    j_curr[_POS, _POS] = _NEG_EYE3
    j_curr[_VEL, _VEL] = _NEG_EYE3
    j_curr[_ROT, _ROT] = -right_inv
    j_curr[_BF, _BF] = _NEG_EYE3
    j_curr[_BW, _BW] = _NEG_EYE3

    j_noise = np.zeros((15, 15))
    j_noise[_POS, 0:3] = sq * _EYE3
    j_noise[_VEL, 3:6] = -sq * rot_prev.T
    j_noise[_ROT, 6:9] = sq * left_gamma
    j_noise[_BF, 9:12] = sq * _EYE3
    j_noise[_BW, 12:15] = sq * _EYE3
    return y, j_prev, j_curr, j_noise


def gnss_residual(curr: EstimatorState, fix, lever):
    """Absolute antenna-position block (3 rows, current state only)."""
    fix = np.asarray(fix, dtype=float)
    lever = np.asarray(lever, dtype=float)
    rot = curr.orientation.matrix()
    y = fix - curr.position - rot.T @ lever
    j_curr = np.zeros((3, 15))
    j_curr[:, _POS] = _NEG_EYE3
    j_curr[:, _ROT] = -rot.T @ skew(lever)
    j_noise = _EYE3
    return y, j_curr, j_noise


def rolling_residual(prev: EstimatorState, curr: EstimatorState, leg_index, wheel_speed,
                     forward_b, normal_i, wheel_radius, dt, rot_bi=None, rot_z=None):
    """Dead-reckoning of one contact landmark from its wheel speed, with the
    forward direction projected into the terrain plane (3 rows)."""
    forward_b = np.asarray(forward_b, dtype=float)
    normal_i = np.asarray(normal_i, dtype=float)
    if rot_z is None:
        rot_z = lie.rot_z_matrix(prev.turn_angle)
    if rot_bi is None:
        rot_bi = rot_z @ prev.orientation.matrix()
    speed = wheel_radius * wheel_speed
    u_roll = speed * forward_b
    normal_b = rot_bi @ normal_i
    p_prev = prev.landmarks[leg_index]
    p_curr = curr.landmarks[leg_index]

    y = p_prev + dt * rot_bi.T @ u_roll - dt * speed * (forward_b @ normal_b) * normal_i - p_curr

    j_prev = np.zeros((3, N_FULL))
    j_prev[:, _landmark_slice(leg_index)] = _EYE3
    d_rot = dt * rot_bi.T @ skew(u_roll) + dt * speed * np.outer(
        normal_i, forward_b @ skew(normal_b)
    )
    j_prev[:, _ROT] = d_rot @ rot_z

    j_curr = np.zeros((3, N_FULL))
    j_curr[:, _landmark_slice(leg_index)] = _NEG_EYE3

    j_noise = np.sqrt(dt) * rot_bi.T
    return y, j_prev, j_curr, j_noise


def leg_odometry_residual(curr: EstimatorState, leg_index, contact_b, cabin_offset,
                          rot_ci=None, rot_z=None):
    """Comparison of a filter landmark with the same contact point computed
    from the measured leg configuration (3 rows, current state only).

    ``contact_b`` is the measured base-to-contact vector in B.
    """
    contact_b = np.asarray(contact_b, dtype=float)
    if rot_ci is None:
        rot_ci = curr.orientation.matrix()
    if rot_z is None:
        rot_z = lie.rot_z_matrix(curr.turn_angle)
    rot_bi = rot_z @ rot_ci
    base = curr.position - rot_ci.T @ np.asarray(cabin_offset, dtype=float)
    relative = curr.landmarks[leg_index] - base
    y = contact_b - rot_bi @ relative

    j_curr = np.zeros((3, N_FULL))
    j_curr[:, _POS] = rot_bi
    j_curr[:, _landmark_slice(leg_index)] = -rot_bi
    j_curr[:, _ROT] = skew(rot_bi @ relative) @ rot_z - rot_bi @ rot_ci.T @ skew(
        np.asarray(cabin_offset, dtype=float)
    )
    j_noise = _NEG_EYE3
    return y, j_curr, j_noise


def leg_measurement_covariance(j_contact, j_piston_diag, leg_meas_var, piston_var):
    """Propagate piston-sensing noise through the leg kinematics:
    measurement covariance plus J1 J2 R J2' J1'."""
    j_chain = j_contact * j_piston_diag[None, :]
    return np.diag(leg_meas_var) + j_chain @ np.diag(piston_var) @ j_chain.T


def predict_state(prev: EstimatorState, accel, gyro, dt, gravity) -> EstimatorState:
    """Zero-noise inertial prediction, used as the Gauss-Newton initial guess."""
    rot_prev = prev.orientation.matrix()
    return replace(
        prev.copy(),
        position=prev.position + dt * prev.velocity,
        velocity=prev.velocity
        + dt * (rot_prev.T @ (np.asarray(accel) - prev.accel_bias) + np.asarray(gravity)),
        orientation=boxplus(prev.orientation, -dt * (np.asarray(gyro) - prev.gyro_bias)),
    )


# ---------------------------------------------------------------------------
# the filter
# ---------------------------------------------------------------------------


@dataclass
class StepResult:
    state: EstimatorState
    covariance: np.ndarray
    innovations: dict
    iterations: int


class StateEstimator:
    """Iterated Gauss-Newton filter over a (previous, current) state pair.

    ``setup`` selects the residual set: only inertial + position fixes, or
    the full set including rolling prediction and leg odometry (which adds
    the four contact landmarks to the state).
    """

    def __init__(self, model, noise: NoiseConfig, setup=SETUP_IMU_GNSS,
                 init_state: EstimatorState | None = None, init_std=None,
                 start_time=0.0, max_iterations=5, step_tolerance=1e-9,
                 damping=1e-9, exclude_leg_odometry=()):
        if setup not in (SETUP_IMU_GNSS, SETUP_FULL):
            raise ValueError(f"unknown residual setup '{setup}'")
        self.exclude_leg_odometry = tuple(exclude_leg_odometry)
        self.model = model
        self.noise = noise
        self.setup = setup
        self.dim = N_FULL if setup == SETUP_FULL else N_CORE
        self.state = (init_state or EstimatorState.initial()).copy()
        self.time = float(start_time)
        self.max_iterations = max_iterations
        self.step_tolerance = step_tolerance
        self.damping = damping
        self.info = self._initial_information(init_std)
        self._landmarks_ready = self.state.landmarks is not None

    def _initial_information(self, init_std):
        if init_std is None:
            std = np.concatenate(
                [
                    np.full(3, 0.02),   # position [m]
                    np.full(3, 0.01),   # orientation [rad]
                    np.full(3, 0.05),   # velocity [m/s]
                    np.full(3, 0.10),   # accel bias [m/s^2]
                    np.full(3, 0.01),   # gyro bias [rad/s]
                ]
            )
        else:
            std = np.asarray(init_std, dtype=float)[:N_CORE]
        full = np.zeros(self.dim)
        full[:N_CORE] = std
        if self.dim == N_FULL:
            full[N_CORE:] = 10.0  # landmarks start wide: 1e2 m^2 variance
        with np.errstate(divide="ignore"):
            diag = np.where(full > 0.0, 1.0 / full**2, 0.0)
        return np.diag(diag)

    # -- helpers --------------------------------------------------------

    def _init_landmarks(self, frame, leg_angles):
        base = chassis_position(self.state.position, self.state.orientation,
                                self.model.cabin_offset)
        rot_bi = chassis_orientation(self.state.orientation, self.state.turn_angle).matrix()
        normal_b = rot_bi @ np.asarray(frame.normal, dtype=float)
        landmarks = np.zeros((4, 3))
        for i, leg in enumerate(LEGS):
            contact = self.model.leg_contact_vector(
                leg, leg_angles[3 * i : 3 * i + 3], normal_b=normal_b, check=False
            )
            landmarks[i] = base + rot_bi.T @ contact
        self.state.landmarks = landmarks
        self._landmarks_ready = True

    # -- main step ------------------------------------------------------

    def step(self, frame: SensorFrame) -> StepResult:
        dt = float(frame.timestamp) - self.time
        if dt <= 0.0:
            raise ValueError("sensor frames must have strictly increasing timestamps")
        noise = self.noise

        psi_new, rate = complementary_turn_filter(
            self.state.turn_angle, frame.turn_angle, frame.gyro[2],
            frame.chassis_gyro[2], dt, noise.turn_blend,
        )
        leg_angles = self.model.leg_piston_to_joint(frame.pistons, check=False)
        if self.setup == SETUP_FULL and not self._landmarks_ready:
            self._init_landmarks(frame, leg_angles)

        prev = self.state.copy()
        anchor = self.state.copy()
        curr = predict_state(prev, frame.accel, frame.gyro, dt, self.model.gravity)
        curr.turn_angle = psi_new
        curr.turn_rate = rate
        prior_sqrt = _sqrt_information(self.info)
        ctx = self._step_context(frame, leg_angles, curr, dt)

        n = self.dim
        iterations = 0
        innovations = {}
        h_full = None
        for iteration in range(self.max_iterations):
            rows_a, rows_b, innovations = self._assemble(
                prev, curr, frame, dt, prior_sqrt, anchor, ctx
            )
            h_full = rows_a.T @ rows_a
            g_full = rows_a.T @ rows_b
            if iteration == 0:
                # the undamped system must be full rank; damping is only a
                # numerical safety net, not a substitute for observability
                try:
                    scipy.linalg.cho_factor(h_full, lower=True)
                except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as err:
                    raise SingularInformationError(
                        "whitened normal equations are rank deficient "
                        "(unobservable configuration)"
                    ) from err
            factor = scipy.linalg.cho_factor(
                h_full + self.damping * np.eye(2 * n), lower=True
            )
            delta = scipy.linalg.cho_solve(factor, g_full)
            prev = state_boxplus(prev, delta[:n])
            curr = state_boxplus(curr, delta[n:])
            iterations = iteration + 1
            if float(delta @ delta) < self.step_tolerance**2:
                break

        h_pp = h_full[:n, :n]
        h_pc = h_full[:n, n:]
        h_cc = h_full[n:, n:]
        marg = h_cc - h_pc.T @ np.linalg.solve(h_pp, h_pc)
        self.info = 0.5 * (marg + marg.T)
        self.state = curr
        self.time = float(frame.timestamp)
        covariance = np.linalg.inv(self.info + self.damping * np.eye(n))
        return StepResult(
            state=curr.copy(), covariance=covariance, innovations=innovations,
            iterations=iterations,
        )

    def _step_context(self, frame, leg_angles, curr, dt):
        """Quantities fixed over the Gauss-Newton iterations of one step."""
        noise = self.noise
        ctx = {
            "pos_w": 1.0 / np.sqrt(dt * noise.pos_pred),
            "bf_w": 1.0 / np.sqrt(dt * noise.accel_bias_walk),
            "bw_w": 1.0 / np.sqrt(dt * noise.gyro_bias_walk),
            "accel_iso": _isotropic(noise.accel),
            "rolling_iso": _isotropic(noise.rolling),
        }
        if ctx["accel_iso"] is not None:
            ctx["vel_w"] = 1.0 / np.sqrt(dt * ctx["accel_iso"])
        if ctx["rolling_iso"] is not None:
            ctx["roll_w"] = 1.0 / np.sqrt(dt * ctx["rolling_iso"])
        ctx["gnss_w"] = [1.0 / np.sqrt(g) for g in noise.gnss]
        if self.setup == SETUP_FULL:
            j2_diag = self.model.leg_piston_jacobian(frame.pistons)
            rot_bi = lie.rot_z_matrix(curr.turn_angle) @ curr.orientation.matrix()
            normal_b = rot_bi @ np.asarray(frame.normal, dtype=float)
            legs = []
            for i, leg in enumerate(LEGS):
                alpha = leg_angles[3 * i : 3 * i + 3]
                entry = {
                    "forward": self.model.wheel_forward(leg, alpha),
                    "skip_odometry": leg in self.exclude_leg_odometry,
                }
                if not entry["skip_odometry"]:
                    contact = self.model.leg_contact_vector(
                        leg, alpha, normal_b=normal_b, check=False
                    )
                    cov = leg_measurement_covariance(
                        self.model.leg_contact_jacobian(leg, alpha),
                        j2_diag[3 * i : 3 * i + 3],
                        noise.leg_meas,
                        noise.piston[3 * i : 3 * i + 3],
                    )
                    if not frame.contacts[i]:
                        cov = cov * noise.liftoff_inflation
                    entry["contact"] = contact
                    entry["white"] = np.linalg.inv(np.linalg.cholesky(cov))
                legs.append(entry)
            ctx["legs"] = legs
        return ctx

    def _assemble(self, prev, curr, frame, dt, prior_sqrt, anchor, ctx):
        n = self.dim
        n2 = 2 * n
        rows = n + 15 + sum(3 for fix in frame.gnss if fix is not None)
        has_roll = self.setup == SETUP_FULL and frame.wheel_speeds is not None
        if self.setup == SETUP_FULL:
            rows += (12 if has_roll else 0) + 3 * sum(
                0 if entry["skip_odometry"] else 1 for entry in ctx["legs"]
            )
        mat = np.zeros((rows, n2))
        rhs = np.zeros(rows)
        innovations = {}
        sq = np.sqrt(dt)

        # prior on the previous state around the last marginalization point
        prior_res = state_boxminus(prev, anchor, dim=n)
        j_prior = np.eye(n)
        j_prior[_ROT, _ROT] = exp_jacobian_inv(prior_res[_ROT])
        mat[:n, :n] = prior_sqrt @ j_prior
        rhs[:n] = -(prior_sqrt @ prior_res)
        row = n

        # inertial prediction, whitened block by block
        y, j_prev, j_curr, j_noise = imu_residual(
            prev, curr, frame.accel, frame.gyro, dt, self.model.gravity
        )
        block = np.zeros((15, n2 + 1))
        block[:, :N_CORE] = j_prev
        block[:, n : n + N_CORE] = j_curr
        block[:, -1] = y
        block[_POS] *= ctx["pos_w"][:, None]
        block[_BF] *= ctx["bf_w"][:, None]
        block[_BW] *= ctx["bw_w"][:, None]
        if ctx["accel_iso"] is not None:
            # dt * R' diag(q) R is exactly (dt q) I for isotropic accel noise
            block[_VEL] *= ctx["vel_w"]
        else:
            cov = j_noise[_VEL, 3:6] @ np.diag(self.noise.accel) @ j_noise[_VEL, 3:6].T
            block[_VEL] = scipy.linalg.solve_triangular(
                np.linalg.cholesky(cov), block[_VEL], lower=True
            )
        g_noise = j_noise[_ROT, 6:9]
        cov = g_noise @ np.diag(self.noise.gyro) @ g_noise.T
        block[_ROT] = scipy.linalg.solve_triangular(
            np.linalg.cholesky(cov), block[_ROT], lower=True
        )
        mat[row : row + 15] = block[:, :-1]
        rhs[row : row + 15] = -block[:, -1]
        row += 15
        innovations["imu"] = float(np.sqrt(y @ y))

        # position fixes
        gnss_norm = 0.0
        for k, fix in enumerate(frame.gnss):
            if fix is None:
                continue
            y, j_curr3, _ = gnss_residual(curr, fix, self.model.gnss_levers[k])
            weights = ctx["gnss_w"][k][:, None]
            mat[row : row + 3, n : n + N_CORE] = weights * j_curr3
            rhs[row : row + 3] = -(ctx["gnss_w"][k] * y)
            row += 3
            gnss_norm += float(y @ y)
        if any(fix is not None for fix in frame.gnss):
            innovations["gnss"] = float(np.sqrt(gnss_norm))

        if self.setup == SETUP_FULL:
            # inlined equivalents of rolling_residual / leg_odometry_residual;
            # kept in sync by test_assembly_matches_public_residuals
            roll_norm = 0.0
            leg_norm = 0.0
            rot_z_prev = lie.rot_z_matrix(prev.turn_angle)
            rot_bi_prev = rot_z_prev @ prev.orientation.matrix()
            rot_ci_curr = curr.orientation.matrix()
            rot_z_curr = lie.rot_z_matrix(curr.turn_angle)
            rot_bi_curr = rot_z_curr @ rot_ci_curr
            normal = np.asarray(frame.normal, dtype=float)
            normal_b_prev = rot_bi_prev @ normal
            base = curr.position - rot_ci_curr.T @ self.model.cabin_offset
            offset_term = rot_z_curr @ skew(self.model.cabin_offset)
            for i, leg in enumerate(LEGS):
                entry = ctx["legs"][i]
                if has_roll:
                    speed = self.model.wheel_radius * float(frame.wheel_speeds[i])
                    forward = entry["forward"]
                    u_roll = speed * forward
                    lm = _landmark_slice(i)
                    y = (
                        prev.landmarks[i]
                        + dt * (rot_bi_prev.T @ u_roll)
                        - dt * speed * (forward @ normal_b_prev) * normal
                        - curr.landmarks[i]
                    )
                    j_rot = (
                        dt * rot_bi_prev.T @ skew(u_roll)
                        + dt * speed * np.outer(normal, forward @ skew(normal_b_prev))
                    ) @ rot_z_prev
                    if ctx["rolling_iso"] is not None:
                        # R'R = I: whitening reduces to a scalar
                        w = ctx["roll_w"]
                        mat[row : row + 3, _ROT] = w * j_rot
                        mat[row : row + 3, lm] = w * _EYE3
                        mat[row : row + 3, n + lm.start : n + lm.stop] = -w * _EYE3
                        rhs[row : row + 3] = -w * y
                    else:
                        cov = dt * rot_bi_prev.T @ np.diag(self.noise.rolling) @ rot_bi_prev
                        white = np.linalg.inv(np.linalg.cholesky(cov))
                        mat[row : row + 3, _ROT] = white @ j_rot
                        mat[row : row + 3, lm] = white
                        mat[row : row + 3, n + lm.start : n + lm.stop] = -white
                        rhs[row : row + 3] = -(white @ y)
                    row += 3
                    roll_norm += float(y @ y)

                if entry["skip_odometry"]:
                    continue
                lm = _landmark_slice(i)
                relative = curr.landmarks[i] - base
                rotated = rot_bi_curr @ relative
                y = entry["contact"] - rotated
                j_rot = skew(rotated) @ rot_z_curr - offset_term
                white = entry["white"]
                mat[row : row + 3, n + _POS.start : n + _POS.stop] = white @ rot_bi_curr
                mat[row : row + 3, n + _ROT.start : n + _ROT.stop] = white @ j_rot
                mat[row : row + 3, n + lm.start : n + lm.stop] = -(white @ rot_bi_curr)
                rhs[row : row + 3] = -(white @ y)
                row += 3
                leg_norm += float(y @ y)
            if has_roll:
                innovations["rolling"] = float(np.sqrt(roll_norm))
            innovations["leg_odometry"] = float(np.sqrt(leg_norm))

        return mat, rhs, innovations


def _isotropic(variance):
    return float(variance[0]) if np.all(variance == variance[0]) else None


def _sqrt_information(info):
    """Upper-triangular S with S'S = info, tolerating zero rows (no prior)."""
    try:
        return scipy.linalg.cholesky(info, lower=False)
    except scipy.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(info)
        vals = np.clip(vals, 0.0, None)
        return np.diag(np.sqrt(vals)) @ vecs.T
