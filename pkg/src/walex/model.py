"""Machine description: leg kinematics, piston linkages and arm dynamics.

Frames: the chassis frame B has x forward, y left, z up, origin at the
chassis center.  The cabin frame C sits on the turn axis, rotated by the
cabin turn angle about z.  Leg joint order per leg is (abduction, flexion,
steering); legs are ordered (rf, lf, lh, rh).  The arm chain is
(cabin turn, boom, dipper, telescope, bucket pitch) for the 5-joint
force-controlled subset, extended by (roll, yaw) for velocity control.

All parameters are SI.  Geometry loads from a ``key = value`` text file
(see ``default_model_text``); a representative 12-tonne parameter set is
built by :func:`default_model`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lie
from .configfile import ConfigReader, dump_config, parse_config
from .errors import ConfigError, ModelError, OutOfRangeError, SingularError

LEGS = ("rf", "lf", "lh", "rh")
LEG_JOINTS = ("abduction", "flexion", "steering")
ARM_JOINTS = ("cabin", "boom", "dipper", "telescope", "pitch", "roll", "yaw")
N_ARM_ID = 5
N_ARM_IK = 7

MODEL_SCHEMA_VERSION = 1


def rot_axis(axis, angle):
    return lie.exp_map(np.asarray(axis, dtype=float) * float(angle)).matrix()


def _cross(a, b):
    # manual cross product; np.cross dominates the dynamics runtime otherwise
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


@dataclass(frozen=True)
class Actuator:
    """Piston-to-joint linkage for one hydraulic actuator.

    ``triangle`` models the usual law-of-cosines linkage where the cylinder
    spans two anchors at distances r1 and r2 from the joint; ``linear``
    covers prismatic pistons and rotary drives with a constant ratio.
    ``angle_mid`` calibrates the triangle so that mid-stroke corresponds to
    the stated joint angle.
    """

    kind: str
    stroke: tuple
    r1: float = 0.0
    r2: float = 0.0
    angle_mid: float = 0.0
    ratio: float = 1.0
    offset: float = 0.0
    area_a: float = 0.0
    area_b: float = 0.0
    force_min: float = -np.inf
    force_max: float = np.inf
    velocity_min: float = -np.inf
    velocity_max: float = np.inf
    _angle0: float = field(init=False, default=0.0)

    def __post_init__(self):
        lo, hi = self.stroke
        if not lo < hi:
            raise ModelError(f"stroke must satisfy min < max, got {self.stroke}")
        if self.area_a and self.area_a <= self.area_b:
            raise ModelError("differential cylinder requires area_a > area_b")
        if self.kind == "triangle":
            mid = 0.5 * (lo + hi)
            cos_mid = (self.r1**2 + self.r2**2 - mid**2) / (2.0 * self.r1 * self.r2)
            if not -1.0 < cos_mid < 1.0:
                raise ModelError("triangle linkage is degenerate at mid stroke")
            object.__setattr__(self, "_angle0", float(np.arccos(cos_mid)) - self.angle_mid)
            for beta in (lo, hi):
                cos_b = (self.r1**2 + self.r2**2 - beta**2) / (2.0 * self.r1 * self.r2)
                if not -1.0 < cos_b < 1.0:
                    raise ModelError("stroke exceeds triangle linkage range")
        elif self.kind == "linear":
            if self.ratio == 0.0:
                raise ModelError("linear actuator needs a nonzero ratio")
        else:
            raise ModelError(f"unknown actuator kind '{self.kind}'")

    def joint_from_piston(self, beta, check=True):
        lo, hi = self.stroke
        if check and not (lo - 1e-12 <= beta <= hi + 1e-12):
            raise OutOfRangeError(f"piston position {beta} outside stroke {self.stroke}")
        if self.kind == "linear":
            return (beta - self.offset) / self.ratio
        cos_b = (self.r1**2 + self.r2**2 - beta**2) / (2.0 * self.r1 * self.r2)
        return float(np.arccos(np.clip(cos_b, -1.0, 1.0))) - self._angle0

    def piston_from_joint(self, q, check=True):
        if self.kind == "linear":
            beta = self.ratio * q + self.offset
        else:
            beta = np.sqrt(
                self.r1**2 + self.r2**2 - 2.0 * self.r1 * self.r2 * np.cos(self._angle0 + q)
            )
        lo, hi = self.stroke
        if check and not (lo - 1e-9 <= beta <= hi + 1e-9):
            raise OutOfRangeError(f"joint angle {q} maps outside stroke {self.stroke}")
        return float(beta)

    def moment_arm(self, q):
        """dbeta/dq, the diagonal entry of the force mapping."""
        if self.kind == "linear":
            return self.ratio
        beta = self.piston_from_joint(q, check=False)
        arm = self.r1 * self.r2 * np.sin(self._angle0 + q) / beta
        if abs(arm) < 1e-6:
            raise SingularError("degenerate linkage: moment arm below 1e-6 m")
        return float(arm)

    def piston_jacobian(self, beta):
        """dq/dbeta at the given piston position."""
        q = self.joint_from_piston(beta, check=False)
        if self.kind == "linear":
            return 1.0 / self.ratio
        return 1.0 / self.moment_arm(q)

    def joint_limits(self):
        lo, hi = self.stroke
        a = self.joint_from_piston(lo, check=False)
        b = self.joint_from_piston(hi, check=False)
        return (min(a, b), max(a, b))


@dataclass(frozen=True)
class LegGeometry:
    hip: np.ndarray          # hip position in B [m]
    splay: float             # nominal leg direction about z [rad]
    reach: float             # horizontal hip-to-wheel distance [m]
    drop: float              # vertical hip-to-wheel-center offset [m]
    actuators: dict          # joint name -> Actuator

    def joint_limits(self):
        return {name: act.joint_limits() for name, act in self.actuators.items()}


@dataclass(frozen=True)
class ArmJoint:
    name: str
    kind: str                # revolute | prismatic
    axis: np.ndarray         # in the joint's own frame
    origin: np.ndarray       # translation from parent joint frame [m]
    mass: float
    com: np.ndarray          # link COM in the joint frame [m]
    inertia: np.ndarray      # diagonal inertia at the COM [kg m^2]


class RobotModel:
    """Immutable machine parameter set plus the kinematic/dynamic maps."""

    def __init__(
        self,
        legs,
        wheel_radius,
        arm_joints,
        ee_offset,
        arm_actuators,
        friction_viscous,
        friction_static,
        pump_flow_max,
        cabin_offset,
        gnss_levers,
        chassis_mass,
        gravity=(0.0, 0.0, -9.81),
        turn_quantization=np.deg2rad(0.92),
    ):
        self.legs = dict(legs)
        self.wheel_radius = float(wheel_radius)
        self.arm_joints = list(arm_joints)
        self.ee_offset = np.asarray(ee_offset, dtype=float)
        self.arm_actuators = list(arm_actuators)
        self.friction_viscous = np.asarray(friction_viscous, dtype=float)
        self.friction_static = np.asarray(friction_static, dtype=float)
        self.pump_flow_max = float(pump_flow_max)
        self.cabin_offset = np.asarray(cabin_offset, dtype=float)
        self.gnss_levers = tuple(np.asarray(l, dtype=float) for l in gnss_levers)
        self.chassis_mass = float(chassis_mass)
        self.gravity = np.asarray(gravity, dtype=float)
        self.turn_quantization = float(turn_quantization)
        if self.wheel_radius <= 0.0:
            raise ModelError("wheel radius must be positive")
        for leg in LEGS:
            if leg not in self.legs:
                raise ModelError(f"missing leg '{leg}'")

    # ------------------------------------------------------------------
    # leg kinematics
    # ------------------------------------------------------------------

    def _check_leg_angles(self, leg, alpha):
        geom = self.legs[leg]
        for name, angle in zip(LEG_JOINTS, alpha):
            lo, hi = geom.actuators[name].joint_limits()
            if not (lo - 1e-9 <= angle <= hi + 1e-9):
                raise OutOfRangeError(f"{leg}.{name} angle {angle} outside [{lo}, {hi}]")

    def wheel_center(self, leg, alpha, check=True):
        """Wheel center in B for leg joint angles (abduction, flexion, steering)."""
        if check:
            self._check_leg_angles(leg, alpha)
        geom = self.legs[leg]
        abd, flex = alpha[0], alpha[1]
        link = np.array([geom.reach, 0.0, -geom.drop])
        rz = rot_axis([0.0, 0.0, 1.0], geom.splay + abd)
        ry = rot_axis([0.0, 1.0, 0.0], flex)
        return geom.hip + rz @ (ry @ link)

    def leg_contact_vector(self, leg, alpha, normal_b=(0.0, 0.0, 1.0), check=True):
        """Base-to-contact vector; contact is wheel center minus the radius
        along the terrain normal expressed in B."""
        n = np.asarray(normal_b, dtype=float)
        return self.wheel_center(leg, alpha, check=check) - self.wheel_radius * n

    def leg_contact_jacobian(self, leg, alpha):
        """3x3 Jacobian of the contact vector w.r.t. (abduction, flexion,
        steering); the steering column is zero (zero kingpin offset)."""
        geom = self.legs[leg]
        abd, flex = alpha[0], alpha[1]
        link = np.array([geom.reach, 0.0, -geom.drop])
        rz = rot_axis([0.0, 0.0, 1.0], geom.splay + abd)
        ry = rot_axis([0.0, 1.0, 0.0], flex)
        v = rz @ (ry @ link)
        jac = np.zeros((3, 3))
        jac[:, 0] = np.cross([0.0, 0.0, 1.0], v)
        dry = lie.skew([0.0, 1.0, 0.0]) @ ry  # d/dflex of rot about y
        jac[:, 1] = rz @ (dry @ link)
        return jac

    def wheel_forward(self, leg, alpha):
        """Unit forward rolling direction of the wheel in B.

        The steering joint zero is calibrated so the wheel points along +x
        at zero abduction; abduction carries the kingpin with it.
        """
        heading = alpha[0] + alpha[2]
        return np.array([np.cos(heading), np.sin(heading), 0.0])

    def wheel_heading(self, leg, alpha):
        return float(alpha[0] + alpha[2])

    def leg_piston_to_joint(self, beta, check=True):
        """All 12 leg joint angles from the 12 piston positions."""
        beta = np.asarray(beta, dtype=float)
        out = np.zeros(12)
        for i, leg in enumerate(LEGS):
            for j, joint in enumerate(LEG_JOINTS):
                out[3 * i + j] = self.legs[leg].actuators[joint].joint_from_piston(
                    beta[3 * i + j], check=check
                )
        return out

    def leg_joint_to_piston(self, alpha, check=True):
        alpha = np.asarray(alpha, dtype=float)
        out = np.zeros(12)
        for i, leg in enumerate(LEGS):
            for j, joint in enumerate(LEG_JOINTS):
                out[3 * i + j] = self.legs[leg].actuators[joint].piston_from_joint(
                    alpha[3 * i + j], check=check
                )
        return out

    def leg_piston_jacobian(self, beta):
        """Diagonal of J2 = d(joint)/d(piston) for all 12 leg joints."""
        beta = np.asarray(beta, dtype=float)
        diag = np.zeros(12)
        for i, leg in enumerate(LEGS):
            for j, joint in enumerate(LEG_JOINTS):
                diag[3 * i + j] = self.legs[leg].actuators[joint].piston_jacobian(
                    beta[3 * i + j]
                )
        return diag

    def leg_angles_of(self, leg, alpha12):
        return np.asarray(alpha12, dtype=float)[3 * LEGS.index(leg) : 3 * LEGS.index(leg) + 3]

    # ------------------------------------------------------------------
    # arm kinematics
    # ------------------------------------------------------------------

    def arm_joint_limits(self, n=N_ARM_IK):
        lims = [self.arm_actuators[k].joint_limits() for k in range(n)]
        lo = np.array([l[0] for l in lims])
        hi = np.array([l[1] for l in lims])
        return lo, hi

    def _check_arm(self, q):
        lo, hi = self.arm_joint_limits(len(q))
        if np.any(q < lo - 1e-9) or np.any(q > hi + 1e-9):
            bad = int(np.argmax((q < lo - 1e-9) | (q > hi + 1e-9)))
            raise OutOfRangeError(
                f"arm joint '{ARM_JOINTS[bad]}' = {q[bad]} outside [{lo[bad]}, {hi[bad]}]"
            )

    def arm_frames(self, q):
        """World (B frame) pose of every joint frame up to len(q) joints.

        Returns (rotations, origins, axes_world) lists plus the EE pose.
        """
        q = np.asarray(q, dtype=float)
        rot = np.eye(3)
        pos = np.zeros(3)
        rotations, origins, axes = [], [], []
        for k in range(len(q)):
            joint = self.arm_joints[k]
            pos = pos + rot @ joint.origin
            if joint.kind == "prismatic":
                pos = pos + rot @ (joint.axis * q[k])
                axis_w = rot @ joint.axis
            else:
                axis_w = rot @ joint.axis
                rot = rot @ rot_axis(joint.axis, q[k])
            rotations.append(rot)
            origins.append(pos)
            axes.append(axis_w)
        # remaining joints held at zero contribute fixed offsets only
        for k in range(len(q), N_ARM_IK):
            pos = pos + rot @ self.arm_joints[k].origin
        ee = pos + rot @ self.ee_offset
        return rotations, origins, axes, ee

    def arm_fk(self, q, check=True):
        """End-effector pose and geometric Jacobians for the full chain.

        Returns (position, orientation, J_T, J_R) with J columns per joint
        of ``q`` (pass 7 joints for the full pose, 5 for the planar set).
        """
        q = np.asarray(q, dtype=float)
        if check:
            self._check_arm(q)
        rotations, origins, axes, ee = self.arm_frames(q)
        n = len(q)
        j_t = np.zeros((3, n))
        j_r = np.zeros((3, n))
        for k in range(n):
            if self.arm_joints[k].kind == "prismatic":
                j_t[:, k] = axes[k]
            else:
                j_t[:, k] = np.cross(axes[k], ee - origins[k])
                j_r[:, k] = axes[k]
        orientation = lie.Rotation(_quat_from_matrix(rotations[-1]))
        return ee, orientation, j_t, j_r

    def _planar_points(self, q):
        boom = self.arm_joints[1]
        dipper = self.arm_joints[2]
        ex = self.arm_joints[5].origin[0] + self.arm_joints[6].origin[0] + self.ee_offset[0]
        ez = self.ee_offset[2]
        base = np.array([boom.origin[0], boom.origin[2]])
        a1 = q[1]
        a12 = q[1] + q[2]
        a124 = q[1] + q[2] + q[4]
        p1 = base + self._rotp(a1) @ np.array([self.arm_joints[2].origin[0], dipper.origin[2]])
        p2 = p1 + self._rotp(a12) @ np.array([self.arm_joints[3].origin[0] + q[3], 0.0])
        ee = p2 + self._rotp(a124) @ np.array([ex, ez])
        return base, p1, p2, ee

    @staticmethod
    def _rotp(angle):
        # planar (x, z) rotation matching revolute joints about -y
        c, s = np.cos(angle), np.sin(angle)
        return np.array([[c, -s], [s, c]])

    def arm_task_coords(self, q, check=True):
        """Reduced task coordinates (x_t, z_t, theta_t, psi_t) and their
        4x5 Jacobian for the force-controlled joint subset."""
        q = np.asarray(q, dtype=float)
        if check:
            self._check_arm(q)
        base, p1, p2, ee = self._planar_points(q)
        theta = q[1] + q[2] + q[4]
        r = np.array([ee[0], ee[1], theta, q[0]])
        jac = np.zeros((4, 5))

        def perp(v):
            return np.array([-v[1], v[0]])

        jac[0:2, 1] = perp(ee - base)
        jac[0:2, 2] = perp(ee - p1)
        a12 = q[1] + q[2]
        jac[0:2, 3] = np.array([np.cos(a12), np.sin(a12)])
        jac[0:2, 4] = perp(ee - p2)
        jac[2, :] = [0.0, 1.0, 1.0, 0.0, 1.0]
        jac[3, :] = [1.0, 0.0, 0.0, 0.0, 0.0]
        return r, jac

    def arm_task_jacobian_dot(self, q, u, step=1e-6):
        """Directional derivative dJ/dt = (dJ/dq) u of the task Jacobian."""
        q = np.asarray(q, dtype=float)
        u = np.asarray(u, dtype=float)
        _, j_plus = self.arm_task_coords(q + step * u, check=False)
        _, j_minus = self.arm_task_coords(q - step * u, check=False)
        return (j_plus - j_minus) / (2.0 * step)

    # ------------------------------------------------------------------
    # force mapping and flow
    # ------------------------------------------------------------------

    def force_mapping(self, q):
        """Diagonal E(q): joint velocity -> piston velocity, per arm joint."""
        q = np.asarray(q, dtype=float)
        return np.array(
            [self.arm_actuators[k].moment_arm(q[k]) for k in range(len(q))]
        )

    def flow_areas(self, u):
        """Signed cylinder area per joint: pushing side when extending,
        negative rod side otherwise, so area * piston velocity >= 0."""
        u = np.asarray(u, dtype=float)
        return np.array(
            [
                act.area_a if vel > 0.0 else -act.area_b
                for act, vel in zip(self.arm_actuators, u)
            ]
        )

    def arm_piston_limits(self, n=N_ARM_ID):
        vmin = np.array([self.arm_actuators[k].velocity_min for k in range(n)])
        vmax = np.array([self.arm_actuators[k].velocity_max for k in range(n)])
        fmin = np.array([self.arm_actuators[k].force_min for k in range(n)])
        fmax = np.array([self.arm_actuators[k].force_max for k in range(n)])
        return vmin, vmax, fmin, fmax

    # ------------------------------------------------------------------
    # arm dynamics (recursive Newton-Euler over the 5-joint chain)
    # ------------------------------------------------------------------

    def _chain_geometry(self, q):
        """Per-joint relative rotations and joint offsets for the 5-joint chain."""
        rotations, d_vecs = [], []
        for k in range(N_ARM_ID):
            joint = self.arm_joints[k]
            if joint.kind == "prismatic":
                rotations.append(np.eye(3))
                d_vecs.append(joint.origin + joint.axis * q[k])
            else:
                rotations.append(rot_axis(joint.axis, q[k]))
                d_vecs.append(joint.origin)
        return rotations, d_vecs

    def _rnea(self, q, u, udot, with_gravity=True, geometry=None):
        n = N_ARM_ID
        rotations, d_vecs = geometry if geometry is not None else self._chain_geometry(q)
        omega = np.zeros(3)
        alpha = np.zeros(3)
        acc = -self.gravity if with_gravity else np.zeros(3)
        f_links, n_links = [], []
        for k in range(n):
            joint = self.arm_joints[k]
            a = joint.axis
            d = d_vecs[k]
            rot_t = rotations[k].T
            acc_origin = rot_t @ (acc + _cross(alpha, d) + _cross(omega, _cross(omega, d)))
            omega = rot_t @ omega
            alpha = rot_t @ alpha
            if joint.kind == "prismatic":
                acc_origin = acc_origin + 2.0 * _cross(omega, a * u[k]) + a * udot[k]
            else:
                alpha = alpha + _cross(omega, a * u[k]) + a * udot[k]
                omega = omega + a * u[k]
            acc = acc_origin
            com = joint.com
            acc_com = acc_origin + _cross(alpha, com) + _cross(omega, _cross(omega, com))
            f_links.append(joint.mass * acc_com)
            n_links.append(joint.inertia * alpha + _cross(omega, joint.inertia * omega))
        tau = np.zeros(n)
        force = np.zeros(3)
        torque = np.zeros(3)
        for k in range(n - 1, -1, -1):
            joint = self.arm_joints[k]
            if k < n - 1:
                rel = rotations[k + 1]
                child_force = rel @ force
                torque = n_links[k] + rel @ torque + _cross(joint.com, f_links[k]) + _cross(
                    d_vecs[k + 1], child_force
                )
                force = f_links[k] + child_force
            else:
                torque = n_links[k] + _cross(joint.com, f_links[k])
                force = f_links[k]
            if joint.kind == "prismatic":
                tau[k] = joint.axis @ force
            else:
                tau[k] = joint.axis @ torque
        return tau

    def arm_dynamics(self, q, u, check=True):
        """Mass matrix, Coriolis/centrifugal vector and gravity vector for
        the 5 force-controlled arm coordinates."""
        q = np.asarray(q, dtype=float)[:N_ARM_ID]
        u = np.asarray(u, dtype=float)[:N_ARM_ID]
        if check:
            self._check_arm(q)
        geometry = self._chain_geometry(q)
        zeros = np.zeros(N_ARM_ID)
        g_vec = self._rnea(q, zeros, zeros, with_gravity=True, geometry=geometry)
        b_vec = self._rnea(q, u, zeros, with_gravity=False, geometry=geometry)
        mass = np.zeros((N_ARM_ID, N_ARM_ID))
        for i in range(N_ARM_ID):
            e = np.zeros(N_ARM_ID)
            e[i] = 1.0
            mass[:, i] = self._rnea(q, zeros, e, with_gravity=False, geometry=geometry)
        mass = 0.5 * (mass + mass.T)
        if not (np.all(np.isfinite(mass)) and np.all(np.isfinite(b_vec)) and np.all(np.isfinite(g_vec))):
            raise ModelError("non-finite dynamics terms")
        return mass, b_vec, g_vec

    def link_com_positions(self, q):
        """World-frame COM of each of the 5 dynamic links (for energy checks)."""
        q = np.asarray(q, dtype=float)
        rot = np.eye(3)
        pos = np.zeros(3)
        coms = []
        for k in range(N_ARM_ID):
            joint = self.arm_joints[k]
            pos = pos + rot @ joint.origin
            if joint.kind == "prismatic":
                pos = pos + rot @ (joint.axis * q[k])
            else:
                rot = rot @ rot_axis(joint.axis, q[k])
            coms.append(pos + rot @ joint.com)
        return coms

    def potential_energy(self, q):
        total = 0.0
        for joint, com in zip(self.arm_joints, self.link_com_positions(q)):
            total -= joint.mass * float(self.gravity @ com)
        return total

    @property
    def total_mass(self):
        return self.chassis_mass + sum(j.mass for j in self.arm_joints)

    @property
    def total_weight(self):
        return self.total_mass * float(-self.gravity[2])

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_text(self):
        rows = [("schema_version", MODEL_SCHEMA_VERSION)]
        rows.append(("gravity", self.gravity))
        rows.append(("wheel_radius", self.wheel_radius))
        rows.append(("pump_flow_max", self.pump_flow_max))
        rows.append(("chassis_mass", self.chassis_mass))
        rows.append(("cabin_offset", self.cabin_offset))
        rows.append(("gnss_lever_1", self.gnss_levers[0]))
        rows.append(("gnss_lever_2", self.gnss_levers[1]))
        rows.append(("turn_quantization", self.turn_quantization))
        for leg in LEGS:
            geom = self.legs[leg]
            rows.append((f"leg.{leg}.hip", geom.hip))
            rows.append((f"leg.{leg}.splay", geom.splay))
            rows.append((f"leg.{leg}.reach", geom.reach))
            rows.append((f"leg.{leg}.drop", geom.drop))
            for joint in LEG_JOINTS:
                rows.extend(_actuator_rows(f"leg.{leg}.{joint}", geom.actuators[joint]))
        for k, joint in enumerate(self.arm_joints):
            prefix = f"arm.{joint.name}"
            rows.append((f"{prefix}.origin", joint.origin))
            rows.append((f"{prefix}.mass", joint.mass))
            rows.append((f"{prefix}.com", joint.com))
            rows.append((f"{prefix}.inertia", joint.inertia))
            rows.extend(_actuator_rows(prefix, self.arm_actuators[k]))
        rows.append(("arm.ee_offset", self.ee_offset))
        rows.append(("arm.friction_viscous", self.friction_viscous))
        rows.append(("arm.friction_static", self.friction_static))
        return dump_config(rows)

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(self.to_text())

    @staticmethod
    def from_text(text, source="<model>"):
        reader = ConfigReader(parse_config(text, source=source), source=source)
        version = reader.require_int("schema_version")
        if version != MODEL_SCHEMA_VERSION:
            raise ConfigError(f"{source}: unsupported schema_version {version}")
        gravity = reader.require_vec("gravity", 3)
        wheel_radius = reader.require_float("wheel_radius")
        pump = reader.require_float("pump_flow_max")
        chassis_mass = reader.require_float("chassis_mass")
        cabin_offset = reader.require_vec("cabin_offset", 3)
        lever1 = reader.require_vec("gnss_lever_1", 3)
        lever2 = reader.require_vec("gnss_lever_2", 3)
        quant = reader.require_float("turn_quantization")
        legs = {}
        for leg in LEGS:
            actuators = {
                joint: _actuator_from_reader(reader, f"leg.{leg}.{joint}")
                for joint in LEG_JOINTS
            }
            legs[leg] = LegGeometry(
                hip=reader.require_vec(f"leg.{leg}.hip", 3),
                splay=reader.require_float(f"leg.{leg}.splay"),
                reach=reader.require_float(f"leg.{leg}.reach"),
                drop=reader.require_float(f"leg.{leg}.drop"),
                actuators=actuators,
            )
        arm_joints = []
        arm_actuators = []
        axes = _ARM_AXES
        kinds = _ARM_KINDS
        for name in ARM_JOINTS:
            prefix = f"arm.{name}"
            arm_joints.append(
                ArmJoint(
                    name=name,
                    kind=kinds[name],
                    axis=axes[name],
                    origin=reader.require_vec(f"{prefix}.origin", 3),
                    mass=reader.require_float(f"{prefix}.mass"),
                    com=reader.require_vec(f"{prefix}.com", 3),
                    inertia=reader.require_vec(f"{prefix}.inertia", 3),
                )
            )
            arm_actuators.append(_actuator_from_reader(reader, prefix))
        model = RobotModel(
            legs=legs,
            wheel_radius=wheel_radius,
            arm_joints=arm_joints,
            ee_offset=reader.require_vec("arm.ee_offset", 3),
            arm_actuators=arm_actuators,
            friction_viscous=reader.require_vec("arm.friction_viscous", N_ARM_ID),
            friction_static=reader.require_vec("arm.friction_static", N_ARM_ID),
            pump_flow_max=pump,
            cabin_offset=cabin_offset,
            gnss_levers=(lever1, lever2),
            chassis_mass=chassis_mass,
            gravity=gravity,
            turn_quantization=quant,
        )
        reader.finish()
        return model

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as handle:
            return RobotModel.from_text(handle.read(), source=str(path))


_ARM_AXES = {
    "cabin": np.array([0.0, 0.0, 1.0]),
    "boom": np.array([0.0, -1.0, 0.0]),
    "dipper": np.array([0.0, -1.0, 0.0]),
    "telescope": np.array([1.0, 0.0, 0.0]),
    "pitch": np.array([0.0, -1.0, 0.0]),
    "roll": np.array([1.0, 0.0, 0.0]),
    "yaw": np.array([0.0, 0.0, 1.0]),
}
_ARM_KINDS = {name: ("prismatic" if name == "telescope" else "revolute") for name in ARM_JOINTS}


def _actuator_rows(prefix, act):
    rows = [
        (f"{prefix}.kind", act.kind),
        (f"{prefix}.stroke", act.stroke),
        (f"{prefix}.area", (act.area_a, act.area_b)),
    ]
    if act.kind == "triangle":
        rows.append((f"{prefix}.anchors", (act.r1, act.r2)))
        rows.append((f"{prefix}.angle_mid", act.angle_mid))
    else:
        rows.append((f"{prefix}.ratio", act.ratio))
        rows.append((f"{prefix}.piston_offset", act.offset))
    if np.isfinite(act.force_max):
        rows.append((f"{prefix}.force", (act.force_min, act.force_max)))
    if np.isfinite(act.velocity_max):
        rows.append((f"{prefix}.velocity", (act.velocity_min, act.velocity_max)))
    return rows


def _actuator_from_reader(reader, prefix):
    kind = reader.require_str(f"{prefix}.kind")
    stroke = reader.require_vec(f"{prefix}.stroke", 2)
    area = reader.require_vec(f"{prefix}.area", 2)
    force = reader.vec(f"{prefix}.force", 2)
    velocity = reader.vec(f"{prefix}.velocity", 2)
    kwargs = dict(
        kind=kind,
        stroke=(float(stroke[0]), float(stroke[1])),
        area_a=float(area[0]),
        area_b=float(area[1]),
    )
    if force is not None:
        kwargs.update(force_min=float(force[0]), force_max=float(force[1]))
    if velocity is not None:
        kwargs.update(velocity_min=float(velocity[0]), velocity_max=float(velocity[1]))
    if kind == "triangle":
        anchors = reader.require_vec(f"{prefix}.anchors", 2)
        kwargs.update(
            r1=float(anchors[0]),
            r2=float(anchors[1]),
            angle_mid=reader.require_float(f"{prefix}.angle_mid"),
        )
    else:
        kwargs.update(
            ratio=reader.require_float(f"{prefix}.ratio"),
            offset=reader.require_float(f"{prefix}.piston_offset"),
        )
    return Actuator(**kwargs)


def _quat_from_matrix(m):
    t = np.trace(m)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(m)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
    q = np.zeros(4)
    q[0] = (m[k, j] - m[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (m[j, i] + m[i, j]) / s
    q[1 + k] = (m[k, i] + m[i, k]) / s
    return q


def default_model():
    """Representative 12-tonne walking excavator parameter set.

    The values are plausible for the machine class but are not measurements
    of any specific vehicle; all toolkit code is parameter generic.
    """
    leg_acts = {
        "abduction": Actuator(
            kind="triangle", stroke=(0.42, 0.78), r1=0.50, r2=0.60, angle_mid=0.0,
            area_a=0.008, area_b=0.005, force_min=-1.4e5, force_max=2.2e5,
            velocity_min=-0.2, velocity_max=0.2,
        ),
        "flexion": Actuator(
            kind="triangle", stroke=(0.50, 0.92), r1=0.58, r2=0.70, angle_mid=0.0,
            area_a=0.011, area_b=0.0065, force_min=-1.8e5, force_max=3.2e5,
            velocity_min=-0.22, velocity_max=0.22,
        ),
        "steering": Actuator(
            kind="triangle", stroke=(0.26, 0.46), r1=0.30, r2=0.34, angle_mid=0.0,
            area_a=0.005, area_b=0.003, force_min=-7e4, force_max=1.2e5,
            velocity_min=-0.15, velocity_max=0.15,
        ),
    }
    legs = {
        "rf": LegGeometry(np.array([1.60, -1.05, -0.30]), -0.45, 1.10, 0.75, dict(leg_acts)),
        "lf": LegGeometry(np.array([1.60, 1.05, -0.30]), 0.45, 1.10, 0.75, dict(leg_acts)),
        "lh": LegGeometry(np.array([-1.50, 1.05, -0.30]), np.pi - 0.45, 1.10, 0.75, dict(leg_acts)),
        "rh": LegGeometry(np.array([-1.50, -1.05, -0.30]), -np.pi + 0.45, 1.10, 0.75, dict(leg_acts)),
    }
    arm_joints = [
        ArmJoint("cabin", "revolute", _ARM_AXES["cabin"], np.array([0.0, 0.0, 0.60]),
                 4000.0, np.array([-1.30, 0.0, 0.70]), np.array([4.0e3, 8.0e3, 9.0e3])),
        ArmJoint("boom", "revolute", _ARM_AXES["boom"], np.array([0.35, 0.0, 0.90]),
                 1500.0, np.array([1.70, 0.0, 0.20]), np.array([1.2e2, 1.8e3, 1.8e3])),
        ArmJoint("dipper", "revolute", _ARM_AXES["dipper"], np.array([3.60, 0.0, 0.0]),
                 750.0, np.array([0.90, 0.0, 0.0]), np.array([4.0e1, 3.0e2, 3.0e2])),
        ArmJoint("telescope", "prismatic", _ARM_AXES["telescope"], np.array([1.90, 0.0, 0.0]),
                 400.0, np.array([0.40, 0.0, 0.0]), np.array([2.0e1, 1.2e2, 1.2e2])),
        ArmJoint("pitch", "revolute", _ARM_AXES["pitch"], np.array([0.0, 0.0, 0.0]),
                 600.0, np.array([0.35, 0.0, -0.15]), np.array([8.0e1, 8.0e1, 6.0e1])),
        ArmJoint("roll", "revolute", _ARM_AXES["roll"], np.array([0.35, 0.0, 0.0]),
                 120.0, np.array([0.10, 0.0, 0.0]), np.array([6.0, 8.0, 8.0])),
        ArmJoint("yaw", "revolute", _ARM_AXES["yaw"], np.array([0.20, 0.0, 0.0]),
                 80.0, np.array([0.10, 0.0, -0.05]), np.array([4.0, 4.0, 5.0])),
    ]
    arm_acts = [
        Actuator(kind="linear", stroke=(-0.55, 0.55), ratio=0.16, offset=0.0,
                 area_a=0.006, area_b=0.004, force_min=-1.6e5, force_max=1.6e5,
                 velocity_min=-0.12, velocity_max=0.12),
        Actuator(kind="triangle", stroke=(1.70, 3.45), r1=1.80, r2=2.00, angle_mid=0.35,
                 area_a=0.018, area_b=0.011, force_min=-3.5e5, force_max=5.8e5,
                 velocity_min=-0.25, velocity_max=0.25),
        Actuator(kind="triangle", stroke=(1.30, 2.45), r1=1.30, r2=1.55, angle_mid=-1.30,
                 area_a=0.014, area_b=0.009, force_min=-2.9e5, force_max=4.5e5,
                 velocity_min=-0.28, velocity_max=0.28),
        Actuator(kind="linear", stroke=(0.0, 1.30), ratio=1.0, offset=0.0,
                 area_a=0.008, area_b=0.005, force_min=-1.6e5, force_max=2.6e5,
                 velocity_min=-0.30, velocity_max=0.30),
        Actuator(kind="triangle", stroke=(0.72, 1.32), r1=0.75, r2=0.85, angle_mid=-0.40,
                 area_a=0.010, area_b=0.0065, force_min=-2.1e5, force_max=3.2e5,
                 velocity_min=-0.30, velocity_max=0.30),
        Actuator(kind="linear", stroke=(-0.06, 0.06), ratio=0.05, offset=0.0,
                 area_a=0.003, area_b=0.002, force_min=-2e4, force_max=2e4,
                 velocity_min=-0.04, velocity_max=0.04),
        Actuator(kind="linear", stroke=(-0.157, 0.157), ratio=0.05, offset=0.0,
                 area_a=0.003, area_b=0.002, force_min=-2e4, force_max=2e4,
                 velocity_min=-0.05, velocity_max=0.05),
    ]
    return RobotModel(
        legs=legs,
        wheel_radius=0.50,
        arm_joints=arm_joints,
        ee_offset=np.array([0.50, 0.0, -0.20]),
        arm_actuators=arm_acts,
        friction_viscous=np.array([9.0e3, 2.4e4, 1.5e4, 3.0e4, 7.0e3]),
        friction_static=np.array([1.5e3, 4.0e3, 2.5e3, 5.0e3, 1.2e3]),
        pump_flow_max=0.004,
        cabin_offset=np.array([0.0, 0.0, 0.60]),
        gnss_levers=(np.array([0.40, 0.50, 2.10]), np.array([0.40, -0.50, 2.10])),
        chassis_mass=5000.0,
    )
