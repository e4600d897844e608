"""Hierarchical least-squares cascade with prioritized equality and
inequality tasks.

Levels are solved in order of ascending priority number.  Each level
minimizes its own residual (least squares for equality tasks, slack norm
for inequality tasks) without disturbing anything achieved by higher
levels: equality residuals are frozen at their attained value and
inequality rows keep their attained slack.  Within a level, ties are
broken by minimum-norm (pseudoinverse) behavior, which is what makes a
final ``minimize ||x||`` task meaningful.

Inequalities are handled by a primal active-set iteration per level;
problem sizes here are tens of variables at most.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError

EQ = "eq"
INEQ = "ineq"

_FEAS_TOL = 1e-9
_ACTIVE_TOL = 1e-8
_RANK_TOL = 1e-11
_MAX_ACTIVE_SET_ITERS = 100


@dataclass
class Task:
    """One block of rows at a given priority.

    Equality tasks request ``matrix @ x == target`` in the least-squares
    sense; inequality tasks enforce ``matrix @ x <= target``.
    """

    priority: int
    kind: str
    matrix: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        self.target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if self.kind not in (EQ, INEQ):
            raise ValueError(f"unknown task kind '{self.kind}'")
        if self.matrix.shape[0] != self.target.shape[0]:
            raise ValueError("matrix and target row counts differ")
        if not (np.all(np.isfinite(self.matrix)) and np.all(np.isfinite(self.target))):
            raise ValueError("task rows must be finite")


def equality(priority, matrix, target):
    return Task(priority, EQ, matrix, target)


def inequality(priority, matrix, target):
    return Task(priority, INEQ, matrix, target)


@dataclass
class HqpSolution:
    x: np.ndarray
    residuals: dict = field(default_factory=dict)   # priority -> residual norm
    slacks: dict = field(default_factory=dict)      # priority -> slack vector
    active: dict = field(default_factory=dict)      # priority -> tight row indices


def _normalize_task(matrix, target):
    # one scalar per task: keeps within-task row weighting intact while
    # making the outcome invariant to scaling a whole task
    norms = np.linalg.norm(matrix, axis=1)
    scale = norms.max() if norms.size else 0.0
    if scale <= 0.0:
        return matrix, target
    return matrix / scale, target / scale


def _nullspace(matrix, dim):
    if matrix.shape[0] == 0:
        return np.eye(dim)
    _, s, vt = np.linalg.svd(matrix, full_matrices=True)
    rank = int(np.sum(s > _RANK_TOL * max(1.0, s[0] if s.size else 0.0)))
    return vt[rank:].T


def _constrained_lstsq(obj_a, obj_b, con_a, con_b, dim):
    """Min-norm minimizer of ``|obj_a z - obj_b|`` subject to ``con_a z = con_b``."""
    if con_a.shape[0]:
        z0, *_ = np.linalg.lstsq(con_a, con_b, rcond=None)
        basis = _nullspace(con_a, dim)
    else:
        z0 = np.zeros(dim)
        basis = np.eye(dim)
    if basis.shape[1] == 0 or obj_a.shape[0] == 0:
        return z0
    y, *_ = np.linalg.lstsq(obj_a @ basis, obj_b - obj_a @ z0, rcond=None)
    return z0 + basis @ y


def _active_set_solve(obj_a, obj_b, eq_a, eq_b, in_a, in_b, z_start):
    """Primal active-set loop for ``min |obj_a z - obj_b|`` with hard
    equalities and inequalities.  ``z_start`` must be feasible."""
    dim = z_start.shape[0]
    z = z_start.copy()
    working = []
    for _ in range(_MAX_ACTIVE_SET_ITERS):
        con_a = np.vstack([eq_a, in_a[working]]) if working else eq_a
        con_b = np.concatenate([eq_b, in_b[working]]) if working else eq_b
        z_new = _constrained_lstsq(obj_a, obj_b, con_a, con_b, dim)
        step = z_new - z
        if np.linalg.norm(step) <= _FEAS_TOL * max(1.0, np.linalg.norm(z)):
            # stationary on the working set: check multipliers to drop rows
            if not working:
                return z, working
            grad = 2.0 * obj_a.T @ (obj_a @ z - obj_b)
            stack = np.vstack([eq_a, in_a[working]]).T
            mult, *_ = np.linalg.lstsq(stack, -grad, rcond=None)
            ineq_mult = mult[eq_a.shape[0] :]
            worst = int(np.argmin(ineq_mult))
            if ineq_mult[worst] >= -_ACTIVE_TOL:
                return z, working
            working.pop(worst)
            continue
        # longest feasible step toward the candidate
        t = 1.0
        blocking = -1
        if in_a.shape[0]:
            rates = in_a @ step
            margins = in_b - in_a @ z
            for row in range(in_a.shape[0]):
                if row in working or rates[row] <= _FEAS_TOL:
                    continue
                t_row = margins[row] / rates[row]
                if t_row < t - 1e-14:
                    t = max(t_row, 0.0)
                    blocking = row
        z = z + t * step
        if blocking >= 0:
            working.append(blocking)
        if t >= 1.0 and blocking < 0:
            continue
    return z, working


def solve(tasks, dim, var_scale=None) -> HqpSolution:
    """Run the cascade over ``tasks`` (any order; grouped by priority).

    ``var_scale`` optionally rescales solution components internally to
    balance units (e.g. accelerations vs forces); results are returned in
    the original variables.

    Raises :class:`InfeasibleError` when inequality rows at the most
    important priority are inconsistent among themselves.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    scale = np.ones(dim) if var_scale is None else np.asarray(var_scale, dtype=float)
    levels = {}
    for task in tasks:
        if task.matrix.shape[1] != dim:
            raise ValueError("task column count does not match dim")
        levels.setdefault(task.priority, []).append(task)

    committed_eq_a = [np.zeros((0, dim))]
    committed_eq_b = [np.zeros(0)]
    committed_in_a = [np.zeros((0, dim))]
    committed_in_b = [np.zeros(0)]
    x = np.zeros(dim)
    solution = HqpSolution(x=x)
    level_constraints = {}
    first_priority = True

    for priority in sorted(levels):
        eq_parts = [
            _normalize_task(t.matrix * scale, t.target)
            for t in levels[priority]
            if t.kind == EQ
        ]
        in_parts = [
            _normalize_task(t.matrix * scale, t.target)
            for t in levels[priority]
            if t.kind == INEQ
        ]
        a_eq = np.vstack([a for a, _ in eq_parts]) if eq_parts else np.zeros((0, dim))
        b_eq = np.concatenate([b for _, b in eq_parts]) if eq_parts else np.zeros(0)
        c_in = np.vstack([c for c, _ in in_parts]) if in_parts else np.zeros((0, dim))
        d_in = np.concatenate([d for _, d in in_parts]) if in_parts else np.zeros(0)
        m_w = c_in.shape[0]

        hard_eq_a = np.vstack(committed_eq_a)
        hard_eq_b = np.concatenate(committed_eq_b)
        hard_in_a = np.vstack(committed_in_a)
        hard_in_b = np.concatenate(committed_in_b)
        x_work = x / scale

        if m_w:
            # stage A in (x, w): smallest slacks that make this level's
            # inequalities consistent with everything already committed
            slack_obj = np.hstack([np.zeros((m_w, dim)), np.eye(m_w)])
            aug_eq = np.hstack([hard_eq_a, np.zeros((hard_eq_a.shape[0], m_w))])
            aug_in = np.vstack(
                [
                    np.hstack([hard_in_a, np.zeros((hard_in_a.shape[0], m_w))]),
                    np.hstack([c_in, -np.eye(m_w)]),
                    np.hstack([np.zeros((m_w, dim)), -np.eye(m_w)]),
                ]
            )
            aug_in_b = np.concatenate([hard_in_b, d_in, np.zeros(m_w)])
            w_start = np.maximum(c_in @ x_work - d_in, 0.0)
            z_slack, _ = _active_set_solve(
                slack_obj,
                np.zeros(m_w),
                aug_eq,
                hard_eq_b,
                aug_in,
                aug_in_b,
                np.concatenate([x_work, w_start]),
            )
            w_opt = np.where(z_slack[dim:] > _ACTIVE_TOL, z_slack[dim:], 0.0)
            if first_priority and np.any(w_opt > _ACTIVE_TOL):
                row = int(np.argmax(w_opt))
                raise InfeasibleError(
                    f"priority {priority} inequality row {row} is inconsistent", row=row
                )
            x_work = z_slack[:dim]
        else:
            w_opt = np.zeros(0)

        # stage B in x only: serve the equality objective with slacks frozen
        if a_eq.shape[0]:
            level_in_a = np.vstack([hard_in_a, c_in])
            level_in_b = np.concatenate([hard_in_b, d_in + w_opt])
            x_work, _ = _active_set_solve(
                a_eq, b_eq, hard_eq_a, hard_eq_b, level_in_a, level_in_b, x_work
            )
        first_priority = False

        residual = float(
            np.sqrt(np.linalg.norm(a_eq @ x_work - b_eq) ** 2 + np.linalg.norm(w_opt) ** 2)
        )
        solution.residuals[priority] = residual
        solution.slacks[priority] = w_opt.copy()
        level_constraints[priority] = (c_in, d_in + w_opt)

        # freeze this level for everything below it
        if a_eq.shape[0]:
            committed_eq_a.append(a_eq)
            committed_eq_b.append(a_eq @ x_work)
        if m_w:
            committed_in_a.append(c_in)
            committed_in_b.append(d_in + w_opt)
        x = x_work * scale

    # activity is reported against the final solution
    x_final_scaled = x / scale
    for priority, (c_in, d_frozen) in level_constraints.items():
        if c_in.shape[0]:
            tight = np.nonzero(c_in @ x_final_scaled >= d_frozen - _ACTIVE_TOL)[0]
            solution.active[priority] = tight.tolist()
        else:
            solution.active[priority] = []

    solution.x = x
    return solution
