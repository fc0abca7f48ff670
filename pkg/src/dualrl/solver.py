"""First-order minimization and min-max solvers over flat parameter vectors.

Objectives return ``(value, grad)`` for minimization and ``(value, grad_min, grad_max)``
for saddle problems. Constraints are imposed by optional projection callbacks supplied
by the caller.
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from dualrl.errors import NonFiniteObjective

DECAYS = ("none", "inverse-sqrt")
UPDATES = ("extragradient", "gda")


@dataclass(frozen=True)
class SolverConfig:
    step_size_min: float = 0.1  # step for the minimizing block
    step_size_max: float = 0.1  # step for the maximizing block
    max_iters: int = 200000
    grad_tol: float = 1e-8
    step_decay: str = "none"
    seed: int = 0
    averaging: bool = True
    update: str = "extragradient"
    check_every: int = 50
    log_every: int = 1000
    nested: bool = False
    inner_tol: float = 1e-6

    def __post_init__(self):
        if not (self.step_size_min > 0 and self.step_size_max > 0):
            raise ValueError("step sizes must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_decay not in DECAYS:
            raise ValueError(f"step_decay must be one of {DECAYS}")
        if self.update not in UPDATES:
            raise ValueError(f"update must be one of {UPDATES}")
        if self.check_every < 1 or self.log_every < 1:
            raise ValueError("check_every and log_every must be positive")

    def with_(self, **kw):
        return replace(self, **kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**(data or {}))


@dataclass
class SolveReport:
    converged: bool
    iters_used: int
    final_grad_norm: float
    objective_value: float
    trajectory: list = field(default_factory=list)  # (iteration, objective) pairs

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "iters_used": int(self.iters_used),
            "final_grad_norm": float(self.final_grad_norm),
            "objective_value": float(self.objective_value),
            "trajectory": [[int(i), float(v)] for i, v in self.trajectory],
        }


def _identity(x):
    return x


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteObjective("objective or gradient became non-finite")


def _step(config, t):
    if config.step_decay == "inverse-sqrt":
        return 1.0 / np.sqrt(1.0 + t)
    return 1.0


# Backtracking halvings allowed per descent step.
MAX_HALVINGS = 60


def solve_min(objective, init, config=None, project=None):
    """Projected gradient descent with step ``step_size_min`` (optionally inverse-sqrt decayed).

    The step is halved whenever the sufficient-decrease test fails, so objectives whose
    gradient is not globally Lipschitz (p-norm conjugates near zero) cannot lock into a cycle.
    """
    config = config or SolverConfig()
    project = project or _identity
    x = project(np.array(init, dtype=float))
    val, g = objective(x)
    _check_finite(val, g)
    traj = [(0, float(val))]
    eta = config.step_size_min
    t = 0
    while True:
        # Gradient mapping norm: plain gradient norm without constraints.
        gmap = np.linalg.norm(x - project(x - g))
        if gmap < config.grad_tol or t >= config.max_iters:
            break
        for _ in range(MAX_HALVINGS):
            step = eta * _step(config, t)
            x_new = project(x - step * g)
            val_new, g_new = objective(x_new)
            _check_finite(val_new, g_new)
            dx = x_new - x
            slack = 1e-12 * (1.0 + abs(val))
            if val_new <= val + g @ dx + dx @ dx / (2 * step) + slack:
                break
            eta *= 0.5
        x, val, g = x_new, val_new, g_new
        t += 1
        if t % config.log_every == 0:
            traj.append((t, float(val)))
    return x, SolveReport(bool(gmap < config.grad_tol), t, float(gmap), float(val), traj)


def saddle_residual(objective, x, y, project_x=None, project_y=None):
    """Norm of the projected gradient mapping of both blocks at (x, y)."""
    project_x = project_x or _identity
    project_y = project_y or _identity
    val, gx, gy = objective(x, y)
    _check_finite(val, gx, gy)
    rx = x - project_x(x - gx)
    ry = y - project_y(y + gy)
    return float(np.sqrt(rx @ rx + ry @ ry)), float(val)


def solve_saddle(objective, init, config=None, project_x=None, project_y=None):
    """min over x, max over y of objective(x, y).

    ``update="extragradient"`` (default) takes a look-ahead step and updates with the
    gradients there; ``update="gda"`` is plain simultaneous descent-ascent. With
    ``averaging`` the uniform average of iterates is monitored and returned. Convergence is
    declared when the gradient-mapping residual at the returned point is below grad_tol.
    """
    config = config or SolverConfig()
    px = project_x or _identity
    py = project_y or _identity
    x = px(np.array(init[0], dtype=float))
    y = py(np.array(init[1], dtype=float))
    ex, ey = config.step_size_min, config.step_size_max
    sx = np.zeros_like(x)
    sy = np.zeros_like(y)
    traj = []
    res, val = saddle_residual(objective, x, y, px, py)
    traj.append((0, val))
    t = 0
    cx, cy = x, y
    while res >= config.grad_tol and t < config.max_iters:
        k = _step(config, t)
        val, gx, gy = objective(x, y)
        _check_finite(val, gx, gy)
        if config.update == "extragradient":
            xh = px(x - k * ex * gx)
            yh = py(y + k * ey * gy)
            _, gx, gy = objective(xh, yh)
            _check_finite(gx, gy)
        x = px(x - k * ex * gx)
        y = py(y + k * ey * gy)
        t += 1
        if config.averaging:
            sx += x
            sy += y
        if t % config.check_every == 0 or t == config.max_iters:
            cx, cy = (sx / t, sy / t) if config.averaging else (x, y)
            res, val = saddle_residual(objective, cx, cy, px, py)
        if t % config.log_every == 0:
            traj.append((t, val))
    if t == 0 or not (t % config.check_every == 0 or t == config.max_iters):
        cx, cy = (sx / t, sy / t) if (config.averaging and t) else (x, y)
        res, val = saddle_residual(objective, cx, cy, px, py)
    return cx, cy, SolveReport(bool(res < config.grad_tol), t, res, val, traj)
