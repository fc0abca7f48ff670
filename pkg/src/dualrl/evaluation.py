"""Discounted off-policy evaluation from the Q-LP: Lagrangian saddle points and the DualDICE dual."""

from dataclasses import dataclass, field

import numpy as np

from dualrl.convex import Square, make_generator
from dualrl.errors import ClosedFormUnsupported
from dualrl.mdp import Policy
from dualrl.solver import SolveReport, SolverConfig, solve_min, solve_saddle
from dualrl.terms import QBackup, backup_curvature, default_config, prepare_dataset, require_discounted

# Extragradient on (Q, zeta) with a larger step on the dual block, whose gradient is scaled by d^D.
LAGRANGIAN_CONFIG = SolverConfig(step_size_min=0.5, step_size_max=5.0, averaging=False, grad_tol=1e-10, check_every=100)
# With a penalty defined only on zeta >= 0 (KL) zeta = exp(w) and the max block is w.
LOG_LAGRANGIAN_CONFIG = LAGRANGIAN_CONFIG.with_(step_size_min=1.0, step_size_max=1.0)
# A penalty adds curvature d^D f'' to the max block; a max step of 5 overshoots on small instances.
PENALIZED_CONFIG = LAGRANGIAN_CONFIG.with_(step_size_min=1.0, step_size_max=1.0)
DUAL_CONFIG = SolverConfig(step_size_min=1.0, averaging=False, grad_tol=1e-10)


@dataclass
class EvalResult:
    value_estimate: float
    q_table: np.ndarray
    zeta_table: np.ndarray
    report: SolveReport
    method: str
    objective_value: float = float("nan")
    extras: dict = field(default_factory=dict)


def _pi(policy):
    return policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)


def parse_h_mode(h_mode):
    """"reward" | "zero" | "fdiv:<gen>" or a ("fdiv", gen) tuple -> (kind, generator or None)."""
    if isinstance(h_mode, tuple):
        return h_mode[0], make_generator(h_mode[1]) if h_mode[0] == "fdiv" else None
    kind, _, rest = str(h_mode).lower().partition(":")
    if kind in ("reward", "zero") and not rest:
        return kind, None
    if kind == "fdiv":
        return "fdiv", make_generator(rest or "square")
    raise ValueError(f"unknown objective mode {h_mode!r}")


def lagrangian_value(mdp, target, dataset, q, zeta, h_mode="reward"):
    """Value of the selected Lagrangian at (Q, zeta), no optimization."""
    kind, gen = parse_h_mode(h_mode)
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, _pi(target))
    c = 1.0 if kind == "reward" else 0.0
    zr = rows.select(zeta)
    val = (1.0 - mdp.discount) * bk.nu @ q + rows.weight @ (zr * (c * bk.reward + bk.apply(q)))
    if kind == "fdiv":
        val -= dataset.weights @ gen.eval(zeta)
    return float(val)


def doubly_robust_eval(mdp, target, dataset, q_table, zeta_table):
    """Reward-mode Lagrangian at the supplied tables; exact if either table is the true one."""
    require_discounted(mdp, "doubly_robust_eval")
    return lagrangian_value(mdp, target, dataset, np.asarray(q_table, float), np.asarray(zeta_table, float), "reward")


def value_from_zeta(dataset, mdp, zeta_table):
    """E_{d^D}[zeta R]."""
    return float(dataset.weights @ (np.asarray(zeta_table, dtype=float) * mdp.flat_reward))


def lagrangian_ope(mdp, target, dataset, h_mode="reward", config=None, allow_clamp=False, epsilon=1e-8):
    """min over Q, max over zeta >= 0 of

        (1 - gamma) E_{mu0,pi}[Q] + E_{d^D}[zeta (c R + gamma P^pi Q - Q)] - [fdiv] E_{d^D}[f(zeta)]

    with c = 1 in reward mode and 0 otherwise.
    """
    require_discounted(mdp, "lagrangian_ope")
    kind, gen = parse_h_mode(h_mode)
    log_param = gen is not None and gen.domain[0] >= 0
    base = LOG_LAGRANGIAN_CONFIG if log_param else PENALIZED_CONFIG if gen is not None else LAGRANGIAN_CONFIG
    pi = _pi(target)
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp, target=Policy(pi))
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, pi)
    g = mdp.discount
    n = mdp.n_pairs
    c = 1.0 if kind == "reward" else 0.0
    w = rows.weight
    dD = dataset.weights
    config = default_config(config, base, backup_curvature(bk, n, w))

    def objective(q, zeta):
        zr = rows.select(zeta)
        resid = c * bk.reward + bk.apply(q)
        val = (1.0 - g) * bk.nu @ q + w @ (zr * resid)
        g_q = (1.0 - g) * bk.nu + bk.adjoint(w * zr)
        g_z = rows.scatter(w * resid, n)
        if kind == "fdiv":
            val -= dD @ gen.eval(zeta)
            g_z = g_z - dD * gen.derivative(zeta)
        return val, g_q, g_z

    if log_param:
        def log_objective(q, logz):
            z = np.exp(logz)
            val, g_q, g_z = objective(q, z)
            return val, g_q, z * g_z

        q, logz, report = solve_saddle(log_objective, (np.zeros(n), np.zeros(n)), config)
        zeta = np.exp(logz)
    else:
        project = lambda z: np.maximum(z, 0.0)
        q, zeta, report = solve_saddle(objective, (np.zeros(n), np.ones(n)), config, project_y=project)
    saddle_val = report.objective_value
    value = saddle_val if kind == "reward" else value_from_zeta(dataset, mdp, zeta)
    method = "lagrangian:" + (kind if gen is None else f"fdiv:{gen.name}")
    return EvalResult(float(value), q, zeta, report, method, float(saddle_val))


def dualdice_dual(mdp, target, dataset, gen="square", config=None, closed_form=False, allow_clamp=False, epsilon=1e-8):
    """min over Q of (1 - gamma) E_{mu0,pi}[Q] + E_{d^D}[f*(gamma P^pi Q - Q)].

    The ratio is recovered as zeta = f*'(gamma P^pi Q - Q). For f = x^2 / 2 the objective is
    quadratic and ``closed_form`` solves its normal equations directly.
    """
    require_discounted(mdp, "dualdice_dual")
    gen = make_generator(gen)
    pi = _pi(target)
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp, target=Policy(pi))
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, pi)
    g = mdp.discount
    n = mdp.n_pairs
    w = rows.weight

    def objective(q):
        y = bk.apply(q)
        return (1.0 - g) * bk.nu @ q + w @ gen.conjugate(y), (1.0 - g) * bk.nu + bk.adjoint(w * gen.conjugate_derivative(y))

    if closed_form:
        if type(gen) is not Square:
            raise ClosedFormUnsupported(f"closed form is only available for square, not {gen.name}")
        B = bk.matrix()
        q = np.linalg.solve(B.T @ (w[:, None] * B), -(1.0 - g) * bk.nu)
        val, grad = objective(q)
        report = SolveReport(True, 0, float(np.linalg.norm(grad)), float(val))
    else:
        q, report = solve_min(objective, np.zeros(n), default_config(config, DUAL_CONFIG, backup_curvature(bk, n, w)))
    y = bk.apply(q)
    # Rows sharing a pair (sampled mode) are averaged by weight.
    mass = rows.scatter(w, n)
    zeta = rows.scatter(w * gen.conjugate_derivative(y), n) / np.where(mass > 0, mass, 1.0)
    method = f"dualdice:{gen.name}" + (":closed" if closed_form else "")
    return EvalResult(value_from_zeta(dataset, mdp, zeta), q, zeta, report, method, float(objective(q)[0]))
