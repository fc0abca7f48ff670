"""Average-reward (discount = 1) evaluation and optimization.

Every routine here treats the MDP as undiscounted regardless of its ``discount`` field.
Q and V are only defined up to an additive constant, so their first coordinate is pinned
to zero.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from dualrl import oracles
from dualrl.convex import f_divergence, make_generator
from dualrl.errors import CoverageError, NotErgodic
from dualrl.evaluation import LAGRANGIAN_CONFIG, PENALIZED_CONFIG
from dualrl.mdp import Policy
from dualrl.policy_opt import OPT_CONFIG, OptResult
from dualrl.solver import SolveReport, SolverConfig, solve_min, solve_saddle
from dualrl.terms import QBackup, VBackup, backup_curvature, default_config, prepare_dataset, softmax_policy_grad
from dualrl.vlp import VLP_CONFIG, _recover, _reps

UNDISC_DUAL_CONFIG = SolverConfig(step_size_min=1.0, averaging=False, grad_tol=1e-10)
# The undiscounted backup P - I is worse conditioned than the discounted one; (1, 1) diverges.
UNDISC_OPT_CONFIG = OPT_CONFIG.with_(step_size_min=0.5, step_size_max=0.5)


@dataclass
class UndiscountedResult:
    zeta_table: np.ndarray
    q_table: np.ndarray
    lam: float
    value_estimate: float
    report: SolveReport
    method: str = ""
    objective_value: float = float("nan")


def _pi(policy):
    return policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)


def _check_target(mdp, dataset, pi, epsilon, allow_clamp):
    # Raises NotErgodic for periodic or reducible target chains.
    d = oracles.exact_stationary(mdp, pi)
    bad = np.nonzero((d > epsilon) & (dataset.weights < epsilon))[0]
    if bad.size:
        if allow_clamp:
            return dataset.clamped(epsilon)
        raise CoverageError([(int(i // mdp.n_actions), int(i % mdp.n_actions), float(d[i]), float(dataset.weights[i])) for i in bad])
    return dataset


def _pin(x):
    return np.concatenate([[0.0], x])


def _value(dataset, mdp, zeta):
    return float(dataset.weights @ (zeta * mdp.flat_reward))


def undisc_dual_objective(mdp, target, dataset, gen, reward_scale=0.0):
    """(Q, lam) -> (value, dQ, dlam) of -lam + E_{d^D}[f*(lam + c R + P^pi Q - Q)]."""
    gen = make_generator(gen)
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, _pi(target), gamma=1.0)
    w = rows.weight

    def objective(q, lam):
        y = lam + reward_scale * bk.reward + bk.apply(q)
        u = w * gen.conjugate_derivative(y)
        return -lam + w @ gen.conjugate(y), bk.adjoint(u), -1.0 + u.sum()

    return objective


def undisc_fdiv_dual(mdp, target, dataset, gen="square", config=None, allow_clamp=False, epsilon=1e-8):
    """min over Q, lam of -lam + E_{d^D}[f*(lam + P^pi Q - Q)], zeta = f*'(lam + P^pi Q - Q)."""
    gen = make_generator(gen)
    pi = _pi(target)
    dataset = _check_target(mdp, dataset, pi, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, pi, gamma=1.0)
    obj = undisc_dual_objective(mdp, pi, dataset, gen)
    n = mdp.n_pairs

    def flat(x):
        val, gq, glam = obj(_pin(x[:-1]), x[-1])
        return val, np.concatenate([gq[1:], [glam]])

    config = default_config(config, UNDISC_DUAL_CONFIG, backup_curvature(bk, n, rows.weight))
    x, report = solve_min(flat, np.zeros(n), config)
    q, lam = _pin(x[:-1]), float(x[-1])
    y = lam + bk.apply(q)
    mass = rows.scatter(rows.weight, n)
    zeta = rows.scatter(rows.weight * gen.conjugate_derivative(y), n) / np.where(mass > 0, mass, 1.0)
    return UndiscountedResult(zeta, q, lam, _value(dataset, mdp, zeta), report, f"undisc-dual:{gen.name}", report.objective_value)


def undisc_lagrangian_objective(mdp, target, dataset, gen="square", regularized=False):
    """(Q, lam, zeta) -> (value, dQ, dlam, dzeta).

    Plain:       -lam + E[zeta (lam + P^pi Q - Q)] - E[f(zeta)]
    Regularized: -lam + lam^2 / 2 + E[zeta (lam + P^pi Q - Q + Q^2 / 4)]  (no f term)
    """
    gen = make_generator(gen)
    rows = dataset.rows(mdp)
    bk = QBackup(mdp, rows, _pi(target), gamma=1.0)
    w = rows.weight
    dD = dataset.weights
    n = mdp.n_pairs

    def objective(q, lam, zeta):
        zr = rows.select(zeta)
        resid = lam + bk.apply(q)
        if regularized:
            qr = rows.select(q)
            resid = resid + 0.25 * qr * qr
        val = -lam + w @ (zr * resid)
        g_q = bk.adjoint(w * zr)
        g_lam = -1.0 + w @ zr
        g_z = rows.scatter(w * resid, n)
        if regularized:
            val += 0.5 * lam * lam
            g_lam += lam
            g_q = g_q + 0.5 * rows.scatter(w * zr * rows.select(q), n)
        else:
            val -= dD @ gen.eval(zeta)
            g_z = g_z - dD * gen.derivative(zeta)
        return val, g_q, g_lam, g_z

    return objective


def undisc_lagrangian(mdp, target, dataset, gen="square", regularized=False, config=None, allow_clamp=False, epsilon=1e-8):
    """max over zeta >= 0, min over (Q, lam) of the plain or GenDICE-regularized Lagrangian."""
    gen = make_generator(gen)
    pi = _pi(target)
    dataset = _check_target(mdp, dataset, pi, epsilon, allow_clamp)
    obj = undisc_lagrangian_objective(mdp, pi, dataset, gen, regularized)
    n = mdp.n_pairs
    log_param = not regularized and gen.domain[0] >= 0

    def saddle(x, z):
        zeta = np.exp(z) if log_param else z
        val, gq, glam, gz = obj(_pin(x[:-1]), x[-1], zeta)
        return val, np.concatenate([gq[1:], [glam]]), (zeta * gz if log_param else gz)

    rows = dataset.rows(mdp)
    curvature = backup_curvature(QBackup(mdp, rows, pi, gamma=1.0), n, rows.weight)
    config = default_config(config, LAGRANGIAN_CONFIG if regularized else PENALIZED_CONFIG, curvature)
    if log_param:
        x, z, report = solve_saddle(saddle, (np.zeros(n), np.zeros(n)), config)
        zeta = np.exp(z)
    else:
        x, zeta, report = solve_saddle(saddle, (np.zeros(n), np.ones(n)), config, project_y=lambda v: np.maximum(v, 0.0))
    q, lam = _pin(x[:-1]), float(x[-1])
    method = "undisc-lagrangian" + (":gendice" if regularized else f":{gen.name}")
    return UndiscountedResult(zeta, q, lam, _value(dataset, mdp, zeta), report, method, report.objective_value)


def stationary_regularized_value(mdp, policy, weights, gen):
    """Oracle average reward minus D_f(d^pi || d^D) with d^pi the stationary distribution."""
    d = oracles.exact_stationary(mdp, policy)
    return float(d @ mdp.flat_reward - f_divergence(gen, d, weights))


def undisc_policy_opt(mdp, dataset, gen="square", config=None, allow_clamp=False, epsilon=1e-8, init_logits=None):
    """max over logits, min over (Q, lam) of -lam + E_{d^D}[f*(lam + R + P^pi Q - Q)]."""
    gen = make_generator(gen)
    if dataset.behavior is not None:
        oracles.exact_stationary(mdp, dataset.behavior)
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    shape = (mdp.n_states, mdp.n_actions)
    n = mdp.n_pairs
    w = rows.weight
    reward = rows.select(mdp.flat_reward)

    def saddle(x, theta):
        q, lam = _pin(x[:-1]), x[-1]
        pi = softmax(theta.reshape(shape), axis=1)
        bk = QBackup(mdp, rows, pi, gamma=1.0)
        y = lam + reward + bk.apply(q)
        u = w * gen.conjugate_derivative(y)
        val = -lam + w @ gen.conjugate(y)
        g_x = np.concatenate([bk.adjoint(u)[1:], [-1.0 + u.sum()]])
        g_theta = softmax_policy_grad(pi, bk.policy_grad(q, u, 0.0))
        return val, g_x, g_theta.reshape(-1)

    theta0 = np.zeros(shape) if init_logits is None else np.asarray(init_logits, dtype=float)
    uniform = np.full(shape, 1.0 / mdp.n_actions)
    config = default_config(config, UNDISC_OPT_CONFIG, backup_curvature(QBackup(mdp, rows, uniform, gamma=1.0), n, w))
    x, theta, report = solve_saddle(saddle, (np.zeros(n), theta0.reshape(-1)), config)
    theta = theta.reshape(shape)
    pi = softmax(theta, axis=1)
    extras = {"ergodic": True}
    try:
        value = float(oracles.exact_stationary(mdp, pi) @ mdp.flat_reward)
        extras["oracle_regularized_objective"] = stationary_regularized_value(mdp, pi, dataset.weights, gen)
    except NotErgodic:
        value = float("nan")
        extras["ergodic"] = False
    return OptResult(theta, _pin(x[:-1]), value, report.objective_value, report, f"undisc-opt:{gen.name}", extras)


def undisc_reps_objective(mdp, dataset):
    """V -> (value, dV) of log E_{d^D}[exp(R + T V - V)]."""
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows, gamma=1.0)
    zero = np.zeros(mdp.n_states)
    return lambda v: _reps(mdp, rows, vb, v, 1.0, zero)[:2]


def undisc_reps(mdp, dataset, config=None, allow_clamp=False, epsilon=1e-8):
    """min over V (V[0] = 0) of log E_{d^D}[exp(R + T V - V)]."""
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows, gamma=1.0)
    zero = np.zeros(mdp.n_states)

    def pinned(x):
        val, grad, _ = _reps(mdp, rows, vb, _pin(x), 1.0, zero)
        return val, grad[1:]

    config = default_config(config, VLP_CONFIG, backup_curvature(vb, mdp.n_states, rows.weight))
    x, report = solve_min(pinned, np.zeros(mdp.n_states - 1), config)
    v = _pin(x)
    _, _, u = _reps(mdp, rows, vb, v, 1.0, zero)
    return _recover(mdp, dataset, rows.scatter(u, mdp.n_pairs), v, None, report.objective_value, report, "undisc-reps")
