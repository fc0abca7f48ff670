"""Offline policy optimization from the Q-LP: regularized max-return, imitation and the
Lagrangian policy gradient."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from dualrl import oracles
from dualrl.convex import KL, f_divergence, make_generator, softmax_weights
from dualrl.errors import InnerNonconvergence
from dualrl.evaluation import LAGRANGIAN_CONFIG, lagrangian_ope
from dualrl.mdp import Policy
from dualrl.solver import SolveReport, SolverConfig, solve_min, solve_saddle
from dualrl.terms import (QBackup, backup_curvature, default_config, prepare_dataset, require_discounted,
                          softmax_policy_grad)

OPT_CONFIG = SolverConfig(step_size_min=1.0, step_size_max=1.0, averaging=False, grad_tol=1e-9, check_every=100)
GRADIENT_CONFIG = LAGRANGIAN_CONFIG.with_(nested=True)


@dataclass
class OptResult:
    policy_logits: np.ndarray
    q_table: np.ndarray
    value_of_policy: float
    regularized_objective: float
    report: SolveReport
    method: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def policy(self):
        return Policy.from_logits(self.policy_logits)


class _QlpObjective:
    """(1 - gamma) E_{mu0,pi}[Q] + Phi(c R + gamma P^pi Q - Q) with pi = softmax(logits).

    Phi is E_{d^D}[f*(.)] for an f-divergence or log E_{d^D}[exp(.)] for the KL mode.
    """

    def __init__(self, mdp, rows, gen, reward_scale, log_mean_exp):
        self.mdp = mdp
        self.rows = rows
        self.gen = gen
        self.c = reward_scale
        self.lme = log_mean_exp
        self.shape = (mdp.n_states, mdp.n_actions)
        self.reward = rows.select(mdp.flat_reward)
        self.g = mdp.discount

    def phi(self, y):
        w = self.rows.weight
        if self.lme:
            m = y[w > 0].max()
            val = m + np.log(w @ np.exp(y - m))
            return val, w * softmax_weights(y, w)
        return w @ self.gen.conjugate(y), w * self.gen.conjugate_derivative(y)

    def __call__(self, q, logits):
        pi = softmax(logits.reshape(self.shape), axis=1)
        bk = QBackup(self.mdp, self.rows, pi)
        y = self.c * self.reward + bk.apply(q)
        phi, u = self.phi(y)
        val = (1.0 - self.g) * bk.nu @ q + phi
        g_q = (1.0 - self.g) * bk.nu + bk.adjoint(u)
        g_pi = bk.policy_grad(q, u, 1.0 - self.g)
        return val, g_q, softmax_policy_grad(pi, g_pi).reshape(-1)


def _optimize(objective, n, shape, config, init_logits):
    theta0 = np.zeros(shape) if init_logits is None else np.asarray(init_logits, dtype=float)
    if not config.nested:
        q, theta, report = solve_saddle(objective, (np.zeros(n), theta0.reshape(-1)), config)
        return q, theta.reshape(shape), report
    # Nested: gradient ascent on logits, inner minimization over Q warm-started each step.
    inner = config.with_(grad_tol=config.inner_tol, max_iters=config.max_iters)
    theta = theta0.reshape(-1).copy()
    q = np.zeros(n)
    traj = []
    for t in range(config.max_iters):
        q, rep = solve_min(lambda x: objective(x, theta)[:2], q, inner)
        if not rep.converged:
            raise InnerNonconvergence(f"inner minimization stalled at outer step {t}")
        val, _, g_theta = objective(q, theta)
        gnorm = float(np.linalg.norm(g_theta))
        if t % config.log_every == 0:
            traj.append((t, float(val)))
        if gnorm < config.grad_tol:
            return q, theta.reshape(shape), SolveReport(True, t, gnorm, float(val), traj)
        theta = theta + config.step_size_max * g_theta
    return q, theta.reshape(shape), SolveReport(False, config.max_iters, gnorm, float(val), traj)


def _uniform_curvature(mdp, rows):
    # The backup depends on pi; its curvature at the uniform policy sets the default steps.
    pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    return backup_curvature(QBackup(mdp, rows, pi), mdp.n_pairs, rows.weight)


def regularized_value(mdp, policy, weights, gen, alpha=1.0, reward_on=True):
    """Oracle value of c rho(pi) - alpha D_f(d^pi || d^D) for a policy."""
    d = oracles.exact_visitation(mdp, policy)
    c = 1.0 if reward_on else 0.0
    return float(c * d @ mdp.flat_reward - alpha * f_divergence(gen, d, weights))


def _finish(mdp, dataset, q, theta, report, method, gen, alpha, reward_on):
    pi = softmax(theta, axis=1)
    value = oracles.exact_value(mdp, pi)
    extras = {"oracle_regularized_objective": regularized_value(mdp, pi, dataset.weights, gen, alpha, reward_on)}
    return OptResult(theta, q, value, report.objective_value, report, method, extras)


def algaedice_primal(mdp, dataset, gen="square", reward_on=True, alpha=1.0, config=None,
                     allow_clamp=False, epsilon=1e-8, init_logits=None):
    """max over logits, min over Q of

        (1 - gamma) E_{mu0,pi}[Q] + E_{d^D}[(alpha f)*(c R + gamma P^pi Q - Q)]

    which equals c rho(pi) - alpha D_f(d^pi || d^D) at the inner optimum. c = 0 is imitation
    of the data distribution.
    """
    require_discounted(mdp, "algaedice_primal")
    base = make_generator(gen)
    f_alpha = base.scaled(alpha)
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    obj = _QlpObjective(mdp, rows, f_alpha, 1.0 if reward_on else 0.0, False)
    # (alpha f)* has curvature f*'' / alpha.
    config = default_config(config, OPT_CONFIG, _uniform_curvature(mdp, rows) / alpha)
    q, theta, report = _optimize(obj, mdp.n_pairs, (mdp.n_states, mdp.n_actions), config, init_logits)
    method = f"algaedice:{base.name}" + ("" if reward_on else ":noreward")
    return _finish(mdp, dataset, q, theta, report, method, base, alpha, reward_on)


def kl_qlp_objective(mdp, dataset):
    """The KL-regularized Q-LP objective as a callable (Q, logits) -> (value, dQ, dlogits)."""
    return _QlpObjective(mdp, dataset.rows(mdp), None, 1.0, True)


def kl_qlp_optimize(mdp, dataset, config=None, allow_clamp=False, epsilon=1e-8, init_logits=None):
    """max over logits, min over Q of (1 - gamma) E_{mu0,pi}[Q] + log E_{d^D}[exp(R + gamma P^pi Q - Q)]."""
    require_discounted(mdp, "kl_qlp_optimize")
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    obj = kl_qlp_objective(mdp, dataset)
    config = default_config(config, OPT_CONFIG, _uniform_curvature(mdp, obj.rows))
    q, theta, report = _optimize(obj, mdp.n_pairs, (mdp.n_states, mdp.n_actions), config, init_logits)
    return _finish(mdp, dataset, q, theta, report, "klqlp", KL(), 1.0, True)


def policy_gradient_via_lagrangian(mdp, dataset, logits, config=None, allow_clamp=False, epsilon=1e-8):
    """Gradient of rho wrt logits from the reward-mode Lagrangian at its saddle point.

    The inner saddle is solved at the fixed policy; by Danskin's argument the gradient of the
    optimal value is the partial derivative of the Lagrangian in pi at the solution.
    """
    require_discounted(mdp, "policy_gradient_via_lagrangian")
    logits = np.asarray(logits, dtype=float)
    pi = softmax(logits, axis=1)
    if config is None:
        rows = prepare_dataset(dataset, mdp, epsilon, allow_clamp, target=Policy(pi)).rows(mdp)
        config = default_config(None, GRADIENT_CONFIG, backup_curvature(QBackup(mdp, rows, pi), mdp.n_pairs, rows.weight))
    # Gradient error tracks the inner residual, roughly 0.4 * inner_tol on random instances.
    inner = config.with_(grad_tol=config.inner_tol)
    res = lagrangian_ope(mdp, pi, dataset, "reward", inner, allow_clamp, epsilon)
    if not res.report.converged:
        raise InnerNonconvergence(f"inner saddle residual {res.report.final_grad_norm:.3g} above tolerance")
    ds = prepare_dataset(dataset, mdp, epsilon, allow_clamp, target=Policy(pi))
    rows = ds.rows(mdp)
    bk = QBackup(mdp, rows, pi)
    u = rows.weight * rows.select(res.zeta_table)
    return softmax_policy_grad(pi, bk.policy_grad(res.q_table, u, 1.0 - mdp.discount))
