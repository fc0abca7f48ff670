"""V-LP duals: f-divergence regularized optimization, REPS, max-likelihood policy
extraction and the V-LP evaluation Lagrangian."""

from dataclasses import dataclass, field

import numpy as np

from dualrl.convex import KL, make_generator, softmax_weights
from dualrl.dataset import normalize_rows
from dualrl.errors import DomainError
from dualrl.evaluation import LAGRANGIAN_CONFIG
from dualrl.mdp import Policy, state_marginal
from dualrl.solver import SolveReport, SolverConfig, solve_min, solve_saddle
from dualrl.terms import VBackup, backup_curvature, default_config, prepare_dataset, require_discounted

VLP_CONFIG = SolverConfig(step_size_min=1.0, averaging=False, grad_tol=1e-10)


@dataclass
class VlpResult:
    v_table: np.ndarray
    k_table: np.ndarray  # None in KL mode
    recovered_d: np.ndarray
    recovered_policy: Policy
    objective_value: float
    report: SolveReport
    method: str = ""
    extras: dict = field(default_factory=dict)


def max_likelihood_policy(dataset, weights):
    """Per-state maximizer of E_{d^D}[w(s,a) log pi(a|s)]: pi(a|s) proportional to d^D(s,a) w(s,a).

    States with no weighted mass fall back to uniform.
    """
    pi, _ = normalize_rows(np.asarray(dataset.weights) * np.asarray(weights, dtype=float), dataset.n_actions)
    return Policy(pi)


def _recover(mdp, dataset, d_raw, v, k, value, report, method):
    raw_sum = float(d_raw.sum())
    d = d_raw / raw_sum
    pi, empty = normalize_rows(d, mdp.n_actions)
    extras = {"raw_sum": raw_sum, "normalized_sum": float(d.sum()), "uniform_fallback_states": empty}
    return VlpResult(v, k, d, Policy(pi), float(value), report, method, extras)


def vlp_fdiv_dual(mdp, dataset, gen="square", config=None, allow_clamp=False, epsilon=1e-8):
    """min over V and K >= 0 of (1 - gamma) E_{mu0}[V] + E_{d^D}[f*(K + R + gamma T V - V)].

    The regularized optimum is d*(s,a) = d^D(s,a) f*'(K + R + gamma T V - V) and the policy
    follows by normalizing d* per state.
    """
    require_discounted(mdp, "vlp_fdiv_dual")
    gen = make_generator(gen)
    if isinstance(gen, KL) or isinstance(getattr(gen, "base", None), KL):
        raise DomainError("use reps_objective_solve for the KL generator")
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows)
    g = mdp.discount
    S, n = mdp.n_states, mdp.n_pairs
    w = rows.weight

    def split(x):
        return x[:S], x[S:]

    def objective(x):
        v, k = split(x)
        y = rows.select(k) + vb.reward + vb.apply(v)
        u = w * gen.conjugate_derivative(y)
        val = (1.0 - g) * mdp.initial_dist @ v + w @ gen.conjugate(y)
        return val, np.concatenate([(1.0 - g) * mdp.initial_dist + vb.adjoint(u), rows.scatter(u, n)])

    def project(x):
        return np.concatenate([x[:S], np.maximum(x[S:], 0.0)])

    config = default_config(config, VLP_CONFIG, backup_curvature(vb, S, w))
    x, report = solve_min(objective, np.zeros(S + n), config, project=project)
    v, k = split(x)
    y = rows.select(k) + vb.reward + vb.apply(v)
    d_raw = rows.scatter(w * gen.conjugate_derivative(y), n)
    return _recover(mdp, dataset, d_raw, v, k, report.objective_value, report, f"vlp:{gen.name}")


def reps_objective(mdp, dataset, v):
    """(1 - gamma) E_{mu0}[V] + log E_{d^D}[exp(R + gamma T V - V)] and its gradient."""
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows)
    return _reps(mdp, rows, vb, v, mdp.discount)


def _reps(mdp, rows, vb, v, g, init_coef=None):
    w = rows.weight
    y = vb.reward + vb.apply(v)
    m = y[w > 0].max()
    val = m + np.log(w @ np.exp(y - m))
    u = w * softmax_weights(y, w)
    if init_coef is None:
        init_coef = (1.0 - g) * mdp.initial_dist
    return init_coef @ v + val, init_coef + vb.adjoint(u), u


def reps_objective_solve(mdp, dataset, config=None, allow_clamp=False, epsilon=1e-8):
    """min over V of (1 - gamma) E_{mu0}[V] + log E_{d^D}[exp(R + gamma T V - V)].

    The KL conjugate already lives on normalized nonnegative distributions, so there is no K.
    The optimum is d* = d^D * softmax weights of the advantage-like residual.
    """
    require_discounted(mdp, "reps_objective_solve")
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp)
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows)
    objective = lambda v: _reps(mdp, rows, vb, v, mdp.discount)[:2]
    config = default_config(config, VLP_CONFIG, backup_curvature(vb, mdp.n_states, rows.weight))
    v, report = solve_min(objective, np.zeros(mdp.n_states), config)
    _, _, u = _reps(mdp, rows, vb, v, mdp.discount)
    d_raw = rows.scatter(u, mdp.n_pairs)
    return _recover(mdp, dataset, d_raw, v, None, report.objective_value, report, "reps")


def vlp_policy_eval_lagrangian(mdp, target, dataset, config=None, allow_clamp=False, epsilon=1e-8):
    """Lagrangian of max over mu of sum_s mu(s) E_pi[R(s, .)] under the V-LP flow constraints.

    With mu(s) = eta(s) d^D(s) the Lagrangian is

        (1 - gamma) E_{mu0}[V] + E_{d^D}[eta(s) pi(a|s) / d^D(a|s) (R + gamma T V - V(s))]

    minimized over V and maximized over eta >= 0. Unlike the Q-LP estimators this needs the
    behavior conditional d^D(a|s). Returns (mu, value, report).
    """
    require_discounted(mdp, "vlp_policy_eval_lagrangian")
    pi = target.probs if isinstance(target, Policy) else np.asarray(target, dtype=float)
    dataset = prepare_dataset(dataset, mdp, epsilon, allow_clamp, target=Policy(pi))
    rows = dataset.rows(mdp)
    vb = VBackup(mdp, rows)
    g = mdp.discount
    S = mdp.n_states
    cond = dataset.conditional().reshape(-1)
    ratio = rows.select(np.where(cond > 0, pi.reshape(-1) / np.where(cond > 0, cond, 1.0), 0.0))
    coef = rows.weight * ratio
    state = vb.state

    def objective(v, eta):
        resid = vb.reward + vb.apply(v)
        er = eta[state]
        val = (1.0 - g) * mdp.initial_dist @ v + coef @ (er * resid)
        g_v = (1.0 - g) * mdp.initial_dist + vb.adjoint(coef * er)
        g_eta = np.bincount(state, weights=coef * resid, minlength=S)
        return val, g_v, g_eta

    config = default_config(config, LAGRANGIAN_CONFIG, backup_curvature(vb, S, rows.weight))
    v, eta, report = solve_saddle(objective, (np.zeros(S), np.ones(S)), config,
                                  project_y=lambda e: np.maximum(e, 0.0))
    mu = eta * state_marginal(mdp, dataset.weights)
    value = float(mu @ (pi * mdp.reward).sum(axis=1))
    return mu, value, report
