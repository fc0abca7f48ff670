"""Shared linear pieces of the dual objectives, expressed over dataset rows.

For a dataset row i with pair p_i = (s, a) and next-state distribution N_i:

    backup(Q)_i   = gamma * sum_{s'} N_i(s') sum_{a'} pi(a'|s') Q(s', a') - Q(p_i)
    vbackup(V)_i  = gamma * sum_{s'} N_i(s') V(s') - V(s_i)

In exact mode these are (gamma P^pi - I) Q and (gamma T - I) V restricted to pairs.
"""

import numpy as np

from dualrl.errors import CoverageError, UndiscountedUnsupported
from dualrl.mdp import initial_pairs


class QBackup:
    def __init__(self, mdp, rows, pi, gamma=None):
        self.S, self.A, self.n = mdp.n_states, mdp.n_actions, mdp.n_pairs
        self.rows = rows
        self.pi = np.asarray(pi, dtype=float)
        self.gamma = mdp.discount if gamma is None else gamma
        self.reward = rows.select(mdp.flat_reward)
        self.nu = initial_pairs(mdp, self.pi)

    def next_value(self, q):
        return self.rows.next_dist @ (self.pi * q.reshape(self.S, self.A)).sum(axis=1)

    def apply(self, q):
        return self.gamma * self.next_value(q) - self.rows.select(q)

    def adjoint(self, u):
        """Transpose of ``apply``: maps a per-row vector to a state-action vector."""
        into = self.rows.next_dist.T @ u
        return self.gamma * (self.pi * into[:, None]).reshape(-1) - self.rows.scatter(u, self.n)

    def policy_grad(self, q, u, init_coef):
        """d/d pi(a|s) of init_coef * E_{mu0,pi}[Q] + sum_i u_i backup(Q)_i."""
        into = self.rows.next_dist.T @ u
        return q.reshape(self.S, self.A) * (init_coef * self.init_state() + self.gamma * into)[:, None]

    def init_state(self):
        return self.nu.reshape(self.S, self.A).sum(axis=1)

    def matrix(self):
        """Dense (rows, pairs) matrix of ``apply``."""
        m = self.rows.pair.size
        B = self.gamma * (self.rows.next_dist[:, :, None] * self.pi[None]).reshape(m, self.n)
        B[np.arange(m), self.rows.pair] -= 1.0
        return B


class VBackup:
    def __init__(self, mdp, rows, gamma=None):
        self.S, self.A, self.n = mdp.n_states, mdp.n_actions, mdp.n_pairs
        self.rows = rows
        self.gamma = mdp.discount if gamma is None else gamma
        self.state = rows.pair // self.A
        self.reward = rows.select(mdp.flat_reward)

    def apply(self, v):
        return self.gamma * (self.rows.next_dist @ v) - v[self.state]

    def adjoint(self, u):
        return self.gamma * (self.rows.next_dist.T @ u) - np.bincount(self.state, weights=u, minlength=self.S)


# Default step sizes were tuned where the weighted backup curvature is at most this value.
CURVATURE_REF = 0.4


def backup_curvature(backup, n_in, weight):
    """Spectral norm of M^T diag(w) M for the dense matrix M of ``backup.apply``."""
    M = np.stack([backup.apply(e) for e in np.eye(n_in)], axis=1)
    return float(np.linalg.norm(M.T @ (weight[:, None] * M), 2))


def default_config(config, base, curvature):
    """``config`` if given, else ``base`` with both steps shrunk when the curvature is large."""
    if config is not None:
        return config
    scale = min(1.0, CURVATURE_REF / curvature) if curvature > 0 else 1.0
    return base.with_(step_size_min=base.step_size_min * scale, step_size_max=base.step_size_max * scale)


def softmax_policy_grad(pi, G):
    """Chain rule from d/d pi(a|s) to d/d logits for a row-wise softmax."""
    return pi * (G - (pi * G).sum(axis=1, keepdims=True))


def require_discounted(mdp, what):
    if mdp.discount >= 1.0:
        raise UndiscountedUnsupported(f"{what} needs discount < 1; use the undiscounted estimators")


def prepare_dataset(dataset, mdp, epsilon=1e-8, allow_clamp=False, target=None):
    """Return the dataset to use, checking coverage.

    Without a target every pair must carry at least ``epsilon`` mass; with a target only the
    pairs the target visits are checked. ``allow_clamp`` raises small weights to ``epsilon``
    instead of failing.
    """
    from dualrl.dataset import coverage_check, full_support_violations

    dataset.check_matches(mdp)
    if target is None:
        bad = full_support_violations(dataset, epsilon)
        report = [(i // mdp.n_actions, i % mdp.n_actions, None, float(dataset.weights[i])) for i in bad]
    else:
        report = coverage_check(dataset, mdp, target, epsilon)
    if report:
        if allow_clamp:
            return dataset.clamped(epsilon)
        raise CoverageError(report)
    return dataset
