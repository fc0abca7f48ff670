"""Finite MDPs, tabular policies and the four linear transition operators.

State-action vectors are flat float arrays of length ``n_states * n_actions``
with pair index ``s * n_actions + a``; state vectors have length ``n_states``.
"""

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax

from dualrl.errors import MdpValidationError, MissingPolicy, PolicyValidationError, ShapeMismatch

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class Violation:
    kind: str  # NonStochasticRow | NegativeEntry | BadDiscount | ShapeMismatch
    where: tuple = ()
    detail: str = ""

    def __str__(self):
        loc = f"{self.where}" if self.where else ""
        return f"{self.kind}{loc}: {self.detail}" if self.detail else f"{self.kind}{loc}"


def _field(mdp, name):
    if isinstance(mdp, dict):
        return mdp[name]
    return getattr(mdp, name)


def validate_mdp(mdp, tol=STOCHASTIC_TOL):
    """Check every MDP invariant and return the list of violations (empty if valid).

    ``mdp`` is a :class:`TabularMdp` or a mapping in the MDP JSON schema, so raw
    data can be validated before construction.
    """
    out = []
    try:
        T = np.asarray(_field(mdp, "transition"), dtype=float)
        R = np.asarray(_field(mdp, "reward"), dtype=float)
        mu0 = np.asarray(_field(mdp, "initial_dist"), dtype=float)
        gamma = float(_field(mdp, "discount"))
    except (KeyError, AttributeError, TypeError, ValueError) as exc:
        return [Violation("ShapeMismatch", detail=f"unreadable field: {exc}")]

    if T.ndim != 3 or T.shape[0] != T.shape[2] or T.shape[0] < 1 or T.shape[1] < 1:
        return [Violation("ShapeMismatch", detail=f"transition must be [s][a][s'], got {T.shape}")]
    S, A, _ = T.shape
    if isinstance(mdp, dict):
        for key, expect in (("n_states", S), ("n_actions", A)):
            if key in mdp and int(mdp[key]) != expect:
                out.append(Violation("ShapeMismatch", detail=f"{key}={mdp[key]} but transition implies {expect}"))
    if R.shape != (S, A):
        out.append(Violation("ShapeMismatch", detail=f"reward must be ({S}, {A}), got {R.shape}"))
    if mu0.shape != (S,):
        out.append(Violation("ShapeMismatch", detail=f"initial_dist must be ({S},), got {mu0.shape}"))
    if not np.all(np.isfinite(T)) or not np.all(np.isfinite(R)) or not np.all(np.isfinite(mu0)):
        out.append(Violation("NegativeEntry", detail="non-finite entries"))

    for s, a, s2 in zip(*np.nonzero(T < 0)):
        out.append(Violation("NegativeEntry", (int(s), int(a), int(s2)), f"transition = {T[s, a, s2]!r}"))
    row_sums = T.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(row_sums - 1.0) > tol)):
        out.append(Violation("NonStochasticRow", (int(s), int(a)), f"row sums to {row_sums[s, a]!r}"))
    if mu0.shape == (S,):
        for (s,) in zip(*np.nonzero(mu0 < 0)):
            out.append(Violation("NegativeEntry", (int(s),), f"initial_dist = {mu0[s]!r}"))
        if abs(mu0.sum() - 1.0) > tol:
            out.append(Violation("NonStochasticRow", ("initial_dist",), f"sums to {mu0.sum()!r}"))
    if not (0.0 < gamma <= 1.0):
        out.append(Violation("BadDiscount", detail=f"discount = {gamma!r} not in (0, 1]"))
    return out


def _frozen(x):
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a]
    initial_dist: np.ndarray  # [s]
    discount: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "discount", float(self.discount))
        violations = validate_mdp(self)
        if violations:
            raise MdpValidationError(violations)

    @classmethod
    def from_arrays(cls, transition, reward, initial_dist, discount, normalize=False):
        """Build an MDP; with ``normalize=True`` rows and ``initial_dist`` are rescaled to sum to one."""
        if normalize:
            transition = np.asarray(transition, dtype=float)
            transition = transition / transition.sum(axis=2, keepdims=True)
            initial_dist = np.asarray(initial_dist, dtype=float)
            initial_dist = initial_dist / initial_dist.sum()
        return cls(transition, reward, initial_dist, discount)

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_pairs(self):
        return self.n_states * self.n_actions

    @property
    def flat_transition(self):
        """Transition as an (n_pairs, n_states) matrix."""
        return self.transition.reshape(self.n_pairs, self.n_states)

    @property
    def flat_reward(self):
        return self.reward.reshape(-1)

    def with_discount(self, discount):
        return TabularMdp(self.transition, self.reward, self.initial_dist, discount)

    def with_reward(self, reward):
        return TabularMdp(self.transition, np.broadcast_to(reward, self.reward.shape), self.initial_dist, self.discount)

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "discount": self.discount,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        violations = validate_mdp(data)
        if violations:
            raise MdpValidationError(violations)
        return cls(data["transition"], data["reward"], data["initial_dist"], data["discount"])

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def mdp_id(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray  # [s, a]

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise PolicyValidationError(f"policy table must be [s][a], got shape {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise PolicyValidationError("policy has negative or non-finite entries")
        bad = np.nonzero(np.abs(p.sum(axis=1) - 1.0) > STOCHASTIC_TOL)[0]
        if bad.size:
            raise PolicyValidationError(f"policy rows {bad.tolist()} do not sum to 1")
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self):
        return self.probs.shape[0]

    @property
    def n_actions(self):
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def from_logits(cls, logits):
        return cls(softmax(np.asarray(logits, dtype=float), axis=1))

    @classmethod
    def random(cls, n_states, n_actions, seed):
        rng = np.random.default_rng(seed)
        return cls(rng.dirichlet(np.ones(n_actions), size=n_states))

    def logits(self, floor=1e-300):
        return np.log(np.maximum(self.probs, floor))

    def check_matches(self, mdp):
        if self.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ShapeMismatch(f"policy shape {self.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")


class OperatorKind(enum.Enum):
    POLICY_FORWARD = "PolicyForward"
    POLICY_ADJOINT = "PolicyAdjoint"
    TRANSITION_FORWARD = "TransitionForward"
    TRANSITION_ADJOINT = "TransitionAdjoint"


def _probs(policy):
    return policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)


def policy_transition_matrix(mdp, policy):
    """Dense (n_pairs, n_pairs) matrix of P^pi: row (s,a), column (s',a')."""
    pi = _probs(policy)
    return (mdp.flat_transition[:, :, None] * pi[None, :, :]).reshape(mdp.n_pairs, mdp.n_pairs)


def initial_pairs(mdp, policy):
    """mu0(s) * pi(a|s) as a flat state-action vector."""
    return (mdp.initial_dist[:, None] * _probs(policy)).reshape(-1)


def state_marginal(mdp, d):
    return np.asarray(d).reshape(mdp.n_states, mdp.n_actions).sum(axis=1)


def apply_operator(kind, mdp, x, policy=None):
    """Apply one of P^pi, its adjoint, T or its adjoint to ``x``.

    PolicyForward: Q -> E_{s'~T(s,a), a'~pi(s')}[Q(s',a')]
    PolicyAdjoint: d -> pi(a|s) * sum_{s~,a~} T(s|s~,a~) d(s~,a~)
    TransitionForward: V (state vector) -> E_{s'~T(s,a)}[V(s')] (state-action vector)
    TransitionAdjoint: d (state-action vector) -> sum_{s~,a~} T(s|s~,a~) d(s~,a~) (state vector)
    """
    kind = OperatorKind(kind)
    x = np.asarray(x, dtype=float)
    S, A, n = mdp.n_states, mdp.n_actions, mdp.n_pairs
    P = mdp.flat_transition
    if kind in (OperatorKind.POLICY_FORWARD, OperatorKind.POLICY_ADJOINT):
        if policy is None:
            raise MissingPolicy(f"{kind.value} requires a policy")
        pi = _probs(policy)
        if pi.shape != (S, A):
            raise ShapeMismatch(f"policy shape {pi.shape} does not match MDP ({S}, {A})")
        if x.shape != (n,):
            raise ShapeMismatch(f"{kind.value} expects a state-action vector of length {n}, got {x.shape}")
        if kind is OperatorKind.POLICY_FORWARD:
            return P @ (pi * x.reshape(S, A)).sum(axis=1)
        return (pi * (P.T @ x)[:, None]).reshape(-1)
    if kind is OperatorKind.TRANSITION_FORWARD:
        if x.shape != (S,):
            raise ShapeMismatch(f"TransitionForward expects a state vector of length {S}, got {x.shape}")
        return P @ x
    if x.shape != (n,):
        raise ShapeMismatch(f"TransitionAdjoint expects a state-action vector of length {n}, got {x.shape}")
    return P.T @ x


# -- instance generators ------------------------------------------------------


def random_mdp(n_states, n_actions, discount, seed):
    """Flat-Dirichlet transitions and initial distribution, uniform [0, 1] rewards."""
    rng = np.random.default_rng(seed)
    T = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    mu0 = rng.dirichlet(np.ones(n_states))
    # Dirichlet draws can miss 1 by a few ulps; renormalizing keeps the 1e-12 check honest.
    T = T / T.sum(axis=2, keepdims=True)
    return TabularMdp(T, R, mu0 / mu0.sum(), discount)


def single_state(reward=1.0, discount=0.5):
    return TabularMdp([[[1.0]]], [[reward]], [1.0], discount)


def swap_chain(reward=(1.0, 0.0), discount=0.5):
    """Two states, one action, deterministic s0 -> s1 -> s0; starts in s0."""
    T = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    return TabularMdp(T, np.asarray(reward, dtype=float).reshape(2, 1), [1.0, 0.0], discount)


def lazy_chain(discount=1.0, reward=(1.0, 0.0)):
    """Two states, one action, stay or switch with probability 1/2 each."""
    T = np.full((2, 1, 2), 0.5)
    return TabularMdp(T, np.asarray(reward, dtype=float).reshape(2, 1), [0.5, 0.5], discount)


def two_action_swap(discount=0.5, reward=((0.0, 0.0), (0.0, 0.0))):
    """Two states, action 0 switches state and action 1 stays; starts in s0."""
    T = np.zeros((2, 2, 2))
    T[0, 0, 1] = T[1, 0, 0] = 1.0
    T[0, 1, 0] = T[1, 1, 1] = 1.0
    return TabularMdp(T, reward, [1.0, 0.0], discount)


def bandit(reward=(1.0, 0.0), discount=0.5):
    """One state, len(reward) actions, all self-loops."""
    r = np.asarray(reward, dtype=float)
    return TabularMdp(np.ones((1, r.size, 1)), r[None, :], [1.0], discount)


FIXTURES = {
    "single-state": single_state,
    "swap-chain": swap_chain,
    "lazy-chain": lazy_chain,
    "two-action-swap": two_action_swap,
    "bandit": bandit,
}
