"""Offline state-action distributions d^D, exact or sampled."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dualrl.errors import DualRLError, ShapeMismatch
from dualrl.mdp import Policy

EXACT = "exact"
SAMPLED = "sampled"
WEIGHT_TOL = 1e-10


def normalize_rows(d, n_actions):
    """Per-state normalization of a state-action vector into a policy table.

    Returns (table, empty) where states with no mass get the uniform row and are listed in
    ``empty``. Rows are renormalized a second time so they meet the policy tolerance exactly.
    """
    d = np.asarray(d, dtype=float).reshape(-1, n_actions)
    z = d.sum(axis=1, keepdims=True)
    pi = np.where(z > 0, d / np.where(z > 0, z, 1.0), 1.0 / n_actions)
    pi = pi / pi.sum(axis=1, keepdims=True)
    return pi, np.nonzero(z[:, 0] <= 0)[0].tolist()


@dataclass(frozen=True, eq=False)
class Rows:
    """Expectation rows over d^D.

    Row i is a state-action pair ``pair[i]`` with probability ``weight[i]`` and a next-state
    distribution ``next_dist[i]``. Exact datasets have one row per pair with the true
    transition row; sampled datasets have one row per distinct (s, a, s') with a one-hot
    next state, which reproduces the single-sample estimate of E_{s'}.
    """

    pair: np.ndarray
    weight: np.ndarray
    next_dist: np.ndarray

    def select(self, x):
        """Pick the per-row entries of a state-action vector."""
        return np.asarray(x)[self.pair]

    def scatter(self, row_values, n_pairs):
        """Sum per-row values back onto state-action pairs."""
        return np.bincount(self.pair, weights=row_values, minlength=n_pairs)


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    mode: str
    weights: np.ndarray
    behavior: Policy = None
    samples: np.ndarray = None  # (N, 4) rows of s, a, r, s'
    mdp_id: str = ""
    seed: int = None
    n_actions: int = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1:
            raise ShapeMismatch(f"weights must be a flat vector, got shape {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DualRLError(f"dataset weights must be a distribution (sum {w.sum()!r}, min {w.min()!r})")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.n_actions is None and self.behavior is not None:
            object.__setattr__(self, "n_actions", self.behavior.n_actions)
        if self.n_actions is not None and w.size % self.n_actions:
            raise ShapeMismatch(f"{w.size} weights cannot be split into rows of {self.n_actions} actions")
        if self.mode not in (EXACT, SAMPLED):
            raise ValueError(f"unknown dataset mode {self.mode!r}")
        if self.mode == SAMPLED:
            if self.samples is None or len(self.samples) == 0:
                raise ValueError("sampled dataset needs samples")
            smp = np.array(self.samples, dtype=float)
            smp.setflags(write=False)
            object.__setattr__(self, "samples", smp)

    def rows(self, mdp):
        self.check_matches(mdp)
        if self.mode == EXACT:
            return Rows(np.arange(mdp.n_pairs), self.weights, mdp.flat_transition)
        s = self.samples[:, 0].astype(int)
        a = self.samples[:, 1].astype(int)
        s2 = self.samples[:, 3].astype(int)
        keys, counts = np.unique(np.stack([s * mdp.n_actions + a, s2], axis=1), axis=0, return_counts=True)
        nxt = np.zeros((keys.shape[0], mdp.n_states))
        nxt[np.arange(keys.shape[0]), keys[:, 1]] = 1.0
        return Rows(keys[:, 0], counts / counts.sum(), nxt)

    @property
    def n_states(self):
        return None if self.n_actions is None else self.weights.size // self.n_actions

    def check_matches(self, mdp):
        if self.weights.shape != (mdp.n_pairs,) or self.n_actions not in (None, mdp.n_actions):
            raise ShapeMismatch(f"dataset has {self.weights.size} weights, MDP has {mdp.n_pairs} pairs")

    def conditional(self):
        """d^D(a|s); states without data are uniform."""
        return normalize_rows(self.weights, self.n_actions)[0]

    def clamped(self, epsilon):
        """Copy with every weight raised to at least ``epsilon`` and renormalized."""
        w = np.maximum(self.weights, epsilon)
        return OfflineDataset(EXACT, w / w.sum(), self.behavior, None, self.mdp_id, self.seed, self.n_actions)

    def to_dict(self):
        return {
            "mode": self.mode,
            "weights": self.weights.tolist(),
            "behavior": None if self.behavior is None else self.behavior.probs.tolist(),
            "samples": [] if self.samples is None else [[int(s), int(a), float(r), int(s2)] for s, a, r, s2 in self.samples],
            "mdp_id": self.mdp_id,
            "seed": self.seed,
            "n_actions": self.n_actions,
        }

    @classmethod
    def from_dict(cls, data):
        behavior = data.get("behavior")
        samples = data.get("samples") or None
        return cls(
            data["mode"],
            data["weights"],
            None if behavior is None else Policy(behavior),
            None if samples is None else np.array(samples, dtype=float),
            data.get("mdp_id", ""),
            data.get("seed"),
            data.get("n_actions"),
        )

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def on_policy_distribution(mdp, policy):
    """Discounted visitation for discount < 1, stationary distribution for discount = 1."""
    from dualrl import oracles

    if mdp.discount < 1.0:
        return oracles.exact_visitation(mdp, policy)
    return oracles.exact_stationary(mdp, policy)


def from_behavior(mdp, behavior, mode=EXACT, n_samples=None, seed=0):
    behavior.check_matches(mdp)
    exact = on_policy_distribution(mdp, behavior)
    exact = exact / exact.sum()
    if mode == EXACT:
        return OfflineDataset(EXACT, exact, behavior, None, mdp.mdp_id(), seed, mdp.n_actions)
    if mode != SAMPLED:
        raise ValueError(f"unknown dataset mode {mode!r}")
    if n_samples is None or n_samples < 1:
        raise ValueError("sampled mode needs n_samples >= 1")
    rng = np.random.default_rng(seed)
    pairs = rng.choice(mdp.n_pairs, size=int(n_samples), p=exact)
    s, a = np.divmod(pairs, mdp.n_actions)
    # Inverse-CDF draw of s' for each sample.
    cdf = np.cumsum(mdp.flat_transition[pairs], axis=1)
    s2 = np.minimum((rng.random(int(n_samples))[:, None] > cdf).sum(axis=1), mdp.n_states - 1)
    r = mdp.reward[s, a]
    samples = np.stack([s, a, r, s2], axis=1).astype(float)
    weights = np.bincount(pairs, minlength=mdp.n_pairs) / n_samples
    return OfflineDataset(SAMPLED, weights, behavior, samples, mdp.mdp_id(), seed, mdp.n_actions)


def from_weights(mdp, weights, behavior=None):
    """Exact-mode dataset from an explicit distribution over state-action pairs."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (mdp.n_pairs,):
        raise ShapeMismatch(f"expected {mdp.n_pairs} weights, got shape {w.shape}")
    return OfflineDataset(EXACT, w, behavior, None, mdp.mdp_id(), None, mdp.n_actions)


def coverage_check(dataset, mdp, target, epsilon=1e-8):
    """Pairs where the target visits (d^pi > epsilon) but the data does not (d^D < epsilon).

    Returns a list of (s, a, d_target, d_data); an empty list means covered.
    """
    d_pi = on_policy_distribution(mdp, target)
    w = dataset.weights
    bad = np.nonzero((d_pi > epsilon) & (w < epsilon))[0]
    return [(int(i // mdp.n_actions), int(i % mdp.n_actions), float(d_pi[i]), float(w[i])) for i in bad]


def full_support_violations(dataset, epsilon=1e-8):
    """Pairs with d^D below epsilon, for estimators that need full support."""
    return [int(i) for i in np.nonzero(dataset.weights < epsilon)[0]]
