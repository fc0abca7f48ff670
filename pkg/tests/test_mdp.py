import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dualrl.errors import MdpValidationError, MissingPolicy, PolicyValidationError, ShapeMismatch
from dualrl.mdp import (FIXTURES, OperatorKind, Policy, TabularMdp, apply_operator, policy_transition_matrix,
                        random_mdp, single_state, swap_chain, validate_mdp)

seeds = st.integers(0, 10_000)
sizes = st.integers(1, 20)
acts = st.integers(1, 4)


def test_single_state_is_valid():
    assert validate_mdp(single_state()) == []


def test_non_stochastic_row_reported():
    data = single_state().to_dict()
    data["transition"] = [[[0.9]]]
    kinds = [v.kind for v in validate_mdp(data)]
    assert kinds == ["NonStochasticRow"]
    with pytest.raises(MdpValidationError) as exc:
        TabularMdp.from_dict(data)
    assert "NonStochasticRow" in exc.value.kinds


def test_bad_discount_reported():
    data = single_state().to_dict()
    data["discount"] = 1.2
    assert [v.kind for v in validate_mdp(data)] == ["BadDiscount"]
    data["discount"] = 0.0
    assert [v.kind for v in validate_mdp(data)] == ["BadDiscount"]


def test_negative_entry_reported():
    mdp = random_mdp(2, 2, 0.9, 0).to_dict()
    mdp["transition"][0][0] = [1.5, -0.5]
    assert "NegativeEntry" in [v.kind for v in validate_mdp(mdp)]


def test_every_violation_listed():
    data = random_mdp(3, 2, 0.9, 0).to_dict()
    data["transition"][0][1] = [0.3, 0.3, 0.3]
    data["transition"][2][0] = [0.2, 0.2, 0.2]
    bad = [v for v in validate_mdp(data) if v.kind == "NonStochasticRow"]
    assert sorted(v.where for v in bad) == [(0, 1), (2, 0)]


def test_no_silent_normalization():
    T = np.array([[[0.5, 0.49]], [[0.0, 1.0]]])
    with pytest.raises(MdpValidationError):
        TabularMdp.from_arrays(T, np.zeros((2, 1)), [1.0, 0.0], 0.9)
    mdp = TabularMdp.from_arrays(T, np.zeros((2, 1)), [1.0, 0.0], 0.9, normalize=True)
    assert np.allclose(mdp.transition.sum(-1), 1.0, atol=1e-12)


def test_policy_forward_self_loop():
    out = apply_operator(OperatorKind.POLICY_FORWARD, single_state(), np.array([2.0]), Policy.uniform(1, 1))
    assert out.tolist() == [2.0]


def test_policy_forward_swap_chain():
    out = apply_operator(OperatorKind.POLICY_FORWARD, swap_chain(), np.array([1.0, 5.0]), Policy.uniform(2, 1))
    assert out.tolist() == [5.0, 1.0]


def test_policy_adjoint_point_mass_moves_to_next_state():
    mdp = FIXTURES["two-action-swap"]()
    pi = Policy(np.array([[0.5, 0.5], [0.25, 0.75]]))
    d = np.zeros(4)
    d[0] = 1.0  # (s0, a0): action 0 switches to s1
    out = apply_operator(OperatorKind.POLICY_ADJOINT, mdp, d, pi)
    assert np.allclose(out, [0.0, 0.0, 0.25, 0.75])


def test_operator_errors():
    mdp = swap_chain()
    with pytest.raises(MissingPolicy):
        apply_operator(OperatorKind.POLICY_FORWARD, mdp, np.zeros(2))
    with pytest.raises(ShapeMismatch):
        apply_operator(OperatorKind.TRANSITION_FORWARD, mdp, np.zeros(3))
    with pytest.raises(ShapeMismatch):
        apply_operator(OperatorKind.POLICY_ADJOINT, mdp, np.zeros(5), Policy.uniform(2, 1))


def test_transition_forward_and_adjoint_shapes():
    mdp = random_mdp(3, 2, 0.9, 1)
    v = np.arange(3.0)
    assert apply_operator(OperatorKind.TRANSITION_FORWARD, mdp, v).shape == (6,)
    assert apply_operator(OperatorKind.TRANSITION_ADJOINT, mdp, np.ones(6)).shape == (3,)


def test_policy_validation():
    with pytest.raises(PolicyValidationError):
        Policy([[0.5, 0.6]])
    with pytest.raises(PolicyValidationError):
        Policy([[1.5, -0.5]])


@given(seeds, sizes, acts)
def test_random_mdp_is_valid(seed, S, A):
    mdp = random_mdp(S, A, 0.9, seed)
    assert validate_mdp(mdp) == []
    assert np.all(mdp.transition > 0)


@given(seeds, sizes, acts)
def test_adjointness(seed, S, A):
    mdp = random_mdp(S, A, 0.9, seed)
    pi = Policy.random(S, A, seed + 1)
    rng = np.random.default_rng(seed)
    q, d, v = rng.normal(size=S * A), rng.normal(size=S * A), rng.normal(size=S)
    fwd = apply_operator(OperatorKind.POLICY_FORWARD, mdp, q, pi)
    adj = apply_operator(OperatorKind.POLICY_ADJOINT, mdp, d, pi)
    assert abs(d @ fwd - adj @ q) < 1e-10
    tf = apply_operator(OperatorKind.TRANSITION_FORWARD, mdp, v)
    ta = apply_operator(OperatorKind.TRANSITION_ADJOINT, mdp, d)
    assert abs(d @ tf - ta @ v) < 1e-10


@given(seeds, sizes, acts)
def test_policy_adjoint_preserves_mass(seed, S, A):
    mdp = random_mdp(S, A, 0.9, seed)
    d = np.random.default_rng(seed).uniform(size=S * A)
    out = apply_operator(OperatorKind.POLICY_ADJOINT, mdp, d, Policy.random(S, A, seed))
    assert abs(out.sum() - d.sum()) < 1e-12


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_operators_are_linear(seed, a, b):
    mdp = random_mdp(3, 2, 0.9, seed)
    pi = Policy.random(3, 2, seed)
    rng = np.random.default_rng(seed)
    for kind, n in [(OperatorKind.POLICY_FORWARD, 6), (OperatorKind.POLICY_ADJOINT, 6),
                    (OperatorKind.TRANSITION_FORWARD, 3), (OperatorKind.TRANSITION_ADJOINT, 6)]:
        x, y = rng.normal(size=n), rng.normal(size=n)
        lhs = apply_operator(kind, mdp, a * x + b * y, pi)
        rhs = a * apply_operator(kind, mdp, x, pi) + b * apply_operator(kind, mdp, y, pi)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_policy_transition_matrix_rows_stochastic():
    P = policy_transition_matrix(random_mdp(4, 3, 0.9, 2), Policy.random(4, 3, 2))
    assert np.allclose(P.sum(1), 1.0, atol=1e-12)


def test_json_round_trip(tmp_path):
    mdp = random_mdp(4, 2, 0.9, 0)
    path = tmp_path / "m.json"
    mdp.save(path)
    back = TabularMdp.load(path)
    assert np.array_equal(back.transition, mdp.transition)
    assert np.array_equal(back.reward, mdp.reward)
    assert np.array_equal(back.initial_dist, mdp.initial_dist)
    assert back.discount == mdp.discount and back.mdp_id() == mdp.mdp_id()
    assert set(json.loads(path.read_text())) == {"n_states", "n_actions", "discount", "transition", "reward",
                                                 "initial_dist"}


def test_random_mdp_seeded():
    assert random_mdp(3, 2, 0.9, 7).to_json() == random_mdp(3, 2, 0.9, 7).to_json()
    assert random_mdp(3, 2, 0.9, 7).to_json() != random_mdp(3, 2, 0.9, 8).to_json()


def test_arrays_are_read_only():
    mdp = random_mdp(2, 2, 0.9, 0)
    with pytest.raises(ValueError):
        mdp.reward[0, 0] = 5.0
