import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualrl.errors import NonFiniteObjective
from dualrl.evaluation import dualdice_dual, lagrangian_ope
from dualrl.dataset import from_behavior
from dualrl.mdp import Policy, single_state
from dualrl.solver import SolveReport, SolverConfig, solve_min, solve_saddle


def test_scalar_quadratic():
    x, rep = solve_min(lambda x: (float((x[0] - 3) ** 2), 2 * (x - 3)), np.zeros(1),
                       SolverConfig(step_size_min=0.25, grad_tol=1e-9))
    assert rep.converged and abs(x[0] - 3) < 1e-6


def test_dualdice_single_state():
    mdp = single_state()
    res = dualdice_dual(mdp, Policy.uniform(1, 1), from_behavior(mdp, Policy.uniform(1, 1)), "square")
    assert res.q_table[0] == pytest.approx(-2.0, abs=1e-6)


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.integers(1, 6))
def test_convex_quadratic_matches_linear_solve(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.5 * np.eye(n)
    b = rng.normal(size=n)
    L = np.linalg.eigvalsh(H).max()
    cfg = SolverConfig(step_size_min=1.0 / L, grad_tol=1e-9)
    x, rep = solve_min(lambda x: (0.5 * x @ H @ x - b @ x, H @ x - b), np.zeros(n), cfg)
    assert rep.converged and rep.final_grad_norm < cfg.grad_tol
    assert np.max(np.abs(x - np.linalg.solve(H, b))) < 1e-6


def test_projection_in_solve_min():
    x, rep = solve_min(lambda x: (float((x[0] + 1) ** 2), 2 * (x + 1)), np.ones(1),
                       SolverConfig(step_size_min=0.25), project=lambda v: np.maximum(v, 0.0))
    assert rep.converged and x[0] == 0.0


def test_strongly_convex_concave_saddle():
    f = lambda x, y: (float(0.5 * x @ x + x @ y - 0.5 * y @ y), x + y, x - y)
    # Last extragradient iterate converges linearly; the uniform average only at rate 1/t.
    x, y, rep = solve_saddle(f, (np.ones(1), np.ones(1)), SolverConfig(grad_tol=1e-8, averaging=False))
    assert rep.converged and abs(x[0]) < 1e-5 and abs(y[0]) < 1e-5
    x, y, rep = solve_saddle(f, (np.ones(1), np.ones(1)), SolverConfig(grad_tol=1e-4, averaging=True))
    assert rep.converged and abs(x[0]) < 1e-3 and abs(y[0]) < 1e-3


def test_bilinear_with_averaging():
    f = lambda x, y: (float(x @ y), y.copy(), x.copy())
    cfg = SolverConfig(averaging=True, grad_tol=1e-3, max_iters=50_000)
    x, y, rep = solve_saddle(f, (np.ones(1), np.ones(1)), cfg)
    assert rep.converged and abs(x[0]) < 1e-3 and abs(y[0]) < 1e-3


def test_plain_gda_diverges_on_bilinear():
    # The reason extragradient is the default update.
    f = lambda x, y: (float(x @ y), y.copy(), x.copy())
    cfg = SolverConfig(update="gda", averaging=False, max_iters=2000)
    x, y, rep = solve_saddle(f, (np.ones(1), np.ones(1)), cfg)
    assert not rep.converged and np.hypot(x[0], y[0]) > 10


def test_lagrangian_single_state():
    mdp = single_state()
    res = lagrangian_ope(mdp, Policy.uniform(1, 1), from_behavior(mdp, Policy.uniform(1, 1)), "reward")
    assert res.value_estimate == pytest.approx(1.0, abs=1e-4)


def test_deterministic_trajectory():
    f = lambda x, y: (float(0.5 * x @ x + x @ y), x + y, x.copy())
    cfg = SolverConfig(max_iters=500, log_every=10, grad_tol=0.0)
    a = solve_saddle(f, (np.ones(3), np.ones(3)), cfg)
    b = solve_saddle(f, (np.ones(3), np.ones(3)), cfg)
    assert a[2].trajectory == b[2].trajectory and np.array_equal(a[0], b[0])


def test_report_when_not_converged():
    _, rep = solve_min(lambda x: (float(x @ x), 2 * x), np.ones(2), SolverConfig(max_iters=3))
    assert not rep.converged and rep.iters_used == 3 and rep.final_grad_norm > 0
    assert SolveReport(**{k: v for k, v in rep.to_dict().items()}).to_dict() == rep.to_dict()


def test_non_finite_objective():
    with pytest.raises(NonFiniteObjective):
        solve_min(lambda x: (float("nan"), x), np.ones(1))
    with pytest.raises(NonFiniteObjective):
        solve_saddle(lambda x, y: (0.0, np.full(1, np.inf), y), (np.ones(1), np.ones(1)))


def test_config_validation_and_round_trip():
    for bad in ({"step_size_min": 0}, {"step_size_max": -1}, {"max_iters": 0}, {"step_decay": "cosine"},
                {"update": "newton"}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    cfg = SolverConfig(step_size_min=0.3, step_decay="inverse-sqrt", seed=4)
    assert SolverConfig.from_dict(cfg.to_dict()) == cfg


def test_inverse_sqrt_decay_converges():
    cfg = SolverConfig(step_size_min=0.4, step_decay="inverse-sqrt", grad_tol=1e-8)
    x, rep = solve_min(lambda x: (float(x @ x), 2 * x), np.ones(2), cfg)
    assert rep.converged and np.max(np.abs(x)) < 1e-8
