"""Exact reference quantities computed by dense linear algebra or brute-force convex search."""

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import softmax

from dualrl.convex import KL, f_divergence, make_generator
from dualrl.errors import (
    BudgetExceeded,
    IdentityMismatch,
    Nonconvergence,
    NotErgodic,
    SingularSystem,
    UndiscountedUnsupported,
)
from dualrl.mdp import Policy, initial_pairs, policy_transition_matrix, state_marginal

IDENTITY_TOL = 1e-9


def _require_discounted(mdp, what):
    if mdp.discount >= 1.0:
        raise UndiscountedUnsupported(f"{what} needs discount < 1, got {mdp.discount}")


def _solve(M, b):
    lu, piv = lu_factor(M, check_finite=True)
    if np.any(np.abs(np.diag(lu)) < 1e-14 * max(1.0, np.abs(M).max())):
        raise SingularSystem("linear system is singular")
    return lu_solve((lu, piv), b)


def _probs(policy):
    return policy.probs if isinstance(policy, Policy) else np.asarray(policy, dtype=float)


def exact_q_values(mdp, policy):
    """Solve (I - gamma P^pi) Q = R."""
    _require_discounted(mdp, "exact_q_values")
    P = policy_transition_matrix(mdp, policy)
    return _solve(np.eye(mdp.n_pairs) - mdp.discount * P, mdp.flat_reward)


def exact_visitation(mdp, policy):
    """Solve d = (1 - gamma) mu0 pi + gamma P^pi* d."""
    _require_discounted(mdp, "exact_visitation")
    g = mdp.discount
    P = policy_transition_matrix(mdp, policy)
    d = _solve(np.eye(mdp.n_pairs) - g * P.T, (1.0 - g) * initial_pairs(mdp, policy))
    # Roundoff can leave entries like -1e-18 on unreachable pairs.
    return np.maximum(d, 0.0)


def exact_value(mdp, policy, q=None, d=None):
    """Normalized discounted return, checked through both value expressions."""
    _require_discounted(mdp, "exact_value")
    q = exact_q_values(mdp, policy) if q is None else q
    d = exact_visitation(mdp, policy) if d is None else d
    via_q = (1.0 - mdp.discount) * initial_pairs(mdp, policy) @ q
    via_d = d @ mdp.flat_reward
    if abs(via_q - via_d) > IDENTITY_TOL * max(1.0, abs(via_d)):
        raise IdentityMismatch(f"value via Q = {via_q!r} but via d = {via_d!r}")
    return float(via_d)


def exact_policy_gradient(mdp, logits):
    """d rho / d logits for pi = softmax(logits) per state.

    The gradient wrt pi(a|s) is d(s,a) Q(s,a) / pi(a|s), which the softmax Jacobian turns
    into d(s,b) Q(s,b) - pi(b|s) sum_a d(s,a) Q(s,a).
    """
    _require_discounted(mdp, "exact_policy_gradient")
    logits = np.asarray(logits, dtype=float)
    pi = softmax(logits, axis=1)
    q = exact_q_values(mdp, pi).reshape(pi.shape)
    dq = exact_visitation(mdp, pi).reshape(pi.shape) * q
    return dq - pi * dq.sum(axis=1, keepdims=True)


def exact_stationary(mdp, policy, max_iters=10000, tol=1e-10):
    """Stationary state-action distribution of the chain induced by ``policy`` (discount ignored).

    The chain must have a unique stationary distribution and no other eigenvalue on the unit
    circle; otherwise NotErgodic. The eigenvalue test catches periodic chains whose uniform
    start happens to be stationary.
    """
    P = policy_transition_matrix(mdp, policy)
    n = mdp.n_pairs
    eig = np.sort(np.abs(np.linalg.eigvals(P)))[::-1]
    if n > 1 and eig[1] > 1.0 - 1e-9:
        raise NotErgodic(f"second eigenvalue modulus {eig[1]:.12g}; chain is periodic or reducible")
    d = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        d_next = P.T @ d
        step = np.abs(d_next - d).max()
        d = d_next
        if step <= tol:
            break
    else:
        raise NotErgodic(f"power iteration did not settle within {max_iters} iterations")
    d = np.maximum(d, 0.0)
    return d / d.sum()


# -- regularized optimum --------------------------------------------------------


def flow_constraints(mdp, undiscounted=False):
    """(A, b) with A d = b encoding the state-marginal flow equations.

    Discounted: sum_a d(s,a) - gamma T* d (s) = (1 - gamma) mu0(s).
    Undiscounted: sum_a d(s,a) - T* d (s) = 0 plus sum d = 1.
    """
    S, A = mdp.n_states, mdp.n_actions
    marg = np.kron(np.eye(S), np.ones((1, A)))
    if undiscounted:
        M = np.vstack([marg - mdp.flat_transition.T, np.ones((1, mdp.n_pairs))])
        return M, np.concatenate([np.zeros(S), [1.0]])
    g = mdp.discount
    return marg - g * mdp.flat_transition.T, (1.0 - g) * mdp.initial_dist


def regularized_objective(mdp, d, weights, gen):
    """sum d R - D_f(d || weights)."""
    return float(d @ mdp.flat_reward - f_divergence(gen, d, weights))


def exact_regularized_optimum(mdp, dataset, generator, mode="discounted-vlp", tol=1e-8, max_iters=200000):
    """max_d sum d R - D_f(d || d^D) over feasible visitations (discounted) or stationary
    distributions (undiscounted).

    KL keeps the maximizer strictly positive, so it is solved by Newton steps on the affine
    constraint set. Other generators use projected gradient ascent where the projection onto
    {A d = b, d >= 0} alternates affine projection and clamping (Dykstra).
    Returns (d, value).
    """
    gen = make_generator(generator)
    w = np.asarray(getattr(dataset, "weights", dataset), dtype=float)
    n = mdp.n_pairs
    if n > 64:
        raise BudgetExceeded(f"brute-force optimum limited to 64 state-action pairs, got {n}")
    if mode not in ("discounted-vlp", "undiscounted"):
        raise ValueError(f"unknown mode {mode!r}")
    undiscounted = mode == "undiscounted"
    if not undiscounted:
        _require_discounted(mdp, "discounted-vlp mode")
    Acon, b = flow_constraints(mdp, undiscounted)
    Apinv = np.linalg.pinv(Acon)
    support = w > 0
    R = mdp.flat_reward

    def project_affine(x):
        return x - Apinv @ (Acon @ x - b)

    def grad(d):
        out = R.copy()
        out[support] -= gen.derivative(d[support] / w[support])
        return out

    # Start from the uniform policy's visitation, which is feasible and positive where reachable.
    uniform = Policy.uniform(mdp.n_states, mdp.n_actions)
    if undiscounted:
        d = exact_stationary(mdp, uniform)
    else:
        d = exact_visitation(mdp, uniform)

    if isinstance(gen, KL) or getattr(gen, "base", None).__class__ is KL:
        d = _newton_kl(d, w, gen, R, Acon, b, tol, max_iters)
    else:
        d = _projected_ascent(d, w, gen, grad, Acon, b, project_affine, tol, max_iters)
    return d, regularized_objective(mdp, d, w, gen)


def _newton_kl(d, w, gen, R, Acon, b, tol, max_iters):
    # Mass outside the data support has infinite divergence, so those coordinates are fixed at 0.
    keep = w > 0
    if np.any(d[~keep] > 0):
        d = d.copy()
        d[~keep] = 0.0
    A = Acon[:, keep]
    x = d[keep]
    ww = w[keep]
    Rk = R[keep]
    if np.linalg.norm(A @ x - b) > 1e-9 or np.any(x <= 0):
        # The uniform-policy start is infeasible or on the boundary of the support; find an interior point.
        x = _interior_point(A, b, ww)
    m = A.shape[0]
    obj = lambda v: Rk @ v - np.sum(gen.eval(v / ww) * ww)
    for it in range(max_iters):
        g = Rk - gen.derivative(x / ww)
        h = gen.second_derivative(x / ww) / ww
        K = np.block([[np.diag(h), A.T], [A, np.zeros((m, m))]])
        rhs = np.concatenate([g, b - A @ x])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        dx = sol[: x.size]
        decrement = dx @ (h * dx)
        if decrement < tol * tol:
            break
        t = 1.0
        while np.any(x + t * dx <= 0) or obj(x + t * dx) < obj(x) - 1e-15:
            t *= 0.5
            if t < 1e-16:
                raise Nonconvergence("Newton line search stalled")
        x = x + t * dx
    else:
        raise Nonconvergence(f"Newton did not converge in {max_iters} steps")
    out = np.zeros_like(d)
    out[keep] = x
    return out


def _interior_point(A, b, w):
    # Minimize KL(x || w) on {A x = b}: a strictly positive feasible point if one exists.
    m = A.shape[0]
    x = w.copy()
    for _ in range(200):
        g = np.log(x / w) + 1.0
        h = 1.0 / x
        K = np.block([[np.diag(h), A.T], [A, np.zeros((m, m))]])
        dx = np.linalg.lstsq(K, np.concatenate([-g, b - A @ x]), rcond=None)[0][: x.size]
        t = 1.0
        while np.any(x + t * dx <= 0):
            t *= 0.5
        x = x + t * dx
        if np.linalg.norm(A @ x - b) < 1e-12 and np.abs(dx).max() < 1e-12:
            return x
    if np.linalg.norm(A @ x - b) > 1e-9:
        raise Nonconvergence("no strictly positive feasible point on the data support")
    return x


def _project_feasible(x, Acon, b, project_affine, rounds=50, tol=1e-12):
    # Dykstra's alternating projection onto {A d = b} intersected with {d >= 0}.
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    y = x
    for _ in range(rounds):
        z = project_affine(y + p)
        p = y + p - z
        y_new = np.maximum(z + q, 0.0)
        q = z + q - y_new
        done = np.abs(y_new - y).max() < tol and np.linalg.norm(Acon @ y_new - b) < tol
        y = y_new
        if done:
            break
    return y


def _projected_ascent(d, w, gen, grad, Acon, b, project_affine, tol, max_iters):
    support = w > 0
    # Data-free coordinates carry an infinite penalty unless they stay at zero.
    fixed_zero = ~support
    curv = gen.second_derivative(np.ones(1))[0] / w[support].min()
    step = 1.0 / max(curv, 1e-12)

    def project(x):
        x = x.copy()
        x[fixed_zero] = 0.0
        y = _project_feasible(x, Acon, b, project_affine)
        y[fixed_zero] = 0.0
        return y

    d = project(d)
    for it in range(max_iters):
        d_new = project(d + step * grad(d))
        gap = np.abs(d_new - d).max() / step
        d = d_new
        if gap < tol:
            break
    else:
        raise Nonconvergence(f"projected ascent did not converge in {max_iters} iterations (gap {gap:.3g})")
    if np.linalg.norm(Acon @ d - b) > 1e-8:
        raise Nonconvergence("projected ascent ended infeasible")
    return d
