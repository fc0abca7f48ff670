"""Convex generators, their conjugates, f-divergences and a small Fenchel duality checker."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, xlogy

from dualrl.errors import DomainError, Infeasible, Nonconvergence, SupportViolation, UnsupportedConstrainedGenerator


class ConvexGenerator:
    """A convex f on the real line together with f*, f*' and the first two derivatives of f.

    All methods are vectorized over numpy arrays.
    """

    name = "generator"
    # Interval on which f is finite; used by grid oracles and sampling tests.
    domain = (-np.inf, np.inf)

    def eval(self, x):
        raise NotImplementedError

    def derivative(self, x):
        raise NotImplementedError

    def second_derivative(self, x):
        raise NotImplementedError

    def conjugate(self, y):
        raise NotImplementedError

    def conjugate_derivative(self, y):
        raise NotImplementedError

    def conjugate_second_derivative(self, y):
        raise NotImplementedError

    def scaled(self, alpha):
        return self if alpha == 1 else Scaled(self, alpha)

    def __repr__(self):
        return self.name


class Square(ConvexGenerator):
    name = "square"

    def eval(self, x):
        return 0.5 * np.square(x)

    def derivative(self, x):
        return np.asarray(x, dtype=float)

    def second_derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def conjugate(self, y):
        return 0.5 * np.square(y)

    def conjugate_derivative(self, y):
        return np.asarray(y, dtype=float)

    def conjugate_second_derivative(self, y):
        return np.ones_like(np.asarray(y, dtype=float))


class ChiSquare(ConvexGenerator):
    # f(x) = 1/2 (x - 1)^2 = 1/2 x^2 - x + 1/2. For h(x) = <a,x> + b f0(x) + c the conjugate is
    # b f0*((y - a) / b) - c, so with f0 = 1/2 x^2, a = -1, b = 1, c = 1/2:
    # f*(y) = 1/2 (y + 1)^2 - 1/2 = y + 1/2 y^2.
    name = "chisquare"

    def eval(self, x):
        return 0.5 * np.square(np.asarray(x, dtype=float) - 1.0)

    def derivative(self, x):
        return np.asarray(x, dtype=float) - 1.0

    def second_derivative(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def conjugate(self, y):
        y = np.asarray(y, dtype=float)
        return y + 0.5 * y * y

    def conjugate_derivative(self, y):
        return 1.0 + np.asarray(y, dtype=float)

    def conjugate_second_derivative(self, y):
        return np.ones_like(np.asarray(y, dtype=float))


class KL(ConvexGenerator):
    """f(x) = x log x on x >= 0 (0 log 0 = 0).

    ``conjugate`` is the unconstrained conjugate exp(y - 1). Estimators that need the
    conjugate over normalized distributions use ``divergence_conjugate(..., constrained=True)``.
    """

    name = "kl"
    domain = (0.0, np.inf)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, xlogy(x, np.maximum(x, 0.0)), np.inf)

    def derivative(self, x):
        return np.log(x) + 1.0

    def second_derivative(self, x):
        return 1.0 / np.asarray(x, dtype=float)

    def conjugate(self, y):
        return np.exp(np.asarray(y, dtype=float) - 1.0)

    def conjugate_derivative(self, y):
        return np.exp(np.asarray(y, dtype=float) - 1.0)

    def conjugate_second_derivative(self, y):
        return np.exp(np.asarray(y, dtype=float) - 1.0)


class PNorm(ConvexGenerator):
    """f(x) = |x|^p / p with conjugate |y|^q / q, 1/p + 1/q = 1."""

    def __init__(self, p):
        p = float(p)
        if not p > 1.0 or not np.isfinite(p):
            raise DomainError(f"pnorm requires 1 < p < inf, got p={p}")
        self.p = p
        self.q = p / (p - 1.0)
        self.name = f"pnorm:{p:g}"

    def eval(self, x):
        return np.abs(x) ** self.p / self.p

    def derivative(self, x):
        return np.sign(x) * np.abs(x) ** (self.p - 1.0)

    def second_derivative(self, x):
        return (self.p - 1.0) * np.abs(x) ** (self.p - 2.0)

    def conjugate(self, y):
        return np.abs(y) ** self.q / self.q

    def conjugate_derivative(self, y):
        return np.sign(y) * np.abs(y) ** (self.q - 1.0)

    def conjugate_second_derivative(self, y):
        return (self.q - 1.0) * np.abs(y) ** (self.q - 2.0)


class Scaled(ConvexGenerator):
    """alpha * f, with (alpha f)*(y) = alpha f*(y / alpha)."""

    def __init__(self, base, alpha):
        alpha = float(alpha)
        if not alpha > 0:
            raise DomainError(f"scaling weight must be positive, got {alpha}")
        self.base = base
        self.alpha = alpha
        self.domain = base.domain
        self.name = f"{alpha:g}*{base.name}"

    def eval(self, x):
        return self.alpha * self.base.eval(x)

    def derivative(self, x):
        return self.alpha * self.base.derivative(x)

    def second_derivative(self, x):
        return self.alpha * self.base.second_derivative(x)

    def conjugate(self, y):
        return self.alpha * self.base.conjugate(np.asarray(y, dtype=float) / self.alpha)

    def conjugate_derivative(self, y):
        return self.base.conjugate_derivative(np.asarray(y, dtype=float) / self.alpha)

    def conjugate_second_derivative(self, y):
        return self.base.conjugate_second_derivative(np.asarray(y, dtype=float) / self.alpha) / self.alpha


def make_generator(spec):
    """Parse "square" | "chisquare" | "kl" | "pnorm:<p>" (or pass a generator through)."""
    if isinstance(spec, ConvexGenerator):
        return spec
    name, _, arg = str(spec).strip().lower().partition(":")
    if name == "square" and not arg:
        return Square()
    if name == "chisquare" and not arg:
        return ChiSquare()
    if name == "kl" and not arg:
        return KL()
    if name == "pnorm":
        try:
            p = float(arg)
        except ValueError:
            raise DomainError(f"bad pnorm exponent in {spec!r}") from None
        return PNorm(p)
    raise DomainError(f"unknown generator {spec!r}")


GENERATOR_NAMES = ("square", "chisquare", "kl", "pnorm:<p>")


def conjugate_eval(gen, y):
    return make_generator(gen).conjugate(y)


def conjugate_grid_oracle(gen, y, x_lo, x_hi, n_grid=10001):
    """Brute-force max over a uniform grid of x*y - f(x).

    Accuracy is roughly (x_hi - x_lo) / n_grid * |y - f'(x)| near the maximizer.
    """
    if n_grid < 1000:
        raise ValueError("n_grid must be at least 1000")
    gen = make_generator(gen)
    x = np.linspace(x_lo, x_hi, int(n_grid))
    y = np.asarray(y, dtype=float)
    vals = np.multiply.outer(y, x) - gen.eval(x)
    return vals.max(axis=-1)


def f_divergence(gen, d, p):
    """sum_z p(z) f(d(z) / p(z)); pairs with p = d = 0 contribute nothing."""
    gen = make_generator(gen)
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    zero = p <= 0
    if np.any(zero & (d != 0)):
        bad = np.nonzero(zero & (d != 0))[0].tolist()
        raise SupportViolation(f"d has mass where p is zero at indices {bad}")
    keep = ~zero
    return float(np.sum(p[keep] * gen.eval(d[keep] / p[keep])))


def divergence_conjugate(gen, y, p, constrained=False):
    """Conjugate of x -> D_f(x || p) at y.

    Unconstrained: E_p[f*(y)]. Constrained to distributions (KL only): log E_p[exp y].
    """
    gen = make_generator(gen)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if constrained:
        if not isinstance(gen, KL):
            raise UnsupportedConstrainedGenerator(f"constrained conjugate is only available for kl, not {gen.name}")
        return float(logsumexp(y, b=p))
    return float(p @ gen.conjugate(y))


def softmax_weights(h, p):
    """w = exp(h) / E_p[exp h], computed with max subtraction so that E_p[w] = 1."""
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    support = p > 0
    m = h[support].max() if support.any() else h.max()
    e = np.exp(h - m)
    return e / (p @ e)


# -- Fenchel-Rockafellar duality check ----------------------------------------


@dataclass
class FenchelProblem:
    """min_x sum_i f(x_i) + g(A x) with g an indicator.

    g is ("point", b) for the indicator of {b} or ("nonneg",) for the indicator of the
    nonnegative orthant. The nonnegative case needs a square invertible A.
    """

    f: ConvexGenerator
    g: tuple
    A: np.ndarray

    def __post_init__(self):
        self.f = make_generator(self.f)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        kind = self.g[0]
        if kind == "point":
            b = np.atleast_1d(np.asarray(self.g[1], dtype=float))
            if b.shape != (self.A.shape[0],):
                raise ValueError(f"b has shape {b.shape}, expected ({self.A.shape[0]},)")
            self.g = ("point", b)
        elif kind == "nonneg":
            if self.A.shape[0] != self.A.shape[1]:
                raise ValueError("nonnegativity constraint needs a square A")
        else:
            raise ValueError(f"unknown indicator {kind!r}")


def _descend(fun, x0, tol, max_iters, project=None):
    # Accelerated projected gradient with backtracking and gradient-based restart.
    # ``project`` maps onto a convex feasible set.
    project = project or (lambda v: v)
    x = project(np.asarray(x0, dtype=float))
    z, t, step = x.copy(), 1.0, 1.0
    for it in range(max_iters):
        val_z, g_z = fun(z)
        while True:
            x_new = project(z - step * g_z)
            val_new, _ = fun(x_new)
            dx = x_new - z
            if np.isfinite(val_new) and val_new <= val_z + g_z @ dx + 0.5 / step * (dx @ dx) + 1e-15:
                break
            step *= 0.5
            if step < 1e-20:
                raise Nonconvergence("line search failed")
        if np.sqrt(dx @ dx) / step < tol:
            return x_new, val_new
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if dx @ (x_new - x) < 0:  # momentum points uphill: restart
            t_new = 1.0
        z = x_new + (t - 1.0) / t_new * (x_new - x) if t_new > 1.0 else x_new
        x, t = x_new, t_new
        step *= 1.1
    raise Nonconvergence(f"no convergence in {max_iters} iterations")


def fenchel_gap_check(prob, tol=1e-10, max_iters=100000):
    """Solve the primal and the Fenchel dual independently and report the gap.

    Primal: min f(x) + g(Ax). Dual: max -f*(-A^T y) - g*(y). The primal solution is also
    recovered from the dual one as x = f*'(-A^T y).
    """
    f, A = prob.f, prob.A
    m, n = A.shape
    if prob.g[0] == "point":
        b = prob.g[1]
        x_part, *_ = np.linalg.lstsq(A, b, rcond=None)
        if np.linalg.norm(A @ x_part - b) > 1e-9 * max(1.0, np.linalg.norm(b)):
            raise Infeasible("A x = b has no solution")
        # Substitute x = x_part + N z so the equality constraint disappears.
        _, sing, vt = np.linalg.svd(A)
        rank = int(np.sum(sing > 1e-12 * max(1.0, sing.max(initial=0.0))))
        N = vt[rank:].T
        if N.shape[1]:
            def primal_fun(z):
                x = x_part + N @ z
                return float(np.sum(f.eval(x))), N.T @ f.derivative(x)

            z, _ = _descend(primal_fun, np.zeros(N.shape[1]), tol, max_iters)
            x_primal = x_part + N @ z
        else:
            x_primal = x_part
        primal = float(np.sum(f.eval(x_primal)))

        def neg_dual(y):
            u = -A.T @ y
            return float(np.sum(f.conjugate(u)) + b @ y), -A @ f.conjugate_derivative(u) + b

        y, neg = _descend(neg_dual, np.zeros(m), tol, max_iters)
    else:
        Ainv = np.linalg.inv(A)

        # x = A^{-1} z with z >= 0.
        def primal_fun(z):
            x = Ainv @ z
            return float(np.sum(f.eval(x))), Ainv.T @ f.derivative(x)

        z, primal = _descend(primal_fun, np.ones(n), tol, max_iters, project=lambda v: np.maximum(v, 0.0))
        x_primal = Ainv @ z

        # g* is the indicator of y <= 0.
        def neg_dual(y):
            u = -A.T @ y
            return float(np.sum(f.conjugate(u))), -A @ f.conjugate_derivative(u)

        y, neg = _descend(neg_dual, np.zeros(m), tol, max_iters, project=lambda v: np.minimum(v, 0.0))
    dual = -neg
    return {
        "primal": primal,
        "dual": dual,
        "gap": abs(primal - dual),
        "primal_solution": x_primal,
        "dual_solution": y,
        "primal_recovered": f.conjugate_derivative(-A.T @ y),
    }
