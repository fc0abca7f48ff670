"""Method-string grammar, dispatch to estimators, and oracle comparison."""

from dataclasses import dataclass, field

import numpy as np

from dualrl import evaluation, oracles, policy_opt, undiscounted, vlp
from dualrl.convex import make_generator
from dualrl.dataset import on_policy_distribution
from dualrl.errors import MethodParseError, DualRLError

ORACLE_PAIR_LIMIT = 4096
BRUTE_FORCE_PAIR_LIMIT = 64


@dataclass(frozen=True)
class MethodSpec:
    family: str
    gen: str = None
    flags: tuple = ()
    text: str = ""

    @property
    def undiscounted(self):
        return self.family.startswith("undisc-")

    @property
    def needs_target(self):
        return self.family in EVAL_FAMILIES


# family -> (generator slot: "required" | "none" | "optional", allowed trailing flags)
GRAMMAR = {
    "lagrangian": ("mode", ()),
    "dualdice": ("required", ("closed",)),
    "algaedice": ("required", ("noreward",)),
    "klqlp": ("none", ()),
    "vlp": ("required", ()),
    "reps": ("none", ()),
    "vlp-eval": ("none", ()),
    "undisc-dual": ("required", ()),
    "undisc-lagrangian": ("optional", ("gendice",)),
    "undisc-opt": ("required", ()),
    "undisc-reps": ("none", ()),
}
EVAL_FAMILIES = {"lagrangian", "dualdice", "vlp-eval", "undisc-dual", "undisc-lagrangian"}


def _take_generator(tokens):
    # "pnorm" carries its exponent as the next token.
    if not tokens:
        raise MethodParseError("missing generator")
    head = tokens[0]
    if head == "pnorm":
        if len(tokens) < 2:
            raise MethodParseError("pnorm needs an exponent, e.g. pnorm:3")
        text, rest = f"pnorm:{tokens[1]}", tokens[2:]
    else:
        text, rest = head, tokens[1:]
    try:
        make_generator(text)
    except DualRLError as exc:
        raise MethodParseError(str(exc)) from None
    return text, rest


def parse_method(text):
    tokens = [t for t in str(text).strip().lower().split(":")]
    if not tokens or not tokens[0]:
        raise MethodParseError("empty method string")
    family, rest = tokens[0], tokens[1:]
    if family not in GRAMMAR:
        raise MethodParseError(f"unknown method family {family!r}")
    slot, allowed = GRAMMAR[family]
    gen = None
    if slot == "mode":
        if rest[:1] in (["reward"], ["zero"]) and len(rest) == 1:
            return MethodSpec(family, None, (rest[0],), text)
        if rest[:1] == ["fdiv"]:
            gen, rest = _take_generator(rest[1:])
            if rest:
                raise MethodParseError(f"unexpected suffix {':'.join(rest)!r}")
            return MethodSpec(family, gen, ("fdiv",), text)
        raise MethodParseError("lagrangian needs reward, zero or fdiv:<gen>")
    if slot == "required":
        gen, rest = _take_generator(rest)
    elif slot == "optional" and rest and rest[0] not in allowed:
        gen, rest = _take_generator(rest)
    flags = tuple(rest)
    for f in flags:
        if f not in allowed:
            raise MethodParseError(f"unexpected flag {f!r} for {family}")
    if len(set(flags)) != len(flags):
        raise MethodParseError("repeated flag")
    if family == "undisc-lagrangian" and "gendice" in flags and gen is not None:
        raise MethodParseError("the GenDICE objective has no generator")
    return MethodSpec(family, gen, flags, text)


# -- catalog metadata -----------------------------------------------------------


@dataclass(frozen=True)
class CatalogEntry:
    method: str
    anchor: str
    objective: str
    variables: str
    oracle: str
    tolerance: str
    test: str


CATALOG = {
    "lagrangian": CatalogEntry(
        "lagrangian:reward | lagrangian:zero",
        "q-lp/lagrangian",
        "min_Q max_{zeta>=0} (1-g) E_{mu0,pi}[Q] + E_dD[zeta (c R + g P^pi Q - Q)]",
        "Q: state-action values; zeta: density ratio d^pi/d^D; c = 1 for reward mode, 0 for zero mode",
        "exact_value, exact_visitation / d^D",
        "value 1e-3, ratio 1e-2 (observed ~1e-9)",
        "tests/test_evaluation.py, tests/test_acceptance.py::test_value_recovery",
    ),
    "lagrangian:fdiv": CatalogEntry(
        "lagrangian:fdiv:<gen>",
        "q-lp/regularized-lagrangian",
        "min_Q max_{zeta>=0} (1-g) E_{mu0,pi}[Q] + E_dD[zeta (g P^pi Q - Q)] - E_dD[f(zeta)]",
        "Q: state-action values; zeta: density ratio (zeta = exp(w) when dom f is x >= 0)",
        "exact_visitation / d^D",
        "ratio 1e-2 (observed ~1e-9)",
        "tests/test_evaluation.py, tests/test_acceptance.py::test_value_recovery",
    ),
    "dualdice": CatalogEntry(
        "dualdice:<gen>",
        "q-lp/dualdice",
        "min_Q (1-g) E_{mu0,pi}[Q] + E_dD[f*(g P^pi Q - Q)];  zeta = f*'(g P^pi Q - Q)",
        "Q: state-action values; zeta recovered from the residual",
        "exact_visitation / d^D, -D_f(d^pi || d^D)",
        "descent 1e-3, strong duality 1e-4",
        "tests/test_evaluation.py, tests/test_acceptance.py::test_dualdice_square_identity",
    ),
    "dualdice:closed": CatalogEntry(
        "dualdice:square:closed",
        "q-lp/dualdice-closed-form",
        "(B^T W B) Q = -(1-g) nu with B = g P^pi - I, W = diag(d^D);  zeta = B Q",
        "Q: state-action values; zeta = d^pi/d^D exactly",
        "exact_visitation / d^D",
        "1e-8",
        "tests/test_acceptance.py::test_dualdice_square_identity",
    ),
    "algaedice": CatalogEntry(
        "algaedice:<gen>",
        "q-lp/policy-optimization",
        "max_pi min_Q (1-g) E_{mu0,pi}[Q] + E_dD[(alpha f)*(R + g P^pi Q - Q)]",
        "pi = softmax(logits); Q: state-action values",
        "sweep / exact_regularized_optimum",
        "sweep maximum 1e-3",
        "tests/test_policy_opt.py, tests/test_acceptance.py::test_optimization_sanity",
    ),
    "algaedice:noreward": CatalogEntry(
        "algaedice:<gen>:noreward",
        "q-lp/imitation",
        "max_pi min_Q (1-g) E_{mu0,pi}[Q] + E_dD[f*(g P^pi Q - Q)]  (= -D_f(d^pi || d^D))",
        "pi = softmax(logits); Q: state-action values; d^D: expert data",
        "exact_regularized_optimum with zero reward, argmax against the expert",
        "argmax match, objective 1e-3",
        "tests/test_policy_opt.py",
    ),
    "klqlp": CatalogEntry(
        "klqlp",
        "q-lp/kl-regularized",
        "max_pi min_Q (1-g) E_{mu0,pi}[Q] + log E_dD[exp(R + g P^pi Q - Q)]",
        "pi = softmax(logits); Q: state-action values",
        "exact_regularized_optimum (kl)",
        "1e-3",
        "tests/test_policy_opt.py",
    ),
    "vlp": CatalogEntry(
        "vlp:<gen>",
        "v-lp/f-divergence-dual",
        "min_{V, K>=0} (1-g) E_mu0[V] + E_dD[f*(K + R + g T V - V)];  d* = d^D f*'(...)",
        "V: state values; K: nonnegativity multipliers; pi* by per-state normalization of d*",
        "exact_regularized_optimum",
        "d* 1e-3, flow 1e-4",
        "tests/test_vlp.py",
    ),
    "reps": CatalogEntry(
        "reps",
        "v-lp/reps",
        "min_V (1-g) E_mu0[V] + log E_dD[exp(R + g T V - V)]",
        "V: state values; d* = d^D softmax weights",
        "exact_regularized_optimum (kl)",
        "value 1e-4, flow 1e-4, normalization 1e-6",
        "tests/test_acceptance.py::test_reps_duality",
    ),
    "vlp-eval": CatalogEntry(
        "vlp-eval",
        "v-lp/evaluation",
        "min_V max_{eta>=0} (1-g) E_mu0[V] + E_dD[eta(s) pi(a|s)/d^D(a|s) (R + g T V - V)]",
        "V: state values; mu = eta d^D(s): state visitation",
        "state marginal of exact_visitation, exact_value",
        "1e-3",
        "tests/test_vlp.py",
    ),
    "undisc-dual": CatalogEntry(
        "undisc-dual:<gen>",
        "average-reward/f-divergence-dual",
        "min_{Q, lam} -lam + E_dD[f*(lam + P^pi Q - Q)];  zeta = f*'(...)",
        "Q: values with Q[0] = 0; lam: normalization multiplier",
        "exact_stationary / d^D",
        "ratio 1e-2, E[zeta] = 1 within 1e-3",
        "tests/test_undiscounted.py",
    ),
    "undisc-lagrangian": CatalogEntry(
        "undisc-lagrangian[:<gen>]",
        "average-reward/lagrangian",
        "max_{zeta>=0} min_{Q,lam} -lam + E_dD[zeta (lam + P^pi Q - Q)] - E_dD[f(zeta)]",
        "zeta: ratio; Q: values with Q[0] = 0; lam: normalization multiplier",
        "exact_stationary / d^D",
        "ratio 1e-2",
        "tests/test_acceptance.py::test_undiscounted_suite",
    ),
    "undisc-lagrangian:gendice": CatalogEntry(
        "undisc-lagrangian:gendice",
        "average-reward/gendice",
        "max_{zeta>=0} min_{Q,lam} -lam + lam^2/2 + E_dD[zeta (lam + P^pi Q - Q + Q^2/4)]",
        "zeta: ratio; Q: values with Q[0] = 0; lam: normalization multiplier",
        "exact_stationary / d^D",
        "ratio 1e-2, plain vs gendice 1e-2",
        "tests/test_acceptance.py::test_undiscounted_suite",
    ),
    "undisc-opt": CatalogEntry(
        "undisc-opt:<gen>",
        "average-reward/policy-optimization",
        "max_pi min_{Q, lam} -lam + E_dD[f*(lam + R + P^pi Q - Q)]",
        "pi = softmax(logits); Q: values with Q[0] = 0; lam",
        "exact_regularized_optimum (undiscounted), exact_stationary",
        "sweep maximum 1e-3",
        "tests/test_undiscounted.py, tests/test_acceptance.py::test_optimization_sanity",
    ),
    "undisc-reps": CatalogEntry(
        "undisc-reps",
        "average-reward/reps",
        "min_V log E_dD[exp(R + T V - V)] with V[0] = 0",
        "V: state values; d* = d^D softmax weights",
        "exact_regularized_optimum (kl, undiscounted)",
        "1e-4",
        "tests/test_undiscounted.py",
    ),
}


SECTIONS = tuple(CATALOG)


def catalog_section(method):
    """Catalog section documenting a method string or parsed MethodSpec."""
    spec = method if isinstance(method, MethodSpec) else parse_method(method)
    fam = spec.family
    if fam == "lagrangian" and spec.gen is not None:
        return "lagrangian:fdiv"
    if fam == "dualdice" and "closed" in spec.flags:
        return "dualdice:closed"
    if fam == "algaedice" and "noreward" in spec.flags:
        return "algaedice:noreward"
    if fam == "undisc-lagrangian" and "gendice" in spec.flags:
        return "undisc-lagrangian:gendice"
    return fam


# -- dispatch -----------------------------------------------------------------


def _ratio_error(zeta, d_true, weights):
    mask = weights > 0
    return float(np.abs(zeta[mask] - d_true[mask] / weights[mask]).max())


def _regularized_oracle(mdp, weights, gen, mode, reward_on=True):
    if mdp.n_pairs > BRUTE_FORCE_PAIR_LIMIT:
        return None
    m = mdp if reward_on else mdp.with_reward(np.zeros_like(mdp.reward))
    return oracles.exact_regularized_optimum(m, weights, gen, mode)[1]


def run_method(method, mdp, dataset, target=None, config=None):
    """Run one method and return a flat result dictionary (tables as numpy arrays)."""
    spec = parse_method(method) if isinstance(method, str) else method
    fam, gen = spec.family, spec.gen
    out = {"method": spec.text or method, "oracle_value": None, "zeta_max_error": None,
           "zeta_table": None, "q_table": None, "v_table": None, "policy": None}
    with_oracle = mdp.n_pairs <= ORACLE_PAIR_LIMIT
    if spec.needs_target and target is None:
        raise MethodParseError(f"{fam} needs a target policy")

    if fam in ("lagrangian", "dualdice", "vlp-eval"):
        if fam == "lagrangian":
            h = spec.flags[0] if spec.flags[0] != "fdiv" else f"fdiv:{gen}"
            r = evaluation.lagrangian_ope(mdp, target, dataset, h, config)
        elif fam == "dualdice":
            r = evaluation.dualdice_dual(mdp, target, dataset, gen, config, closed_form="closed" in spec.flags)
        if fam == "vlp-eval":
            mu, value, report = vlp.vlp_policy_eval_lagrangian(mdp, target, dataset, config)
            out.update(value_estimate=value, report=report, v_table=mu)
        else:
            out.update(value_estimate=r.value_estimate, report=r.report, zeta_table=r.zeta_table, q_table=r.q_table)
        if with_oracle:
            d = oracles.exact_visitation(mdp, target)
            out["oracle_value"] = oracles.exact_value(mdp, target, d=d)
            if out["zeta_table"] is not None:
                out["zeta_max_error"] = _ratio_error(out["zeta_table"], d, dataset.weights)
    elif fam in ("undisc-dual", "undisc-lagrangian"):
        if fam == "undisc-dual":
            r = undiscounted.undisc_fdiv_dual(mdp, target, dataset, gen, config)
        else:
            r = undiscounted.undisc_lagrangian(mdp, target, dataset, gen or "square", "gendice" in spec.flags, config)
        out.update(value_estimate=r.value_estimate, report=r.report, zeta_table=r.zeta_table, q_table=r.q_table)
        if with_oracle:
            d = oracles.exact_stationary(mdp, target)
            out["oracle_value"] = float(d @ mdp.flat_reward)
            out["zeta_max_error"] = _ratio_error(r.zeta_table, d, dataset.weights)
    elif fam in ("algaedice", "klqlp", "undisc-opt"):
        if fam == "algaedice":
            reward_on = "noreward" not in spec.flags
            r = policy_opt.algaedice_primal(mdp, dataset, gen, reward_on, 1.0, config)
            oracle_gen, mode = gen, "discounted-vlp"
        elif fam == "klqlp":
            reward_on = True
            r = policy_opt.kl_qlp_optimize(mdp, dataset, config)
            oracle_gen, mode = "kl", "discounted-vlp"
        else:
            reward_on = True
            r = undiscounted.undisc_policy_opt(mdp, dataset, gen, config)
            oracle_gen, mode = gen, "undiscounted"
        out.update(value_estimate=r.regularized_objective, report=r.report, q_table=r.q_table,
                   policy=r.policy.probs, policy_value=r.value_of_policy)
        if with_oracle:
            out["oracle_value"] = _regularized_oracle(mdp, dataset.weights, oracle_gen, mode, reward_on)
    elif fam in ("vlp", "reps", "undisc-reps"):
        if fam == "vlp":
            r = vlp.vlp_fdiv_dual(mdp, dataset, gen, config)
            oracle_gen, mode = gen, "discounted-vlp"
        elif fam == "reps":
            r = vlp.reps_objective_solve(mdp, dataset, config)
            oracle_gen, mode = "kl", "discounted-vlp"
        else:
            r = undiscounted.undisc_reps(mdp, dataset, config)
            oracle_gen, mode = "kl", "undiscounted"
        out.update(value_estimate=r.objective_value, report=r.report, v_table=r.v_table,
                   policy=r.recovered_policy.probs, recovered_d=r.recovered_d)
        if with_oracle:
            out["oracle_value"] = _regularized_oracle(mdp, dataset.weights, oracle_gen, mode)
    else:  # pragma: no cover - GRAMMAR and dispatch are kept in sync by tests
        raise MethodParseError(f"no dispatch for {fam}")

    ov = out["oracle_value"]
    out["abs_error"] = None if ov is None else abs(out["value_estimate"] - ov)
    return out


EXAMPLE_METHODS = (
    "lagrangian:reward", "lagrangian:zero", "lagrangian:fdiv:square", "lagrangian:fdiv:kl",
    "dualdice:square", "dualdice:square:closed", "dualdice:chisquare", "dualdice:pnorm:3",
    "algaedice:square", "algaedice:chisquare:noreward", "klqlp",
    "vlp:square", "vlp:chisquare", "reps", "vlp-eval",
    "undisc-dual:square", "undisc-dual:kl", "undisc-lagrangian", "undisc-lagrangian:kl", "undisc-lagrangian:gendice",
    "undisc-opt:square", "undisc-opt:kl", "undisc-reps",
)
