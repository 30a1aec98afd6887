"""Exact tabular oracle for the policy-improvement bounds.

Everything here is closed form: values come from a direct linear solve and
the discounted visitation measure is

    d = (1 - gamma) mu^T (I - gamma P_pi)^{-1}.

"(s, a) ~ pi" inside an expectation is read as s ~ d_pi, a ~ pi(.|s), the
measure under which the performance-difference algebra is exact.

Random instances: transition rows and policy rows are Dirichlet(1), rewards
r(s, a, s') are uniform on [-1, 1], gamma is drawn from {0.8, 0.9, 0.95} and
the start distribution is Dirichlet(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from exoppo.errors import InputError

MAX_STATES = 12
MAX_ACTIONS = 4
GAMMAS = (0.8, 0.9, 0.95)
TOL = 1e-9


@dataclass(frozen=True)
class TabularMDP:
    P: np.ndarray  # (S, A, S')
    R: np.ndarray  # (S, A, S')
    gamma: float
    mu: np.ndarray  # (S,)

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise InputError(f"P must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if not (1 <= S <= MAX_STATES and 1 <= A <= MAX_ACTIONS):
            raise InputError(f"need |S| <= {MAX_STATES} and |A| <= {MAX_ACTIONS}, got {S}, {A}")
        if R.shape != P.shape:
            raise InputError(f"R must have shape {P.shape}, got {R.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(-1) - 1.0)) > 1e-12:
            raise InputError("transition rows must be probability vectors")
        if not 0.0 < self.gamma < 1.0:
            raise InputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
            raise InputError("mu must be a probability vector over states")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "mu", mu)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def expected_reward(self) -> np.ndarray:
        """r(s, a) = sum_s' P(s'|s, a) r(s, a, s')."""
        return np.einsum("sat,sat->sa", self.P, self.R)


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # (S, A)

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0) or np.max(np.abs(p.sum(-1) - 1.0)) > 1e-12:
            raise InputError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", p)


@dataclass
class Evaluation:
    V: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    J: float
    d: np.ndarray


@dataclass
class BoundReport:
    lhs: float
    surrogate: float
    penalty: float
    rhs: float
    slack: float
    C: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tv: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def holds(self) -> bool:
        return self.slack >= -TOL


def _check(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InputError(f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")
    return policy.probs


def exact_eval(mdp: TabularMDP, policy: TabularPolicy) -> Evaluation:
    pi = _check(mdp, policy)
    g = mdp.gamma
    r = mdp.expected_reward
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    system = np.eye(mdp.n_states) - g * P_pi
    V = np.linalg.solve(system, (pi * r).sum(-1))
    Q = r + g * mdp.P @ V
    d = (1.0 - g) * np.linalg.solve(system.T, mdp.mu)
    return Evaluation(V, Q, Q - V[:, None], float(mdp.mu @ V), d)


def tv_distance(pi: TabularPolicy, ref: TabularPolicy) -> np.ndarray:
    """Per-state total variation, half the L1 distance between action rows."""
    return 0.5 * np.abs(pi.probs - ref.probs).sum(-1)


def check_lemma_pdl(mdp: TabularMDP, pi: TabularPolicy, ref: TabularPolicy) -> float:
    """|J(pi) - J(ref) - E_{d_pi, pi}[A_ref] / (1 - gamma)|, zero up to round-off."""
    ev, ev_ref = exact_eval(mdp, pi), exact_eval(mdp, ref)
    expected = (ev.d[:, None] * pi.probs * ev_ref.A).sum() / (1.0 - mdp.gamma)
    return abs(ev.J - ev_ref.J - expected)


def check_visitation_bound(mdp: TabularMDP, pi: TabularPolicy, ref: TabularPolicy) -> tuple[float, float]:
    d, d_ref = exact_eval(mdp, pi).d, exact_eval(mdp, ref).d
    g = mdp.gamma
    return float(np.abs(d - d_ref).sum()), float(2.0 * g / (1.0 - g) * (d_ref @ tv_distance(pi, ref)))


def lemma_bound(mdp: TabularMDP, pi: TabularPolicy, ref: TabularPolicy, penalty_scale: float = 1.0) -> BoundReport:
    """Improvement lower bound of ``pi`` against a single reference policy."""
    g = mdp.gamma
    ev, ev_ref = exact_eval(mdp, pi), exact_eval(mdp, ref)
    if np.any((ref.probs == 0) & (pi.probs > 0)):
        raise InputError("ratio undefined: reference assigns zero mass where pi does not")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ref.probs > 0, pi.probs / ref.probs, 0.0)
    surrogate = (ev_ref.d[:, None] * ref.probs * ratio * ev_ref.A).sum() / (1.0 - g)
    C = float(np.max(np.abs((pi.probs * ev_ref.A).sum(-1))))
    etv = float(ev_ref.d @ tv_distance(pi, ref))
    penalty = penalty_scale * 2.0 * g * C / (1.0 - g) ** 2 * etv
    lhs = ev.J - ev_ref.J
    rhs = surrogate - penalty
    return BoundReport(lhs, surrogate, penalty, rhs, lhs - rhs, np.array([C]), np.array([etv]))


def check_theorem1(
    mdp: TabularMDP,
    pi: TabularPolicy,
    priors: list[TabularPolicy],
    nu=None,
    penalty_scale: float = 1.0,
) -> BoundReport:
    """Bound of ``pi`` against the nu-mixture of ``priors`` (ordered newest first).

    All priors are evaluated in one batched solve; nothing is delegated to
    :func:`lemma_bound`, so the two serve as cross-checks of each other.
    """
    M = len(priors)
    if M == 0:
        raise InputError("need at least one prior policy")
    nu = np.full(M, 1.0 / M) if nu is None else np.asarray(nu, dtype=np.float64)
    if nu.shape != (M,) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
        raise InputError("nu must be a probability vector over the priors")
    pi_p = _check(mdp, pi)
    refs = np.stack([_check(mdp, p) for p in priors])  # (M, S, A)
    S, g = mdp.n_states, mdp.gamma
    r = mdp.expected_reward

    P_ref = np.einsum("msa,sat->mst", refs, mdp.P)
    systems = np.eye(S)[None] - g * P_ref
    V = np.linalg.solve(systems, (refs * r[None]).sum(-1)[..., None])[..., 0]  # (M, S)
    A = r[None] + g * np.einsum("sat,mt->msa", mdp.P, V) - V[..., None]
    d = (1.0 - g) * np.linalg.solve(np.swapaxes(systems, 1, 2), np.broadcast_to(mdp.mu, (M, S))[..., None])[..., 0]
    J_refs = V @ mdp.mu
    J_pi = exact_eval(mdp, pi).J

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(refs > 0, pi_p[None] / refs, 0.0)
    surr_i = (d[..., None] * refs * ratio * A).sum((1, 2)) / (1.0 - g)
    C = np.abs((pi_p[None] * A).sum(-1)).max(-1)
    tv = (d * 0.5 * np.abs(pi_p[None] - refs).sum(-1)).sum(-1)
    pen_i = penalty_scale * 2.0 * g * C / (1.0 - g) ** 2 * tv

    lhs = float(J_pi - nu @ J_refs)
    surrogate = float(nu @ surr_i)
    penalty = float(nu @ pen_i)
    rhs = surrogate - penalty
    return BoundReport(lhs, surrogate, penalty, rhs, lhs - rhs, C, tv)


# -- random instances -------------------------------------------------------------


def random_mdp(
    rng: np.random.Generator, n_states: int | None = None, n_actions: int | None = None, gamma: float | None = None
) -> TabularMDP:
    S = int(rng.integers(2, MAX_STATES + 1)) if n_states is None else n_states
    A = int(rng.integers(2, MAX_ACTIONS + 1)) if n_actions is None else n_actions
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(-1.0, 1.0, size=(S, A, S))
    g = float(rng.choice(GAMMAS)) if gamma is None else gamma
    mu = rng.dirichlet(np.ones(S))
    return TabularMDP(P, R, g, mu)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


@dataclass
class SweepResult:
    reports: list[BoundReport]
    pdl_residuals: np.ndarray
    visitation: np.ndarray  # (n, 2) columns lhs, rhs
    m1_gaps: np.ndarray  # |theorem(M=1) - lemma| per term, max over terms
    d_sums: np.ndarray

    @property
    def min_slack(self) -> float:
        return float(min(r.slack for r in self.reports))

    @property
    def ok(self) -> bool:
        return (
            all(r.holds for r in self.reports)
            and bool(np.all(self.pdl_residuals <= TOL))
            and bool(np.all(self.visitation[:, 0] <= self.visitation[:, 1] + TOL))
            and bool(np.all(self.m1_gaps <= TOL))
        )


def sweep(instances: int, seed: int = 0, n_priors: int = 3, penalty_scale: float = 1.0) -> SweepResult:
    """Random (mdp, pi, priors, nu) instances checked against every identity and bound.

    ``penalty_scale`` multiplies the penalty term; values other than 1 exist
    only to confirm that a broken constant is caught.
    """
    rng = np.random.default_rng(seed)
    reports, pdl, vis, gaps, dsums = [], [], [], [], []
    for _ in range(instances):
        mdp = random_mdp(rng)
        S, A = mdp.n_states, mdp.n_actions
        pi = random_policy(rng, S, A)
        priors = [random_policy(rng, S, A) for _ in range(n_priors)]
        nu = rng.dirichlet(np.ones(n_priors))
        reports.append(check_theorem1(mdp, pi, priors, nu, penalty_scale))
        pdl.append(check_lemma_pdl(mdp, pi, priors[0]))
        vis.append(check_visitation_bound(mdp, pi, priors[0]))
        one = check_theorem1(mdp, pi, priors[:1], [1.0], penalty_scale)
        lem = lemma_bound(mdp, pi, priors[0], penalty_scale)
        gaps.append(max(abs(one.lhs - lem.lhs), abs(one.surrogate - lem.surrogate), abs(one.penalty - lem.penalty)))
        dsums.append(exact_eval(mdp, pi).d.sum())
    return SweepResult(reports, np.array(pdl), np.array(vis).reshape(-1, 2), np.array(gaps), np.array(dsums))


def format_reports(reports: list[BoundReport]) -> str:
    lines = [f"{'#':>4} {'lhs':>12} {'surrogate':>12} {'penalty':>12} {'rhs':>12} {'slack':>12}  C / E[TV]"]
    for k, r in enumerate(reports):
        extra = " ".join(f"{c:.4g}/{t:.4g}" for c, t in zip(r.C, r.tv))
        lines.append(f"{k:>4} {r.lhs:>12.6g} {r.surrogate:>12.6g} {r.penalty:>12.6g} {r.rhs:>12.6g} {r.slack:>12.4g}  {extra}")
    return "\n".join(lines)
