"""Randomized property suites for the comparison/maximum-principle and
asymptotic claims.

Every suite is deterministic given its seed, samples only systems that
satisfy the hypotheses of the property under test, and additionally runs
hypothesis-violating control trials that must trip the check (otherwise
the suite itself fails for having no teeth).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.linalg import expm

from nonlocalrd.kernel import NonlocalOperator, assemble_kernel, build_operator
from nonlocalrd.equilibria import solve_phi
from nonlocalrd.evolve import (
    IntegratorConfig,
    evolve_nonlinear,
    monotone_config,
    supersolution_ode,
)
from nonlocalrd.reaction import (
    CallableReaction,
    LogisticReaction,
    Reaction,
    add_bump,
    structure_bounds,
)
from nonlocalrd.space import build_interval, is_r_connected
from nonlocalrd.spectral import principal_value

EXACT_TOL = 1e-12   # euler_op invariants hold to rounding
SOFT_TOL = 1e-8     # rk4-based asymptotic checks


@dataclass
class PropertyReport:
    property: str
    trials: int
    failures: int
    worst_violation: float
    seed: int
    tolerance: float
    details: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_json(self) -> str:
        payload = {
            "schema_version": "1",
            "property": self.property,
            "trials": self.trials,
            "failures": self.failures,
            "worst_violation": self.worst_violation,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "details": self.details,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class SampledSystem:
    op: NonlocalOperator
    reaction: Reaction
    strong_certified: bool  # positivity certificate valid on an r-connected space


def _sample_space(rng):
    n = int(rng.choice([32, 64, 128]))
    length = float(rng.choice([1.0, 1.5]))
    return build_interval(0.0, length, n)


def _sample_kernel(rng, space, strong: bool):
    if strong:
        # certificate radius beyond the diameter: positivity reaches every
        # pair, so strict gaps spread to all nodes in a single step
        choice = rng.integers(0, 2)
        if choice == 0:
            return assemble_kernel(space, "constant", c=float(rng.uniform(0.5, 2.0)))
        return assemble_kernel(space, "tophat", R=1.5 * space.diameter() + 0.1,
                               J0=float(rng.uniform(0.5, 2.0)))
    choice = rng.integers(0, 3)
    if choice == 0:
        return assemble_kernel(space, "constant", c=float(rng.uniform(0.5, 2.0)))
    if choice == 1:
        return assemble_kernel(space, "tophat", R=float(rng.uniform(0.3, 0.6)) * space.diameter(),
                               J0=float(rng.uniform(0.5, 2.0)))
    return assemble_kernel(space, "gaussian", sigma=float(rng.uniform(0.2, 0.5)),
                           scale=float(rng.uniform(0.5, 1.5)))


def _sample_potential(rng, space):
    x = space.x / max(space.diameter(), 1e-12)
    a = rng.uniform(-0.5, 1.0)
    b = rng.uniform(-0.5, 0.5)
    c = rng.uniform(-0.5, 0.5)
    return a + b * np.sin(2 * np.pi * x) + c * (x > rng.uniform(0.2, 0.8))


def _sample_reaction(rng, n, nonneg_g0: bool):
    kind = rng.integers(0, 3)
    x = np.linspace(0, 1, n)
    if kind == 0:
        lo = 0.0 if nonneg_g0 else -0.5
        g = rng.uniform(lo, 0.8) + rng.uniform(0.0, 0.3) * np.sin(np.pi * x)
        g = np.maximum(g, 0.0) if nonneg_g0 else g
        ncoef = rng.uniform(-1.0, 1.5)
        m = rng.uniform(0.3, 1.0)
        rho = float(rng.choice([2.0, 3.0]))
        return LogisticReaction(g=g, n=ncoef, m=m, rho=rho, n_nodes=n)
    if kind == 1:
        lam = rng.uniform(0.5, 2.0)
        return LogisticReaction(g=0.0, n=lam, m=lam, rho=3.0, n_nodes=n)  # cubic bistable
    a = rng.uniform(0.3, 1.0)
    b = rng.uniform(0.5, 2.0)
    g0 = rng.uniform(0.0 if nonneg_g0 else -0.5, 0.5)

    def fun(s):
        return a * np.tanh(b * s) + g0

    def dfun(s):
        sech = 2.0 * np.exp(-np.abs(b * s)) / (1.0 + np.exp(-2.0 * np.abs(b * s)))
        return a * b * sech * sech

    return CallableReaction(fun, dfun, n_nodes=n, kind="globally_lipschitz", lip=a * b)


def sample_system(rng, nonneg_g0: bool = False, strong: bool = False) -> SampledSystem:
    space = _sample_space(rng)
    kern = _sample_kernel(rng, space, strong)
    h = _sample_potential(rng, space)
    op = build_operator(kern, h)
    f = _sample_reaction(rng, space.n, nonneg_g0)
    certified = False
    if kern.positivity_cert is not None:
        certified = is_r_connected(space, kern.positivity_cert[0]).connected
    return SampledSystem(op=op, reaction=f, strong_certified=certified)


def _hops_to_cover(space, r: float, support) -> int:
    """Steps of <r chaining needed to reach every node from the support.

    One order-preserving step propagates strict positivity exactly one
    hop of the certificate graph, so the strong checks start here (one
    for kernels whose radius covers the space).
    """
    adj = space.dist < r
    seen = np.array(support, dtype=bool)
    hops = 0
    while not seen.all():
        new = (adj & seen[None, :]).any(axis=1) & ~seen
        if not new.any():
            return len(seen) + 1  # not coverable; effectively never
        seen |= new
        hops += 1
    return max(hops, 1)


def _shared_monotone_config(op, f0, f1, u_init_scale, t_end):
    """One euler_op configuration valid for an ordered pair of reactions.

    The coupling argument needs both trajectories to share dt, β and the
    truncation level, so take the envelope of the two derived setups.
    """
    probe = np.full(op.n, u_init_scale)
    c0 = monotone_config(op, f0, probe, t_end)
    c1 = monotone_config(op, f1, probe, t_end)
    k = max(c0.trunc_k or 0.0, c1.trunc_k or 0.0) or None
    beta = max(c0.beta, c1.beta)
    return monotone_config(op, f0, probe, t_end, trunc_k=k, beta=beta)


def comparison_suite(trials: int, seed: int) -> PropertyReport:
    """Ordered data and ordered reactions keep ordered euler_op orbits.

    Weak ordering is checked to rounding on every stored step; on
    positivity-certified r-connected systems with a strict initial gap
    the minimum gap must be strictly positive from the first step on.
    """
    failures = 0
    worst = 0.0
    details: List[dict] = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        strong = trial % 2 == 0
        sys_ = sample_system(rng, strong=strong)
        op, f1 = sys_.op, sys_.reaction
        n = op.n
        bump_f = float(rng.uniform(0.0, 0.5))
        f0 = add_bump(f1, np.full(n, bump_f))
        u1 = rng.uniform(-1.0, 1.0, size=n)
        gap0 = np.zeros(n)
        if rng.uniform() < 0.5:
            gap0[rng.integers(0, n)] = rng.uniform(0.1, 0.5)  # sparse strict bump
        else:
            gap0 = rng.uniform(0.0, 0.5, size=n)
        u0 = u1 + gap0
        cfg = _shared_monotone_config(op, f0, f1, 1.5, 1.0)
        tr0 = evolve_nonlinear(op, f0, u0, cfg)
        tr1 = evolve_nonlinear(op, f1, u1, cfg)
        gap = tr0.states - tr1.states
        viol = max(0.0, -float(np.min(gap)))
        ok = viol <= EXACT_TOL
        strong_ok = True
        if sys_.strong_certified and np.max(gap0) + bump_f > 0:
            if bump_f > 0:  # the reaction gap feeds every node from step one
                start = 1
            else:
                start = _hops_to_cover(op.space, op.kernel.positivity_cert[0],
                                       gap0 > 0)
            if start < len(gap):
                strong_ok = float(np.min(gap[start:])) > 0.0
        if not (ok and strong_ok):
            failures += 1
            details.append({"trial": trial, "violation": viol,
                            "strong_ok": strong_ok, "expected": False})
        worst = max(worst, viol)
    _control_comparison(seed, details)
    failures += sum(1 for d in details if d.get("control_failed"))
    return PropertyReport(property="comparison", trials=trials, failures=failures,
                          worst_violation=worst, seed=seed, tolerance=EXACT_TOL,
                          details=details)


def _control_comparison(seed, details):
    # hypothesis-violating control: f0 strictly below f1 must break ordering
    rng = np.random.default_rng([seed, 10_000])
    sys_ = sample_system(rng)
    op, f1 = sys_.op, sys_.reaction
    f0 = add_bump(f1, np.zeros(op.n))
    u = np.zeros(op.n)
    cfg = _shared_monotone_config(op, f1, f1, 1.0, 0.5)
    lo = evolve_nonlinear(op, f0, u, cfg)                       # f0 = f1, equal data
    hi = evolve_nonlinear(op, add_bump(f1, np.ones(op.n)), u, cfg)
    fired = bool(np.min(lo.states - hi.states) < -EXACT_TOL)    # lo lacks the bump
    details.append({"trial": "control:unordered-reactions", "expected": True,
                    "fired": fired, "control_failed": not fired})


def maximum_principle_suite(trials: int, seed: int) -> PropertyReport:
    """Nonnegative data with f(·,0) >= 0 keep nonnegative euler_op orbits;
    certified connected systems make nontrivial data strictly positive."""
    failures = 0
    worst = 0.0
    details: List[dict] = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        strong = trial % 2 == 0
        sys_ = sample_system(rng, nonneg_g0=True, strong=strong)
        op, f = sys_.op, sys_.reaction
        n = op.n
        mode = rng.integers(0, 3)
        if mode == 0:
            u0 = rng.uniform(0.0, 1.0, size=n)
        elif mode == 1:
            u0 = np.zeros(n)
            u0[rng.integers(0, n)] = rng.uniform(0.5, 1.0)  # single-node bump
        else:
            u0 = np.zeros(n)
        cfg = monotone_config(op, f, np.maximum(u0, 1.0), 1.0)
        tr = evolve_nonlinear(op, f, u0, cfg)
        viol = max(0.0, -float(np.min(tr.states)))
        ok = viol <= EXACT_TOL
        strong_ok = True
        if sys_.strong_certified and np.max(u0) > 0:
            if float(np.min(f.g0)) > 0:  # a strict source lights every node at once
                start = 1
            else:
                start = _hops_to_cover(op.space, op.kernel.positivity_cert[0], u0 > 0)
            if start < len(tr.states):
                strong_ok = float(np.min(tr.states[start:])) > 0.0
        if not (ok and strong_ok):
            failures += 1
            details.append({"trial": trial, "violation": viol,
                            "strong_ok": strong_ok, "expected": False})
        worst = max(worst, viol)
    # control: f(·,0) = -1 must produce genuine negativity from u0 = 0
    rng = np.random.default_rng([seed, 10_000])
    sys_ = sample_system(rng, nonneg_g0=True)
    op, f = sys_.op, sys_.reaction
    neg = CallableReaction(lambda s: f.eval_grid(s) - 1.0 - f.g0[:, None],
                           n_nodes=op.n, kind=f.kind,
                           lip=f.lip_on(10.0) + 1.0)
    cfg = monotone_config(op, neg, np.ones(op.n), 0.5)
    tr = evolve_nonlinear(op, neg, np.zeros(op.n), cfg)
    fired = bool(np.min(tr.states) < -EXACT_TOL)
    details.append({"trial": "control:negative-source", "expected": True,
                    "fired": fired, "control_failed": not fired})
    failures += sum(1 for d in details if d.get("control_failed"))
    return PropertyReport(property="maximum_principle", trials=trials, failures=failures,
                          worst_violation=worst, seed=seed, tolerance=EXACT_TOL,
                          details=details)


def supersolution_suite(trials: int, seed: int) -> PropertyReport:
    """The scalar bound ż = C₁z + D with C₁ = max C + ‖h0-h‖ dominates the
    sup of the orbit whenever ‖u0‖_∞ <= z(0); exact for the monotone scheme."""
    failures = 0
    worst = 0.0
    details: List[dict] = []
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        sys_ = sample_system(rng)
        op, f = sys_.op, sys_.reaction
        sb = structure_bounds(f, "plain")
        c1 = float(np.max(sb.c)) + float(np.max(np.abs(op.h0 - op.h)))
        if c1 <= 0.1:  # keep the discrete Euler-vs-exact comparison one-sided
            c1 = 0.1
        d1 = float(np.max(sb.d))
        u0 = rng.uniform(-1.0, 1.0, size=op.n)
        m0 = float(np.max(np.abs(u0)))
        t_end = 1.0
        z = supersolution_ode(c1, d1, m0, t_end)
        cfg = monotone_config(op, f, u0, t_end, trunc_k=z.level * (1 + 1e-9) + 1e-9)
        tr = evolve_nonlinear(op, f, u0, cfg)
        zvals = z(tr.times)
        viol = float(np.max(np.max(tr.states, axis=1) - zvals))
        rel = viol / (1.0 + float(np.max(zvals)))
        if rel > EXACT_TOL:
            failures += 1
            details.append({"trial": trial, "violation": rel, "expected": False})
        worst = max(worst, max(rel, 0.0))
    # control: a bound whose start is below ‖u0‖ must be overtaken
    rng = np.random.default_rng([seed, 10_000])
    sys_ = sample_system(rng)
    op, f = sys_.op, sys_.reaction
    z = supersolution_ode(1.0, 0.0, 0.5, 0.25)
    u0 = np.full(op.n, 2.0)
    cfg = monotone_config(op, f, u0, 0.25)
    tr = evolve_nonlinear(op, f, u0, cfg)
    fired = bool(np.max(np.max(tr.states, axis=1) - z(tr.times)) > EXACT_TOL)
    details.append({"trial": "control:undersized-bound", "expected": True,
                    "fired": fired, "control_failed": not fired})
    failures += sum(1 for d in details if d.get("control_failed"))
    return PropertyReport(property="supersolution", trials=trials, failures=failures,
                          worst_violation=worst, seed=seed, tolerance=EXACT_TOL,
                          details=details)


def asymptotic_suite(trials: int, seed: int) -> PropertyReport:
    """Envelope invariance and decay for systems with a negative bound.

    Samples h = 0 systems with logistic reactions whose growth rate is
    dominated by -max(h0), so sup Re σ(K + CI) < 0; checks the envelope
    inequality |u(t)| <= U(t), the invariance |u0| <= Φ ⇒ |u(t)| <= Φ,
    and the exponential decay of (|u(T)| - Φ)₊ against the rigorous
    matrix-exponential rate, all at rk4 tolerance.
    """
    failures = 0
    worst = 0.0
    details: List[dict] = []
    fitted = []
    phi = None
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        space = _sample_space(rng)
        kern = _sample_kernel(rng, space, strong=False)
        op = build_operator(kern, np.zeros(space.n))
        margin = float(rng.uniform(0.2, 1.0))
        ncoef = -(float(np.max(op.h0)) + margin)
        g = rng.uniform(0.1, 0.6, size=space.n)
        f = LogisticReaction(g=g, n=ncoef, m=float(rng.uniform(0.3, 1.0)),
                             rho=float(rng.choice([2.0, 3.0])), n_nodes=space.n)
        sb = structure_bounds(f, "plain")
        op_c = build_operator(kern, -sb.c)
        lam = principal_value(op_c, method="dense").lam
        phi = solve_phi(kern, sb.c, sb.d)
        # (a) invariance inside the envelope (0.99 keeps a margin above
        # integrator error without weakening the analytic claim)
        u0_in = 0.99 * rng.uniform(-1.0, 1.0, size=space.n) * phi
        cfg = IntegratorConfig(scheme="rk4", dt=5e-3, t_end=2.0, store_every=40)
        tr_in = evolve_nonlinear(op, f, u0_in, cfg)
        inv_viol = float(np.max(np.abs(tr_in.states) - phi[None, :]))
        # (b) generic datum: envelope domination and rigorous decay rate
        u0 = (1.0 + rng.uniform(0.0, 2.0)) * phi + rng.uniform(0.0, 0.5, size=space.n)
        tr = evolve_nonlinear(op, f, u0, cfg)
        gap_plus = np.maximum(np.abs(u0) - phi, 0.0)
        env_viol = -np.inf
        decay_viol = -np.inf
        for idx, t in enumerate(tr.times):
            prop = expm(op_c.amat * float(t))
            env_t = phi + prop @ (np.abs(u0) - phi)
            env_viol = max(env_viol, float(np.max(np.abs(tr.states[idx]) - env_t)))
            rig = float(np.max(prop @ gap_plus))
            delta = float(np.max(np.maximum(np.abs(tr.states[idx]) - phi, 0.0)))
            decay_viol = max(decay_viol, delta - rig)
        fitted.append(float(np.max(
            np.max(np.maximum(np.abs(tr.states) - phi[None, :], 0.0), axis=1)
            * np.exp(0.5 * abs(lam) * tr.times))))
        viol = max(inv_viol, env_viol, decay_viol)
        if viol > SOFT_TOL:
            failures += 1
            details.append({"trial": trial, "violation": viol, "expected": False})
        worst = max(worst, viol)
    details.append({"trial": "summary", "fitted_M": fitted, "informational": True})
    # control: claiming invariance for 2Φ must already fail at t = 0
    if phi is not None:
        fired = bool(np.max(2.0 * phi - phi) > SOFT_TOL)
        details.append({"trial": "control:outside-envelope", "expected": True,
                        "fired": fired, "control_failed": not fired})
        failures += 0 if fired else 1
    return PropertyReport(property="asymptotic", trials=trials, failures=failures,
                          worst_violation=worst, seed=seed, tolerance=SOFT_TOL,
                          details=details)


SUITES = {
    "comparison": comparison_suite,
    "maximum": maximum_principle_suite,
    "supersolution": supersolution_suite,
    "asymptotic": asymptotic_suite,
}


def run_suite(name: str, trials: int, seed: int) -> PropertyReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](trials, seed)
