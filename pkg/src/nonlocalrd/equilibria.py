"""Stationary problems.

The envelope equilibrium Φ solves KΦ + CΦ + D = 0 under a negative
spectral bound; the extremal equilibria are monotone euler_op limits
from ±(Φ+ε) polished by damped Newton; minimal nonnegative and minimal
positive equilibria come from monotone orbits off 0 and off small
multiples of a principal eigenfunction; and the constant-kernel cubic
gives the piecewise-constant non-isolated family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from nonlocalrd.kernel import Kernel, NonlocalOperator, build_operator
from nonlocalrd.evolve import (
    IntegratorConfig,
    evolve_nonlinear,
    monotone_config,
    supersolution_ode,
)
from nonlocalrd.reaction import (
    LogisticReaction,
    Reaction,
    f_over_s_decreasing,
    monotone_shift,
    structure_bounds,
    truncate,
)
from nonlocalrd.space import MeasureSpace
from nonlocalrd.spectral import principal_value

MAX_BLOCKS = 10_000
RESIDUAL_TOL = 1e-10


@dataclass
class EquilibriumSet:
    phi: np.ndarray                      # envelope Φ >= 0
    phi_m: np.ndarray                    # minimal equilibrium
    phi_M: np.ndarray                    # maximal equilibrium
    phi_m_plus: Optional[np.ndarray]     # minimal nonnegative equilibrium
    residuals: dict
    iterations: dict
    epsilon: float
    stopping_criterion: str = "sup"


@dataclass
class PiecewiseEquilibrium:
    values: Tuple[float, float, float]
    measures: Tuple[float, float, float]
    a_level: float
    assignment: np.ndarray
    residual: float

    @property
    def state(self) -> np.ndarray:
        return np.asarray(self.values)[self.assignment]


def residual_norm(op: NonlocalOperator, f: Reaction, u: np.ndarray) -> float:
    return float(np.max(np.abs(op.amat @ u + f.apply(u))))


def solve_phi(kernel: Kernel, c, d) -> np.ndarray:
    """Nonnegative solution of KΦ + C(x)Φ + D(x) = 0.

    Requires sup Re σ(K + CI) < 0; the dense solve gets one step of
    iterative refinement, which is plenty at desk scale because the
    spectral condition controls the conditioning.
    """
    n = kernel.space.n
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
    d = np.broadcast_to(np.asarray(d, dtype=float), (n,))
    if np.any(d < 0):
        raise ValueError("the inhomogeneity D must be nonnegative")
    op_c = build_operator(kernel, -c)
    lam = principal_value(op_c, method="dense").lam
    if lam >= 0:
        raise ValueError(f"spectral precondition fails: sup Re sigma(K+CI) = {lam:.3g} >= 0")
    amat = op_c.amat
    phi = np.linalg.solve(amat, -d)
    phi += np.linalg.solve(amat, -d - amat @ phi)  # one refinement step
    scale = 1.0 + float(np.max(np.abs(d)))
    if float(np.max(np.abs(amat @ phi + d))) > RESIDUAL_TOL * scale:
        raise RuntimeError("envelope solve residual too large")
    if np.min(phi) < -1e-10 * scale:
        raise RuntimeError("envelope solution lost nonnegativity")
    return phi


def _envelope(op: NonlocalOperator, f: Reaction):
    """Structure bounds folded with the potential, and the envelope Φ.

    Works in the h-absorbed normal form: the reaction relative to
    u_t = Ku - hu + f(u) has bounds (C - h, D), and the spectral
    condition is required of K + (C-h)I.  Logistic reactions with m
    bounded below trade growth for inhomogeneity via the Young shift
    when the plain bounds fail the condition.
    """
    sb = structure_bounds(f, "plain")
    c_eff = sb.c - op.h
    lam = principal_value(build_operator(op.kernel, -c_eff), method="dense").lam
    d = sb.d
    if lam >= 0:
        if isinstance(f, LogisticReaction) and float(np.min(f.m)) > 0:
            a = lam + 1.0
            sb = structure_bounds(f, "young_shift", a=a)
            c_eff = sb.c - op.h
            d = sb.d
        else:
            raise ValueError(
                "no usable structure bounds: sup Re sigma(K+(C-h)I) is nonnegative")
    phi = solve_phi(op.kernel, c_eff, d)
    return c_eff, d, phi


def _block_config(op: NonlocalOperator, f: Reaction, k_window: float,
                  block_t: float) -> IntegratorConfig:
    beta = monotone_shift(truncate(f, k_window), k_window)
    cfg = monotone_config(op, f, np.zeros(op.n), block_t, trunc_k=k_window, beta=beta)
    cfg.store_every = _nsteps_of(cfg)
    return cfg


def _nsteps_of(cfg: IntegratorConfig) -> int:
    return int(round(cfg.t_end / cfg.dt))


def _monotone_orbit(op: NonlocalOperator, f: Reaction, u_start: np.ndarray,
                    direction: int, tol: float, k_window: float,
                    block_t: float = 1.0):
    """Iterate unit time blocks of the order-preserving scheme.

    The orbit must move monotonically (direction -1: non-increasing,
    +1: non-decreasing) across blocks; a failure on the very first block
    means the block is too short to enter the monotone regime, so it is
    doubled a few times before giving up.  Convergence is sup-norm
    Cauchy between block endpoints, with a weighted-L² fallback recorded
    when the sup norm stalls while the mean-square difference contracts.
    """
    u = np.array(u_start, dtype=float)
    w = op.space.weights
    scale = 1.0 + float(np.max(np.abs(u)))
    blocks = 0
    criterion = "sup"
    while blocks < MAX_BLOCKS:
        config = _block_config(op, f, k_window, block_t)
        u_new = evolve_nonlinear(op, f, u, config).final()
        gap = direction * (u_new - u)
        if np.min(gap) < -1e-12 * scale:
            if blocks == 0 and block_t < 64.0:
                block_t *= 2.0
                continue
            raise RuntimeError(
                f"monotone orbit violated ordering at block {blocks} "
                f"(worst {np.min(gap):.3e})")
        blocks += 1
        sup_diff = float(np.max(np.abs(u_new - u)))
        l2_diff = float(np.sqrt(np.sum(w * (u_new - u) ** 2)))
        u = u_new
        if sup_diff <= tol:
            break
        if blocks > 200 and l2_diff <= tol:
            criterion = "l2"
            break
    else:
        raise RuntimeError("monotone iteration exceeded the block cap")
    return u, blocks, criterion


def newton_refine(op: NonlocalOperator, f: Reaction, guess: np.ndarray,
                  tol: float = 1e-12, max_steps: int = 50) -> np.ndarray:
    """Damped Newton on R(u) = amat·u + f(u), halving on residual increase."""
    u = np.array(guess, dtype=float)
    r = op.amat @ u + f.apply(u)
    rn = float(np.max(np.abs(r)))
    for _ in range(max_steps):
        if rn <= tol:
            return u
        jac = op.amat + np.diag(f.apply_ds(u))
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("singular jacobian in newton refinement") from exc
        lam = 1.0
        while True:
            u_try = u + lam * delta
            r_try = op.amat @ u_try + f.apply(u_try)
            rn_try = float(np.max(np.abs(r_try)))
            if rn_try < rn or lam <= 1.0 / 64.0:
                break
            lam /= 2.0
        if rn_try >= rn and rn > tol:
            raise RuntimeError("newton refinement diverged")
        u, r, rn = u_try, r_try, rn_try
    if rn <= tol:
        return u
    raise RuntimeError(f"newton refinement stalled at residual {rn:.3e}")


def extremal_equilibria(op: NonlocalOperator, f: Reaction,
                        epsilon: Optional[float] = None,
                        tol: float = 1e-9) -> EquilibriumSet:
    """Extremal equilibria as monotone limits from ±(Φ+ε).

    The downward orbit from Φ+ε and the upward orbit from -Φ-ε converge
    in ordered blocks to the maximal and minimal equilibria, which are
    then Newton-polished.  Any equilibrium of the system is sandwiched
    between the two, and both are dominated by Φ in absolute value.
    """
    c_eff, d_vec, phi = _envelope(op, f)
    eps = epsilon if epsilon is not None else 1e-3 * (1.0 + float(np.max(np.abs(phi))))
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    k_window = _orbit_window(op, f, pad=eps)

    upper, it_up, crit_up = _monotone_orbit(op, f, phi + eps, -1, tol, k_window)
    lower, it_dn, crit_dn = _monotone_orbit(op, f, -phi - eps, +1, tol, k_window)
    phi_M = newton_refine(op, f, upper)
    phi_m = newton_refine(op, f, lower)

    phi_m_plus = None
    it_plus = 0
    if np.all(f.g0 >= -1e-14):
        phi_m_plus, it_plus = _minimal_nonnegative(op, f, tol, k_window)

    res = {"phi_M": residual_norm(op, f, phi_M), "phi_m": residual_norm(op, f, phi_m)}
    if phi_m_plus is not None:
        res["phi_m_plus"] = residual_norm(op, f, phi_m_plus)
    out = EquilibriumSet(
        phi=phi, phi_m=phi_m, phi_M=phi_M, phi_m_plus=phi_m_plus,
        residuals=res,
        iterations={"phi_M": it_up, "phi_m": it_dn, "phi_m_plus": it_plus},
        epsilon=eps,
        stopping_criterion=crit_up if crit_up == crit_dn else f"{crit_up}/{crit_dn}")
    _check_equilibrium_set(out)
    return out


def _check_equilibrium_set(es: EquilibriumSet) -> None:
    if np.any(es.phi_m > es.phi_M + 1e-8):
        raise RuntimeError("extremal equilibria lost their ordering")
    for name, vec in (("phi_m", es.phi_m), ("phi_M", es.phi_M)):
        if np.any(np.abs(vec) > es.phi + 1e-8):
            raise RuntimeError(f"{name} escapes the envelope")
    if any(r > 1e-8 for r in es.residuals.values()):
        raise RuntimeError("equilibrium residual above tolerance")


def _minimal_nonnegative(op, f, tol, k_window):
    if float(np.max(np.abs(f.g0))) == 0.0:
        return np.zeros(op.n), 0
    u, blocks, _ = _monotone_orbit(op, f, np.zeros(op.n), +1, tol, k_window)
    return newton_refine(op, f, u), blocks


def minimal_nonnegative_equilibrium(op: NonlocalOperator, f: Reaction,
                                    tol: float = 1e-9) -> np.ndarray:
    """Monotone limit from u0 = 0; zero itself when f(·,0) vanishes."""
    if np.any(f.g0 < -1e-14):
        raise ValueError("needs f(·,0) >= 0 so that 0 is a subsolution")
    vec, _ = _minimal_nonnegative(op, f, tol, _orbit_window(op, f))
    return vec


def _orbit_window(op: NonlocalOperator, f: Reaction, pad: float = 1.0) -> float:
    """Truncation level covering every monotone orbit inside the envelope."""
    c_eff, d_vec, phi = _envelope(op, f)
    c1 = float(np.max(c_eff)) + float(np.max(np.abs(op.h0 - op.h)))
    m_start = float(np.max(np.abs(phi))) + pad
    level = supersolution_ode(c1, float(np.max(d_vec)), m_start, 1.0).level
    return max(m_start, level) * (1 + 1e-9) + 1e-9


def minimal_positive_equilibrium(op: NonlocalOperator, f: Reaction, m_lower,
                                 s0: float, tol: float = 1e-8) -> Optional[np.ndarray]:
    """Minimal positive equilibrium when 0 is linearly unstable.

    Requires f(x,s) >= M(x)s on [0, s0] (grid-checked) and a positive
    spectral bound of K - hI + MI with principal eigenfunction φ̃ > 0;
    small multiples of φ̃ are then subsolutions and their monotone limits
    agree as the multiple shrinks, evidencing minimality.  Returns None
    when the spectral bound is not positive.
    """
    if s0 <= 0:
        raise ValueError("s0 must be positive")
    m_lower = np.broadcast_to(np.asarray(m_lower, dtype=float), (op.n,))
    grid = np.linspace(0.0, s0, 65)
    smat = np.broadcast_to(grid, (op.n, grid.size))
    if np.max(m_lower[:, None] * smat - f.eval_grid(smat)) > 1e-12 * (1.0 + s0):
        raise ValueError("f(x,s) >= M(x)s fails on [0, s0]")
    rep = principal_value(build_operator(op.kernel, op.h - m_lower), method="auto")
    if rep.lam <= 0 or not rep.is_principal:
        return None
    phi_t = rep.eigenfunction  # sup-normalized, positive
    gamma = 0.5 * min(s0, s0 / float(np.max(phi_t)))
    k_window = _orbit_window(op, f)

    limits: List[np.ndarray] = []
    for level in (gamma, gamma / 2, gamma / 4, gamma / 8):
        u, _, _ = _monotone_orbit(op, f, level * phi_t, +1, tol, k_window)
        limits.append(newton_refine(op, f, u))
    worst = max(float(np.max(np.abs(limits[0] - other))) for other in limits[1:])
    if worst > 10 * tol:
        raise RuntimeError(
            f"limits from shrinking starts disagree by {worst:.3e}: minimality not evidenced")
    if np.min(limits[0]) <= 0:
        raise RuntimeError("limit is not strictly positive")
    return limits[0]


# ---------------------------------------------------------------------------
# piecewise-constant equilibria for the constant kernel


def _cubic_roots(lam: float, omega: float, a_level: float) -> np.ndarray:
    """Real roots of (|Ω|-λ)u + λu³ = A, ascending."""
    roots = np.roots([lam, 0.0, omega - lam, -a_level])
    real = roots[np.abs(roots.imag) < 1e-9].real
    return np.sort(real)


def piecewise_constant_family(space: MeasureSpace, lambda_param: float,
                              a_level: float, measures, assignment) -> PiecewiseEquilibrium:
    """Piecewise-constant equilibrium of the constant-kernel cubic system.

    For J ≡ 1 the stationary states with values among the roots of
    (|Ω|-λ)u + λu³ = A are equilibria whenever the assignment's part
    measures balance ∫u = A; the residual is validated to quadrature
    exactness (midpoint rule is exact for piecewise constants).
    """
    omega = space.total_measure
    roots = _cubic_roots(lambda_param, omega, a_level)
    if roots.size != 3 or np.min(np.diff(roots)) <= 1e-12:
        raise ValueError("the cubic must have three distinct real roots")
    measures = tuple(float(m) for m in measures)
    if abs(sum(measures) - omega) > 1e-12 * max(1.0, omega):
        raise ValueError("part measures must add up to the total measure")
    mean = float(np.dot(roots, measures))
    if abs(mean - a_level) > 1e-12 * max(1.0, abs(a_level), float(np.max(np.abs(roots)))):
        raise ValueError(
            f"measure constraint violated: sum(values*measures) = {mean:.6g} != {a_level:.6g}")
    assignment = np.asarray(assignment, dtype=int)
    if assignment.shape != (space.n,) or assignment.min() < 0 or assignment.max() > 2:
        raise ValueError("assignment must map every node to a part in {0,1,2}")
    for part in range(3):
        got = float(np.sum(space.weights[assignment == part]))
        if abs(got - measures[part]) > 1e-12 * max(1.0, omega):
            raise ValueError(f"assignment realizes measure {got:.6g} for part {part}, "
                             f"need {measures[part]:.6g}")
    u = roots[assignment]
    mass = float(np.sum(space.weights * u))
    f0 = lambda_param * u * (1.0 - u * u)
    res = float(np.max(np.abs(mass - omega * u + f0)))
    if res > 1e-12 * max(1.0, omega * float(np.max(np.abs(roots)))):
        raise RuntimeError(f"stationary residual {res:.3e} above quadrature exactness")
    return PiecewiseEquilibrium(values=tuple(roots), measures=measures,
                                a_level=a_level, assignment=assignment, residual=res)


def block_assignment(space: MeasureSpace, measures) -> np.ndarray:
    """Contiguous assignment realizing the part measures exactly."""
    w = space.weights
    out = np.empty(space.n, dtype=int)
    targets = list(measures)
    part = 0
    acc = 0.0
    for i in range(space.n):
        if part < 2 and acc + w[i] > targets[part] + 1e-12:
            part += 1
            acc = 0.0
        out[i] = part
        acc += w[i]
    for p in range(3):
        got = float(np.sum(w[out == p]))
        if abs(got - targets[p]) > 1e-12 * max(1.0, space.total_measure):
            raise ValueError("measures are not realizable by whole cells")
    return out


def perturbed_assignment(space: MeasureSpace, assignment, swaps: int,
                         seed: int = 0) -> np.ndarray:
    """Swap node labels across parts without changing any part measure.

    Only equal-weight nodes swap, so the measures are preserved exactly.
    """
    rng = np.random.default_rng(seed)
    out = np.array(assignment, dtype=int)
    w = space.weights
    done = 0
    attempts = 0
    while done < swaps and attempts < 100 * swaps:
        attempts += 1
        i, j = rng.integers(0, space.n, size=2)
        if out[i] != out[j] and abs(w[i] - w[j]) < 1e-15:
            out[i], out[j] = out[j], out[i]
            done += 1
    if done < swaps:
        raise ValueError("could not realize the requested number of swaps")
    return out


# ---------------------------------------------------------------------------
# uniqueness / global-stability experiment


@dataclass
class UniquenessReport:
    phi_M: np.ndarray
    distances: List[float]      # endpoint sup-distance from phi_M per trial
    trivial: List[bool]         # trials pinned at zero (zero datum, f(·,0)=0)
    all_agree: bool
    tol: float


def uniqueness_experiment(op: NonlocalOperator, f: Reaction, trial_data,
                          t_end: float, tol: float = 1e-4,
                          dt: float = 1e-2) -> UniquenessReport:
    """Evolve several nonnegative data and report convergence to φ_M.

    The hypotheses of the uniqueness theorem (symmetric kernel, strictly
    decreasing f(x,s)/s, nonnegative f(·,0)) are checked up front;
    non-agreement is reported, never silently asserted.
    """
    if not op.kernel.symmetric:
        raise ValueError("uniqueness experiment needs a symmetric kernel")
    if np.any(f.g0 < -1e-14):
        raise ValueError("uniqueness experiment needs f(·,0) >= 0")
    if not f_over_s_decreasing(f, np.logspace(-3, 1, 128)):
        raise ValueError("hypothesis not met: f(x,s)/s is not strictly decreasing")
    es = extremal_equilibria(op, f)
    phi_M = es.phi_M
    zero_reaction = float(np.max(np.abs(f.g0))) == 0.0
    distances: List[float] = []
    trivial: List[bool] = []
    config = IntegratorConfig(scheme="rk4", dt=dt, t_end=t_end,
                              store_every=max(1, int(round(t_end / dt))))
    for u0 in trial_data:
        u0 = np.broadcast_to(np.asarray(u0, dtype=float), (op.n,))
        if np.any(u0 < 0):
            raise ValueError("trial data must be nonnegative")
        is_trivial = zero_reaction and float(np.max(np.abs(u0))) == 0.0
        end = evolve_nonlinear(op, f, u0, config).final()
        distances.append(float(np.max(np.abs(end - phi_M))))
        trivial.append(is_trivial)
    live = [d for d, t in zip(distances, trivial) if not t]
    return UniquenessReport(phi_M=phi_M, distances=distances, trivial=trivial,
                            all_agree=bool(live) and all(d <= tol for d in live),
                            tol=tol)
