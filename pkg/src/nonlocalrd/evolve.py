"""Time integration of the nonlocal problems.

The order-preserving explicit scheme euler_op is the structural
workhorse: under the step-size condition dt·max(h+β) <= 1 every update
is a nonnegative combination of monotone maps, so comparison and
maximum principles hold exactly in floating point.  rk4 is the accuracy
workhorse, and vcf_exact_linear propagates the linear part exactly with
the nonlinearity frozen per step.  Blow-up is a first-class outcome.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import expm

from nonlocalrd.kernel import Kernel, NonlocalOperator, apply_K
from nonlocalrd.reaction import (
    LogisticReaction,
    Reaction,
    monotone_shift,
    structure_bounds,
    truncate,
)

SCHEMES = ("euler_op", "rk4", "vcf_exact_linear")
TRUNC_CAP = 1e9  # beyond this a derived truncation level is useless


@dataclass
class IntegratorConfig:
    scheme: str = "rk4"
    dt: float = 1e-3
    t_end: float = 1.0
    beta: Optional[float] = None        # monotone shift; derived when None
    blowup_threshold: float = 1e9
    store_every: int = 1
    trunc_k: Optional[float] = None     # truncation level override

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.store_every < 1:
            raise ValueError("store_every must be >= 1")

    def check_monotone_dt(self, h: np.ndarray, beta: float) -> None:
        """The discrete-monotonicity condition dt·max(h+β) <= 1."""
        top = float(np.max(h + beta))
        if top > 0 and self.dt * top > 1.0 + 1e-12:
            raise ValueError(
                f"euler_op step too large: dt*max(h+beta) = {self.dt * top:.3g} > 1")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n)
    scheme: str
    dt: float
    metadata: dict = field(default_factory=dict)

    @property
    def blowup(self) -> bool:
        return bool(self.metadata.get("blowup", False))

    def final(self) -> np.ndarray:
        return self.states[-1]


def _nsteps(dt: float, t_end: float) -> int:
    n = int(round(t_end / dt))
    if n < 1 or abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("dt must divide t_end")
    return n


def linear_semigroup_apply(op: NonlocalOperator, t: float, u0: np.ndarray) -> np.ndarray:
    """e^{amat·t} u0 via scaling-and-squaring; t may be negative (group)."""
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (op.n,):
        raise ValueError("state length mismatch")
    return expm(op.amat * t) @ u0


def _auto_structure(op: NonlocalOperator, f: Reaction):
    """Structure bounds used for automatic truncation.

    Logistic reactions with m bounded away from 0 take the Young-shifted
    bounds with A big enough that the growth coefficient is negative, so
    the scalar bound stays bounded in time; everything else uses the
    plain bounds.
    """
    corr = float(np.max(np.abs(op.h0 - op.h)))
    if isinstance(f, LogisticReaction) and float(np.min(f.m)) > 0:
        a = max(0.0, float(np.max(f.ncoef))) + corr + 1.0
        sb = structure_bounds(f, "young_shift", a=a)
    else:
        sb = structure_bounds(f, "plain")
    return float(np.max(sb.c)) + corr, float(np.max(sb.d))


def _prepare_monotone(op: NonlocalOperator, f: Reaction, u0: np.ndarray,
                      config: IntegratorConfig):
    """Truncation level and monotone shift for the order-preserving scheme."""
    if config.trunc_k is not None:
        k = float(config.trunc_k)
    elif f.kind == "globally_lipschitz":
        k = None
    else:
        c1, d1 = _auto_structure(op, f)
        bound = supersolution_ode(c1, d1, float(np.max(np.abs(u0))), config.t_end)
        k = bound.level * (1.0 + 1e-9) + 1e-9
        if not math.isfinite(k) or k > TRUNC_CAP:
            raise ValueError(
                "derived truncation level is unusable; supply trunc_k explicitly")
    f_used = truncate(f, k) if k is not None else f
    if config.beta is not None:
        beta = float(config.beta)
    else:
        window = k if k is not None else max(1e3, 10.0 * float(np.max(np.abs(u0))) + 1.0)
        beta = monotone_shift(f_used, window)
    return f_used, beta, k


def monotone_config(op: NonlocalOperator, f: Reaction, u0: np.ndarray,
                    t_end: float, trunc_k: Optional[float] = None,
                    beta: Optional[float] = None,
                    store_every: Optional[int] = None) -> IntegratorConfig:
    """euler_op configuration with the largest uniform dt dividing t_end
    that satisfies the discrete-monotonicity condition."""
    probe = IntegratorConfig(scheme="euler_op", dt=t_end, t_end=t_end,
                             beta=beta, trunc_k=trunc_k)
    _, beta_used, k = _prepare_monotone(op, f, np.asarray(u0, dtype=float), probe)
    top = max(float(np.max(op.h)) + beta_used, 0.0)
    nsteps = int(math.ceil(t_end * top + 1e-12)) + 1
    return IntegratorConfig(scheme="euler_op", dt=t_end / nsteps, t_end=t_end,
                            beta=beta_used, trunc_k=k,
                            store_every=store_every if store_every is not None else 1)


def evolve_nonlinear(op: NonlocalOperator, f: Reaction, u0: np.ndarray,
                     config: IntegratorConfig) -> Trajectory:
    """Integrate u_t = amat·u + f(x, u) and record the sampled orbit.

    euler_op truncates locally Lipschitz reactions at the level the
    scalar supersolution bound provides over [0, t_end]; rk4 and the
    exponential-Euler scheme integrate the raw reaction and flag blow-up
    when the sup norm passes the threshold or a step goes non-finite.
    """
    u = np.array(u0, dtype=float)
    if u.shape != (op.n,):
        raise ValueError("initial state length mismatch")
    nsteps = _nsteps(config.dt, config.t_end)
    dt = config.dt
    meta = {"scheme": config.scheme, "blowup": False, "blowup_time": None,
            "beta": None, "trunc_k": None}

    if config.scheme == "euler_op":
        f_used, beta, k = _prepare_monotone(op, f, u0, config)
        config.check_monotone_dt(op.h, beta)
        meta["beta"], meta["trunc_k"] = beta, k
        kw = op.amat + np.diag(op.h)  # jmat @ diag(w), the positive part
        decay = 1.0 - dt * (op.h + beta)

        def step(v):
            return decay * v + dt * (kw @ v) + dt * (f_used.apply(v) + beta * v)
    elif config.scheme == "rk4":
        def rhs(v):
            return op.amat @ v + f.apply(v)

        def step(v):
            k1 = rhs(v)
            k2 = rhs(v + 0.5 * dt * k1)
            k3 = rhs(v + 0.5 * dt * k2)
            k4 = rhs(v + dt * k3)
            return v + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:  # vcf_exact_linear
        beta = float(config.beta) if config.beta is not None else 0.0
        meta["beta"] = beta
        n = op.n
        aug = np.zeros((2 * n, 2 * n))
        aug[:n, :n] = (op.amat - beta * np.eye(n)) * dt
        aug[:n, n:] = np.eye(n) * dt
        eaug = expm(aug)
        emat, phi1 = eaug[:n, :n], eaug[:n, n:]

        def step(v):
            return emat @ v + phi1 @ (f.apply(v) + beta * v)

    times = [0.0]
    states = [u.copy()]
    steps_idx = [0]
    for m in range(1, nsteps + 1):
        u = step(u)
        t = m * dt
        finite = bool(np.all(np.isfinite(u)))
        if not finite or np.max(np.abs(u)) > config.blowup_threshold:
            meta["blowup"] = True
            meta["blowup_time"] = t
            if finite:
                times.append(t)
                states.append(u.copy())
                steps_idx.append(m)
            break
        if m % config.store_every == 0 or m == nsteps:
            times.append(t)
            states.append(u.copy())
            steps_idx.append(m)
    meta["steps"] = np.asarray(steps_idx, dtype=int)
    return Trajectory(times=np.asarray(times), states=np.asarray(states),
                      scheme=config.scheme, dt=dt, metadata=meta)


# ---------------------------------------------------------------------------
# scalar supersolution bound


@dataclass(frozen=True)
class SupersolutionBound:
    """Solution of ż = c z + d, z(0) = m0, with its truncation level.

    z is monotone, so the level sup_{[0,t_end]} z is max(z(0), z(t_end)).
    """

    c: float
    d: float
    m0: float
    t_end: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.c == 0.0:
            out = self.m0 + self.d * t
        else:
            with np.errstate(over="ignore"):
                out = (self.m0 + self.d / self.c) * np.exp(self.c * t) - self.d / self.c
        return float(out) if out.ndim == 0 else out

    @property
    def level(self) -> float:
        return float(max(self(0.0), self(self.t_end)))


def supersolution_ode(c: float, d: float, m0: float, t_end: float) -> SupersolutionBound:
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    return SupersolutionBound(c=float(c), d=float(d), m0=float(m0), t_end=float(t_end))


# ---------------------------------------------------------------------------
# Picard iteration on the shifted variation-of-constants formula


@dataclass
class PicardResult:
    times: np.ndarray
    states: np.ndarray          # final iterate on the mesh
    distances: List[float]      # successive sup-distances between iterates
    contraction_factor: float   # reported q < 1
    beta: float


def _cumulative_weights(j: int) -> np.ndarray:
    """Newton-Cotes weights (units of the mesh step) for ∫_0^{t_j}."""
    if j == 0:
        return np.zeros(1)
    if j == 1:
        return np.array([0.5, 0.5])
    w = np.zeros(j + 1)
    if j % 2 == 0:
        w[0] = w[j] = 1.0 / 3.0
        w[1:j:2] = 4.0 / 3.0
        w[2:j:2] = 2.0 / 3.0
    else:
        head = _cumulative_weights(j - 3)  # even part
        w[: j - 2] += head
        w[j - 3:] += np.array([1.0, 3.0, 3.0, 1.0]) * (3.0 / 8.0)
    return w


def picard_solve(op: NonlocalOperator, f: Reaction, u0: np.ndarray, tau: float,
                 iters: int = 20, n_sub: int = 64) -> PicardResult:
    """Fixed-point iteration for the solution on [0, tau].

    Iterates u ↦ e^{(L-βI)t} u0 + ∫_0^t e^{(L-βI)(t-s)} (f(u(s)) + βu(s)) ds
    with the integral by composite Simpson on the stored mesh.  The
    contraction factor q = tau·(Lip(f)+β)·sup‖e^{(L-βI)s}‖ is computed
    and reported; tau must keep it below 1.
    """
    if f.kind != "globally_lipschitz":
        raise ValueError("picard iteration needs a globally Lipschitz reaction")
    if tau <= 0:
        raise ValueError("tau must be positive")
    u0 = np.asarray(u0, dtype=float)
    n = op.n
    lip = f.lip_on(1e6)
    beta = monotone_shift(f, 1e6)
    delta = tau / n_sub
    e1 = expm((op.amat - beta * np.eye(n)) * delta)
    powers = [np.eye(n)]
    for _ in range(n_sub):
        powers.append(e1 @ powers[-1])
    sup_norm = max(float(np.max(np.sum(np.abs(p), axis=1))) for p in powers)
    q = tau * (lip + beta) * sup_norm
    if q >= 1.0:
        raise ValueError(f"tau too large: contraction factor q = {q:.3g} >= 1")

    times = delta * np.arange(n_sub + 1)
    cur = np.tile(u0, (n_sub + 1, 1))
    weights = [_cumulative_weights(j) for j in range(n_sub + 1)]
    distances: List[float] = []
    for it in range(iters):
        gvals = f.eval_grid(cur.T).T + beta * cur  # g(s_i) rows
        nxt = np.empty_like(cur)
        for j in range(n_sub + 1):
            acc = powers[j] @ u0
            wj = weights[j]
            for i in range(j + 1):
                if wj[i] != 0.0:
                    acc = acc + delta * wj[i] * (powers[j - i] @ gvals[i])
            nxt[j] = acc
        dist = float(np.max(np.abs(nxt - cur)))
        distances.append(dist)
        cur = nxt
        if dist <= 1e-14 * (1.0 + np.max(np.abs(cur))):
            break
        if len(distances) >= 2 and distances[-1] > distances[-2] and dist > 1e-12:
            raise RuntimeError("picard iterate distances stopped decreasing")
    return PicardResult(times=times, states=cur, distances=distances,
                        contraction_factor=q, beta=beta)


# ---------------------------------------------------------------------------
# envelope, energy, blow-up witness


def envelope_U(op_c: NonlocalOperator, d, u0, times) -> np.ndarray:
    """Envelope U(t) = Φ + e^{(K+CI)t} (|u0| - Φ) at the requested times.

    op_c must be the operator with potential -C(x) so amat = K + CI, and
    its spectral bound must be negative for the Φ solve to make sense.
    """
    from nonlocalrd.equilibria import solve_phi
    from nonlocalrd.spectral import principal_value

    lam = principal_value(op_c, method="dense").lam
    if lam >= 0:
        raise ValueError(f"envelope needs a negative spectral bound, got {lam:.3g}")
    d = np.asarray(d, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    phi = solve_phi(op_c.kernel, -op_c.h, d)
    gap0 = np.abs(u0) - phi
    out = np.empty((len(times), op_c.n))
    for i, t in enumerate(times):
        out[i] = phi + expm(op_c.amat * float(t)) @ gap0
    return out


def lyapunov_E(kernel: Kernel, f: Reaction, u: np.ndarray) -> float:
    """Energy decreasing along trajectories of u_t = Ku + f(x, u).

    E(u) = -½ <u, Ku>_w - Σ w_i F(x_i, u_i) with F the s-primitive of f;
    its gradient is -w·(Ku + f(u)), so dE/dt = -∫ |u_t|² along smooth
    trajectories and E is stationary exactly at equilibria.
    """
    if not kernel.symmetric:
        raise ValueError("the energy functional needs a symmetric kernel")
    u = np.asarray(u, dtype=float)
    w = kernel.space.weights
    ku = apply_K(kernel, u)
    return float(-0.5 * np.sum(w * u * ku) - np.sum(w * f.primitive(u)))


def bernoulli_blowup_time(a: float, rho: float, z0: float) -> Optional[float]:
    """Blow-up time of ż = a z + z^ρ, z(0) = z0 > 0 (None if global).

    Substituting v = z^{1-ρ} linearizes the equation; the level v = 0 is
    reached at t = ln(1 + a z0^{1-ρ}) / (a (ρ-1)) whenever that is a
    positive number.
    """
    if z0 <= 0:
        return None
    if a == 0.0:
        return z0 ** (1.0 - rho) / (rho - 1.0)
    arg = 1.0 + a * z0 ** (1.0 - rho)
    if arg <= 0:
        return None  # the linear decay wins
    t = math.log(arg) / (a * (rho - 1.0))
    return t if t > 0 else None


@dataclass
class KaplanWitness:
    times: np.ndarray
    z: np.ndarray               # eigenfunction-weighted mass of the trajectory
    comparison: np.ndarray      # scalar ODE ż = (Λ - max|h|) z + z^ρ
    dominated: bool             # z >= comparison at stored times (within tol)
    lam: float
    eigenfunction: np.ndarray
    blowup_time_estimate: Optional[float]


def kaplan_witness(kernel: Kernel, h, rho: float, trajectory: Trajectory,
                   tol: float = 1e-6) -> KaplanWitness:
    """Project a trajectory on the principal eigenfunction of K and compare
    with the scalar lower-bound ODE whose blow-up dooms large data.

    The scalar comparison is integrated with the trajectory's own scheme
    and step so the equality case reproduces exactly.
    """
    from nonlocalrd.kernel import build_operator
    from nonlocalrd.spectral import principal_value

    if not kernel.symmetric:
        raise ValueError("the witness needs a symmetric kernel")
    h = np.asarray(h, dtype=float)
    if h.shape == ():
        h = np.full(kernel.space.n, float(h))
    rep = principal_value(build_operator(kernel, np.zeros(kernel.space.n)), "auto")
    if not rep.is_principal:
        raise ValueError("kernel has no positive principal eigenfunction")
    w = kernel.space.weights
    phi = rep.eigenfunction / float(np.sum(w * rep.eigenfunction))
    zvals = trajectory.states @ (w * phi)

    a = rep.lam - float(np.max(np.abs(h)))
    dt = trajectory.dt

    def rhs(z):
        return a * z + np.sign(z) * np.abs(z) ** rho

    def scalar_step(z):
        if trajectory.scheme == "euler_op":
            return z + dt * rhs(z)
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * dt * k1)
        k3 = rhs(z + 0.5 * dt * k2)
        k4 = rhs(z + dt * k3)
        return z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    steps = trajectory.metadata.get("steps")
    if steps is None:
        steps = np.arange(len(trajectory.times))
    comp = np.empty(len(zvals))
    z = float(zvals[0])
    comp[0] = z
    pos = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(1, int(steps[-1]) + 1):
            z = scalar_step(z)
            if pos < len(steps) and m == steps[pos]:
                comp[pos] = z
                pos += 1
    finite = np.isfinite(comp)
    dominated = bool(np.all(zvals[finite] >= comp[finite] - tol * (1.0 + np.abs(comp[finite]))))
    return KaplanWitness(times=trajectory.times, z=zvals, comparison=comp,
                         dominated=dominated, lam=rep.lam, eigenfunction=phi,
                         blowup_time_estimate=bernoulli_blowup_time(a, rho, float(zvals[0])))


def fit_growth_constant(op: NonlocalOperator, trajectory: Trajectory,
                        margin: float = 0.01) -> float:
    """Smallest M with ‖u(t)‖_∞ <= M e^{(Λ+margin) t} ‖u0‖_∞ on the stored orbit."""
    from nonlocalrd.spectral import principal_value

    lam = principal_value(op, method="dense").lam + margin
    norms = np.max(np.abs(trajectory.states), axis=1)
    base = norms[0]
    if base == 0:
        return 1.0
    return float(np.max(norms / (base * np.exp(lam * trajectory.times))))
