"""Reaction terms f(x, s) with their structure metadata.

Reactions evaluate pointwise per node, expose the s-derivative
(analytic or centered finite differences), sampled Lipschitz constants,
truncation by argument clamping, and the structure-bound extraction
f(x,s)s <= C(x)s² + D(x)|s| that drives the envelope machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

FD_STEP = 1e-6
LIP_GRID = 512
SIGN_GRID_LIMIT = 1e6


def _log_grid(lo: float, hi: float, per_decade: int = 12) -> np.ndarray:
    """Symmetric logarithmic s-grid covering [-hi, hi] plus 0, dense near 0."""
    decades = np.log10(hi / lo)
    pos = np.logspace(np.log10(lo), np.log10(hi), int(decades * per_decade) + 2)
    return np.concatenate([-pos[::-1], [0.0], pos])


class Reaction:
    """Base reaction: subclasses implement eval_grid / eval_ds_grid.

    eval_grid takes an (n, k) matrix of s-values and returns f(x_i, s[i, j]);
    everything else (Nemitcky application, Lipschitz sampling, primitives)
    is derived from it.
    """

    kind = "custom"

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes

    def eval_grid(self, smat: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval_ds_grid(self, smat: np.ndarray) -> np.ndarray:
        # centered finite difference with s-scaled step
        step = FD_STEP * (1.0 + np.abs(smat))
        return (self.eval_grid(smat + step) - self.eval_grid(smat - step)) / (2 * step)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Nemitcky lift: F(u)[i] = f(x_i, u_i)."""
        return self.eval_grid(np.asarray(u, dtype=float)[:, None])[:, 0]

    def apply_ds(self, u: np.ndarray) -> np.ndarray:
        return self.eval_ds_grid(np.asarray(u, dtype=float)[:, None])[:, 0]

    def at(self, i: int, s: float) -> float:
        smat = np.zeros((self.n_nodes, 1))
        smat[i, 0] = s
        return float(self.eval_grid(smat)[i, 0])

    @property
    def g0(self) -> np.ndarray:
        return self.apply(np.zeros(self.n_nodes))

    def lip_on(self, k: float) -> float:
        """Sampled Lipschitz constant on [-k, k] (sup of |∂f/∂s| on a grid)."""
        svals = np.linspace(-k, k, LIP_GRID)
        return float(np.max(np.abs(self.eval_ds_grid(np.broadcast_to(svals, (self.n_nodes, LIP_GRID))))))

    def primitive(self, u: np.ndarray) -> np.ndarray:
        """F(x_i, u_i) = ∫_0^{u_i} f(x_i, r) dr by refining composite Simpson."""
        u = np.asarray(u, dtype=float)
        prev = None
        for npan in (8, 16, 32, 64, 128, 256, 512, 1024):
            t = np.linspace(0.0, 1.0, 2 * npan + 1)
            smat = u[:, None] * t[None, :]
            fv = self.eval_grid(smat)
            wts = np.ones(2 * npan + 1)
            wts[1:-1:2] = 4.0
            wts[2:-1:2] = 2.0
            est = (u / (6.0 * npan)) * (fv @ wts)
            if prev is not None and np.max(np.abs(est - prev)) <= 1e-10 * (1.0 + np.max(np.abs(est))):
                return est
            prev = est
        return prev


class CallableReaction(Reaction):
    """Reaction from plain vectorized callables, x-independent by default."""

    def __init__(self, fun: Callable, dfun: Optional[Callable] = None,
                 n_nodes: int = 1, kind: str = "custom", lip: Optional[float] = None):
        super().__init__(n_nodes)
        self.fun = fun
        self.dfun = dfun
        self.kind = kind
        self.lip = lip  # known global Lipschitz constant, beats grid sampling

    def eval_grid(self, smat):
        return self.fun(np.asarray(smat, dtype=float))

    def eval_ds_grid(self, smat):
        if self.dfun is None:
            return super().eval_ds_grid(smat)
        return self.dfun(np.asarray(smat, dtype=float))

    def lip_on(self, k: float) -> float:
        if self.lip is not None:
            return float(self.lip)
        return super().lip_on(k)


class LogisticReaction(Reaction):
    """f(x, s) = g(x) + n(x) s - m(x) |s|^{ρ-1} s with per-node coefficients."""

    kind = "logistic"

    def __init__(self, g, n, m, rho: float, n_nodes: Optional[int] = None):
        size = n_nodes
        for c in (g, n, m):
            arr = np.asarray(c, dtype=float)
            if arr.ndim == 1:
                size = arr.shape[0] if size is None else size
        if size is None:
            raise ValueError("give n_nodes or at least one per-node coefficient vector")
        super().__init__(size)
        self.g = np.broadcast_to(np.asarray(g, dtype=float), (size,)).copy()
        self.ncoef = np.broadcast_to(np.asarray(n, dtype=float), (size,)).copy()
        self.m = np.broadcast_to(np.asarray(m, dtype=float), (size,)).copy()
        if np.any(self.m < 0):
            raise ValueError("damping coefficient m must be nonnegative")
        if rho <= 1:
            raise ValueError("exponent rho must exceed 1")
        self.rho = float(rho)

    def eval_grid(self, smat):
        s = np.asarray(smat, dtype=float)
        return self.g[:, None] + self.ncoef[:, None] * s - self.m[:, None] * np.abs(s) ** (self.rho - 1) * s

    def eval_ds_grid(self, smat):
        s = np.asarray(smat, dtype=float)
        return self.ncoef[:, None] - self.rho * self.m[:, None] * np.abs(s) ** (self.rho - 1)

    def lip_on(self, k: float) -> float:
        # |∂f/∂s| = |n - ρ m |s|^{ρ-1}| is monotone in |s|: extremes at 0 and k
        end = np.abs(self.ncoef - self.rho * self.m * k ** (self.rho - 1))
        return float(max(np.max(np.abs(self.ncoef)), np.max(end)))

    def primitive(self, u):
        s = np.asarray(u, dtype=float)
        return self.g * s + 0.5 * self.ncoef * s * s - self.m * np.abs(s) ** (self.rho + 1) / (self.rho + 1)


class TruncatedReaction(Reaction):
    """f_k(x, s) = f(x, clamp(s, -k, k)): agrees with f on |s| <= k and is
    globally Lipschitz with the window's constant."""

    kind = "globally_lipschitz"

    def __init__(self, base: Reaction, k: float):
        super().__init__(base.n_nodes)
        self.base = base
        self.k = float(k)

    def eval_grid(self, smat):
        return self.base.eval_grid(np.clip(smat, -self.k, self.k))

    def eval_ds_grid(self, smat):
        s = np.asarray(smat, dtype=float)
        inside = np.abs(s) <= self.k
        return np.where(inside, self.base.eval_ds_grid(np.clip(s, -self.k, self.k)), 0.0)

    def lip_on(self, k: float) -> float:
        return self.base.lip_on(min(k, self.k))

    def primitive(self, u):
        u = np.asarray(u, dtype=float)
        clamped = np.clip(u, -self.k, self.k)
        inner = self.base.primitive(clamped)
        # outside the window the integrand is frozen at the edge value
        edge = np.where(u >= 0, self.k, -self.k)
        excess = np.where(np.abs(u) > self.k, (u - edge) * self.base.apply(edge), 0.0)
        return inner + excess


class ShiftedReaction(Reaction):
    """f(x, s) + bump(x): ordered pair generator for comparison experiments."""

    def __init__(self, base: Reaction, bump):
        super().__init__(base.n_nodes)
        self.base = base
        self.bump = np.broadcast_to(np.asarray(bump, dtype=float), (base.n_nodes,)).copy()
        self.kind = base.kind

    def eval_grid(self, smat):
        return self.base.eval_grid(smat) + self.bump[:, None]

    def eval_ds_grid(self, smat):
        return self.base.eval_ds_grid(smat)

    def lip_on(self, k):
        return self.base.lip_on(k)

    def primitive(self, u):
        return self.base.primitive(u) + self.bump * np.asarray(u, dtype=float)


class PotentialAbsorbedReaction(Reaction):
    """f(x, s) - h(x) s: folds the potential into the reaction, which is the
    h = 0 normal form the asymptotic machinery works in."""

    def __init__(self, base: Reaction, h):
        super().__init__(base.n_nodes)
        self.base = base
        self.h = np.broadcast_to(np.asarray(h, dtype=float), (base.n_nodes,)).copy()
        self.kind = base.kind

    def eval_grid(self, smat):
        return self.base.eval_grid(smat) - self.h[:, None] * np.asarray(smat, dtype=float)

    def eval_ds_grid(self, smat):
        return self.base.eval_ds_grid(smat) - self.h[:, None]

    def lip_on(self, k):
        return self.base.lip_on(k) + float(np.max(np.abs(self.h)))

    def primitive(self, u):
        u = np.asarray(u, dtype=float)
        return self.base.primitive(u) - 0.5 * self.h * u * u


def truncate(f: Reaction, k: float) -> TruncatedReaction:
    if k <= 0:
        raise ValueError("truncation level must be positive")
    return TruncatedReaction(f, k)


def absorb_potential(f: Reaction, h) -> Reaction:
    """f(x,s) - h(x)s; stays in the logistic family when f does."""
    if isinstance(f, LogisticReaction):
        return LogisticReaction(f.g, f.ncoef - np.asarray(h, dtype=float), f.m, f.rho,
                                n_nodes=f.n_nodes)
    return PotentialAbsorbedReaction(f, h)


def add_bump(f: Reaction, bump) -> Reaction:
    """f(x,s) + bump(x) with bump >= 0; the ordered-pair generator."""
    bump = np.asarray(bump, dtype=float)
    if np.any(bump < 0):
        raise ValueError("bump must be nonnegative to preserve ordering")
    if isinstance(f, LogisticReaction):
        return LogisticReaction(f.g + bump, f.ncoef, f.m, f.rho, n_nodes=f.n_nodes)
    return ShiftedReaction(f, bump)


def monotone_shift(f: Reaction, k: float) -> float:
    """Shift β making s ↦ f(x,s) + βs increasing on [-k, k].

    Any upper bound works; cheapness beats sharpness, so the infimum of
    the derivative is sampled on a 512-point grid (linear plus a
    log-spaced refinement near 0) and padded by 1.
    """
    lin = np.linspace(-k, k, LIP_GRID)
    logp = np.logspace(-8, np.log10(max(k, 1e-8)), LIP_GRID // 4)
    svals = np.unique(np.concatenate([lin, logp, -logp]))
    dmin = float(np.min(f.eval_ds_grid(np.broadcast_to(svals, (f.n_nodes, svals.size)))))
    return max(0.0, -dmin) + 1.0


@dataclass(frozen=True)
class StructureBounds:
    """Coefficients with f(x,s)s <= c(x)s² + d(x)|s| on the sampled grid."""

    c: np.ndarray
    d: np.ndarray
    strategy: str


def young_constant(eps: float, rho: float) -> float:
    """Smallest C with a·t <= eps·t^ρ + C·a^{ρ'} for all a, t >= 0."""
    rho_p = rho / (rho - 1.0)
    return (eps * rho) ** (-rho_p / rho) / rho_p


def _validate_structure(f: Reaction, c: np.ndarray, d: np.ndarray) -> None:
    grid = _log_grid(1e-6, SIGN_GRID_LIMIT)
    smat = np.broadcast_to(grid, (f.n_nodes, grid.size))
    lhs = f.eval_grid(smat) * smat
    rhs = c[:, None] * smat * smat + d[:, None] * np.abs(smat)
    slack = lhs - rhs
    if np.max(slack) > 1e-9 * (1.0 + np.max(np.abs(rhs))):
        raise ValueError("structure inequality fails on the sampled grid (wrong constants)")


def structure_bounds(f: Reaction, strategy: str = "plain", a: float = 0.0,
                     mask=None) -> StructureBounds:
    """Extract (C, D) with f(x,s)s <= C(x)s² + D(x)|s|.

    plain: logistic takes C = n, D = |g|; globally Lipschitz reactions
    take C = Lipschitz constant, D = |f(·,0)|.
    young_shift(a): logistic with m >= m0 > 0; trades C = n - a against
    D = |g| + C_eps a^{ρ'} via Young's inequality with eps = m0/2.
    partitioned(a, mask): plain outside the mask, shifted inside; needs
    m > 0 on the masked part.
    """
    n_nodes = f.n_nodes
    if strategy == "plain":
        if isinstance(f, LogisticReaction):
            c, d = f.ncoef.copy(), np.abs(f.g)
        elif isinstance(f, TruncatedReaction):
            # frozen tails force c >= 0; the window sup of |f| covers them
            grid = np.linspace(-f.k, f.k, LIP_GRID)
            smat = np.broadcast_to(grid, (n_nodes, grid.size))
            c = np.maximum(np.max(f.eval_ds_grid(smat), axis=1), 0.0)
            d = np.max(np.abs(f.eval_grid(smat)), axis=1)
        else:
            # mean value theorem: f(s)s <= |f(·,0)||s| + (sup ∂f/∂s) s²
            grid = _log_grid(1e-6, SIGN_GRID_LIMIT)
            smat = np.broadcast_to(grid, (n_nodes, grid.size))
            c = np.max(f.eval_ds_grid(smat), axis=1)
            d = np.abs(f.g0)
        sb = StructureBounds(c=c, d=d, strategy="plain")
    elif strategy == "young_shift":
        if not isinstance(f, LogisticReaction):
            raise ValueError("young_shift needs a logistic reaction")
        if a <= 0:
            raise ValueError("young_shift needs a positive shift")
        m0 = float(np.min(f.m))
        if m0 <= 0:
            raise ValueError("young_shift needs m bounded below by m0 > 0")
        eps = m0 / 2.0
        rho_p = f.rho / (f.rho - 1.0)
        ce = young_constant(eps, f.rho)
        sb = StructureBounds(c=f.ncoef - a, d=np.abs(f.g) + ce * a ** rho_p,
                             strategy=f"young_shift(A={a})")
    elif strategy == "partitioned":
        if not isinstance(f, LogisticReaction):
            raise ValueError("partitioned bounds need a logistic reaction")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n_nodes,) or not np.any(mask):
            raise ValueError("partitioned bounds need a nonempty mask")
        if a <= 0:
            raise ValueError("partitioned bounds need a positive shift")
        m0 = float(np.min(f.m[mask]))
        if m0 <= 0:
            raise ValueError("m must be positive on the masked part")
        eps = m0 / 2.0
        rho_p = f.rho / (f.rho - 1.0)
        ce = young_constant(eps, f.rho)
        c = f.ncoef.copy()
        d = np.abs(f.g)
        c[mask] -= a
        d = d + np.where(mask, ce * a ** rho_p, 0.0)
        sb = StructureBounds(c=c, d=d, strategy=f"partitioned(A={a})")
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    _validate_structure(f, sb.c, sb.d)
    return sb


def check_sign_condition(f: Reaction, c: float, d: float, s_grid) -> bool:
    """True iff f(x_i, s) s <= c s² + d |s| on the grid (relative tol 1e-9)."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    grid = np.asarray(s_grid, dtype=float)
    smat = np.broadcast_to(grid, (f.n_nodes, grid.size))
    lhs = f.eval_grid(smat) * smat
    rhs = c * smat * smat + d * np.abs(smat)
    return bool(np.max(lhs - rhs) <= 1e-9 * (1.0 + np.max(np.abs(rhs))))


def f_over_s_decreasing(f: Reaction, s_grid) -> bool:
    """True iff f(x_i, s)/s is strictly decreasing along the positive grid."""
    grid = np.asarray(s_grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly positive and increasing")
    smat = np.broadcast_to(grid, (f.n_nodes, grid.size))
    ratios = f.eval_grid(smat) / smat
    return bool(np.all(np.diff(ratios, axis=1) < -1e-12))


@dataclass
class GrowthReport:
    beta: np.ndarray            # per-node sup of ∂f/∂s on the grid
    growth_constant: float      # smallest C with |∂f/∂s| <= C(1+|s|^{ρ-1}) on the grid
    violation: bool
    note: str = ""


def growth_hypotheses_check(f: Reaction, rho: float, s_grid) -> GrowthReport:
    """Fit the derivative bounds ∂f/∂s <= β(x) and |∂f/∂s| <= C(1+|s|^{ρ-1}).

    A violation is flagged when the derivative is non-finite on the grid
    or the fitted constant keeps growing with the window (the tail is
    not of polynomial order ρ-1).
    """
    if rho <= 1:
        raise ValueError("rho must exceed 1")
    grid = np.asarray(s_grid, dtype=float)
    smat = np.broadcast_to(grid, (f.n_nodes, grid.size))
    dfv = f.eval_ds_grid(smat)
    if not np.all(np.isfinite(dfv)):
        return GrowthReport(beta=np.full(f.n_nodes, np.inf), growth_constant=np.inf,
                            violation=True, note="derivative overflows on the grid")
    beta = np.max(dfv, axis=1)
    envelope = 1.0 + np.abs(grid) ** (rho - 1.0)
    ratios = np.abs(dfv) / envelope[None, :]
    c_full = float(np.max(ratios))
    smax = float(np.max(np.abs(grid)))
    inner = np.abs(grid) <= smax / 2.0
    c_inner = float(np.max(ratios[:, inner])) if np.any(inner) else c_full
    violation = c_full > 10.0 * max(c_inner, 1e-300)
    note = "fitted constant grows with the window" if violation else ""
    return GrowthReport(beta=beta, growth_constant=c_full, violation=violation, note=note)
