"""Spectral quantities of L = K - hI.

Computes the spectral bound Λ = sup Re σ(K - hI) by dense eigensolve or
by power iteration on the entrywise-nonnegative shift amat + (max h + 1)I,
the Collatz-Wielandt ratio sandwich, the essential range of -h, the
symmetric Rayleigh characterization, the sign-criteria report, and the
potential-shifting experiment on a subdomain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from nonlocalrd.kernel import Kernel, NonlocalOperator, build_operator
from nonlocalrd.space import MeasureSpace

POWER_MAX_ITER = 100_000
POWER_RTOL = 1e-12
PRINCIPAL_FLOOR = 1e-12  # eigenvector entries above this (sup-normalized) count as positive


@dataclass
class SpectralReport:
    lam: float
    eigenfunction: Optional[np.ndarray]
    is_principal: bool
    essential_range: List[Tuple[float, float]]
    method: str
    residual: Optional[float]


@dataclass
class CwBounds:
    """Collatz-Wielandt ratio bounds: lower <= Λ <= upper for any positive test function."""

    lower: float
    upper: float
    test_function: np.ndarray


@dataclass
class CriterionCheck:
    name: str
    holds: bool
    predicted_sign: Optional[str]  # "positive" | "negative" | "zero" | None
    value: Optional[float] = None
    note: str = ""


@dataclass
class SignCriteriaReport:
    """Sign predictions for Λ paired with its computed value.

    Contradictions between a prediction and the computed sign are
    surfaced by comparing the fields, never asserted away.
    """

    m: float
    lam: float
    computed_sign: str
    is_principal: bool
    checks: List[CriterionCheck] = field(default_factory=list)
    inverse_gap_harmonic_sum: Optional[float] = None  # diagnostic only


def _sup_normalize(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return v / v[i]


def _power_iteration(bmat: np.ndarray) -> Tuple[float, np.ndarray, bool]:
    """Spectral radius and Perron vector of an entrywise-nonnegative matrix.

    Returns (rho, vector, converged); converged is False on stagnation
    (reducible or defective cases), which callers resolve densely.
    """
    n = bmat.shape[0]
    x = np.ones(n) / n
    lam = 0.0
    for it in range(POWER_MAX_ITER):
        y = bmat @ x
        norm = np.max(np.abs(y))
        if norm == 0.0:
            return 0.0, x, True  # bmat annihilates the positive cone: rho = 0
        x_new = y / norm
        lam_new = float(x_new @ (bmat @ x_new)) / float(x_new @ x_new)
        if it > 0 and abs(lam_new - lam) <= POWER_RTOL * max(1.0, abs(lam_new)):
            resid = np.max(np.abs(bmat @ x_new - lam_new * x_new))
            if resid <= 1e-9 * max(1.0, abs(lam_new)):
                return lam_new, x_new, True
        x, lam = x_new, lam_new
    return lam, x, False


def _dense_top(amat: np.ndarray) -> Tuple[float, np.ndarray]:
    vals, vecs = np.linalg.eig(amat)
    idx = int(np.argmax(vals.real))
    lam = float(vals.real[idx])
    v = vecs[:, idx]
    if np.max(np.abs(v.imag)) <= 1e-9 * max(1.0, np.max(np.abs(v.real))):
        v = v.real
    else:  # genuinely complex top vector cannot be a principal eigenfunction
        v = np.abs(v)
    return lam, np.asarray(v, dtype=float)


def principal_value(op: NonlocalOperator, method: str = "auto") -> SpectralReport:
    """Λ = sup Re σ(amat) with an eigenfunction when one is positive.

    method "dense" uses the full eigensolver; "power" shifts by
    s = max(h) + 1 so the matrix is entrywise nonnegative and iterates;
    "auto" tries power first and falls back to dense on stagnation.
    """
    if method not in ("dense", "power", "auto"):
        raise ValueError(f"unknown method {method!r}")
    ess = essential_range(op.h, op.space.weights)
    lam = None
    vec = None
    used = method
    if method in ("power", "auto"):
        shift = float(np.max(op.h)) + 1.0
        bmat = op.amat + shift * np.eye(op.n)
        rho, v, converged = _power_iteration(bmat)
        if converged:
            lam, vec, used = rho - shift, v, "power"
        elif method == "power":
            raise RuntimeError("power iteration did not converge; use dense")
    if lam is None:
        lam, vec = _dense_top(op.amat)
        used = "dense"
    phi = _sup_normalize(vec)
    residual = float(np.max(np.abs(op.amat @ phi - lam * phi)))
    is_principal = bool(np.all(phi > PRINCIPAL_FLOOR))
    return SpectralReport(
        lam=float(lam),
        eigenfunction=phi if is_principal else None,
        is_principal=is_principal,
        essential_range=ess,
        method=used,
        residual=residual if is_principal else None,
    )


def cw_bounds(op: NonlocalOperator, phi: np.ndarray) -> CwBounds:
    """inf and sup of (Lφ)_i / φ_i over nodes for a positive test function."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (op.n,):
        raise ValueError("test function length mismatch")
    if np.any(phi <= 0):
        raise ValueError("test function must be strictly positive")
    ratios = (op.amat @ phi) / phi
    return CwBounds(lower=float(np.min(ratios)), upper=float(np.max(ratios)), test_function=phi)


def essential_range(h, weights, tol: float = 1e-12) -> List[Tuple[float, float]]:
    """Clustered values of -h with their aggregate measures.

    At the discrete level the essential range of -h is this finite set;
    values within tol of each other merge into one cluster reported at
    their weighted mean.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    h = np.asarray(h, dtype=float)
    w = np.asarray(weights, dtype=float)
    vals = -h
    order = np.argsort(vals)
    clusters: List[Tuple[float, float]] = []
    cur_vals = [vals[order[0]]]
    cur_ws = [w[order[0]]]
    for idx in order[1:]:
        if vals[idx] - cur_vals[-1] <= tol:
            cur_vals.append(vals[idx])
            cur_ws.append(w[idx])
        else:
            cw = float(np.sum(cur_ws))
            clusters.append((float(np.dot(cur_vals, cur_ws) / cw), cw))
            cur_vals, cur_ws = [vals[idx]], [w[idx]]
    cw = float(np.sum(cur_ws))
    clusters.append((float(np.dot(cur_vals, cur_ws) / cw), cw))
    return clusters


def rayleigh_lambda(kernel: Kernel, h) -> SpectralReport:
    """Λ for symmetric kernels via the weight-symmetrized eigenproblem.

    diag(w)^{1/2} (jmat diag(w) - diag(h)) diag(w)^{-1/2} is symmetric,
    so its top eigenvalue is the max of the energy form over unit
    L²(weights) norm.
    """
    if not kernel.symmetric:
        raise ValueError("rayleigh characterization requires a symmetric kernel")
    space = kernel.space
    n = space.n
    h = np.asarray(h, dtype=float)
    if h.shape == ():
        h = np.full(n, float(h))
    sq = np.sqrt(space.weights)
    smat = sq[:, None] * kernel.jmat * sq[None, :] - np.diag(h)
    smat = 0.5 * (smat + smat.T)
    vals, vecs = np.linalg.eigh(smat)
    lam = float(vals[-1])
    phi = vecs[:, -1] / sq  # back to raw node values
    phi = _sup_normalize(phi)
    op = build_operator(kernel, h)
    residual = float(np.max(np.abs(op.amat @ phi - lam * phi)))
    is_principal = bool(np.all(phi > PRINCIPAL_FLOOR))
    return SpectralReport(
        lam=lam,
        eigenfunction=phi if is_principal else None,
        is_principal=is_principal,
        essential_range=essential_range(h, space.weights),
        method="rayleigh",
        residual=residual if is_principal else None,
    )


def spectral_energy(kernel: Kernel, h, phi: np.ndarray) -> float:
    """Energy form E(φ) = -½ ΣΣ w_i w_j J_ij (φ_j-φ_i)² - Σ w_i (h_i-h0_i) φ_i².

    For symmetric kernels and unit L²(weights) norm this is bounded above
    by Λ, with equality at the principal eigenfunction.
    """
    if not kernel.symmetric:
        raise ValueError("energy form requires a symmetric kernel")
    space = kernel.space
    w = space.weights
    phi = np.asarray(phi, dtype=float)
    h = np.asarray(h, dtype=float)
    if h.shape == ():
        h = np.full(space.n, float(h))
    diff = phi[None, :] - phi[:, None]
    quad = -0.5 * float(np.sum(w[:, None] * w[None, :] * kernel.jmat * diff * diff))
    h0 = kernel.jmat @ w
    return quad - float(np.sum(w * (h - h0) * phi * phi))


def sign_criteria(op: NonlocalOperator) -> SignCriteriaReport:
    """Evaluate the sign criteria for Λ and pair each with the computed sign.

    The discrete set {h = min h} always carries mass, so that criterion
    is reported with its mass for the user to judge the continuum
    analogue; the 1/(h-m) non-integrability criterion has no faithful
    finite test and is emitted as a harmonic-sum diagnostic only.
    """
    h = op.h
    w = op.space.weights
    h0 = op.h0
    m = float(np.min(h))
    rep = principal_value(op, method="auto")
    lam = rep.lam
    if abs(lam) <= 1e-12:
        computed = "zero"
    else:
        computed = "positive" if lam > 0 else "negative"
    checks: List[CriterionCheck] = []

    checks.append(CriterionCheck(
        name="m_negative", holds=m < 0,
        predicted_sign="positive" if m < 0 else None, value=m,
        note="min(h) < 0 forces a positive spectral bound"))

    mass = float(np.sum(w[np.abs(h - m) <= 1e-12]))
    checks.append(CriterionCheck(
        name="mass_at_min", holds=mass > 0,
        predicted_sign="positive" if (mass > 0 and abs(m) <= 1e-12) else None, value=mass,
        note="positive mass at the minimum makes Λ principal (Λ > -m); "
             "sign prediction only when min(h) = 0"))

    osc = float(np.max(h) - np.min(h))
    osc_holds = osc < float(np.min(h0))
    checks.append(CriterionCheck(
        name="oscillation", holds=osc_holds,
        predicted_sign="positive" if (osc_holds and m <= 1e-12) else None, value=osc,
        note="osc(h) < inf h0 makes Λ principal; sign prediction when min(h) <= 0"))

    delta = float(np.min(h0 - h))
    checks.append(CriterionCheck(
        name="h_plus_delta_below_h0", holds=delta > 0,
        predicted_sign="positive" if delta > 0 else None, value=delta,
        note="largest delta with h + delta <= h0"))

    equal = bool(np.max(np.abs(h - h0)) <= 1e-12 * max(1.0, float(np.max(np.abs(h0)))))
    checks.append(CriterionCheck(
        name="h_equals_h0", holds=equal,
        predicted_sign="zero" if equal else None,
        note="threshold potential: Λ = 0 with constant eigenfunction"))

    above = bool(np.all(h0 <= h + 1e-12)) and bool(np.any(h - h0 > 1e-12))
    checks.append(CriterionCheck(
        name="h0_strictly_below_h", holds=above,
        predicted_sign="negative" if above else None,
        note="h0 below h with strict inequality somewhere"))

    mean_holds = bool(op.kernel.symmetric) and float(np.sum(w * h)) < float(np.sum(w * h0))
    checks.append(CriterionCheck(
        name="symmetric_mean", holds=mean_holds,
        predicted_sign="positive" if mean_holds else None,
        value=float(np.sum(w * (h0 - h))),
        note="mean of h below mean of h0 (symmetric kernels only)"))

    harmonic = float(np.sum(w / (h - m + 1e-8)))
    return SignCriteriaReport(
        m=m, lam=lam, computed_sign=computed, is_principal=rep.is_principal,
        checks=checks, inverse_gap_harmonic_sum=harmonic)


def shifted_potential(h, mask, a: float) -> np.ndarray:
    """Lower h by a on the masked subdomain: H = h - a·χ_mask.

    h and the result are coefficients of the +HI term in K + HI; to
    evaluate the spectral bound of that operator, hand -H to
    build_operator (whose convention is K - hI).
    """
    h = np.asarray(h, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != h.shape:
        raise ValueError("mask length mismatch")
    if not np.any(mask):
        raise ValueError("mask must be nonempty")
    if a <= 0:
        raise ValueError("shift amount must be positive")
    out = h.copy()
    out[mask] -= a
    return out


def restrict_operator(op: NonlocalOperator, mask) -> NonlocalOperator:
    """Operator kept on a node subset: rows, columns, weights and h of the part."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.nonzero(mask)[0]
    if idx.size == 0:
        raise ValueError("empty restriction")
    space = op.space
    sub_space = MeasureSpace(
        points=None if space.points is None else space.points[idx],
        weights=space.weights[idx],
        dist=space.dist[np.ix_(idx, idx)],
        kind="restriction",
    )
    sub_kernel = Kernel(space=sub_space, jmat=op.kernel.jmat[np.ix_(idx, idx)])
    return build_operator(sub_kernel, op.h[idx])


def shift_bound_rhs(kernel: Kernel, h, mask, a: float) -> float:
    """Upper bound max(h0) + Λ(h, Ω') + Λ(h, ω') - a for the shifted potential.

    Ω' is the complement of the masked part ω'; each restricted operator
    keeps only its part's rows, columns and weights.  As in
    shifted_potential, h is the coefficient of +hI, so the restricted
    spectral bounds are those of K_part + h I.
    """
    h = np.asarray(h, dtype=float)
    if h.shape == ():
        h = np.full(kernel.space.n, float(h))
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask) or np.all(mask):
        raise ValueError("mask must split the domain into two nonempty parts")
    op = build_operator(kernel, -h)
    lam_omega = principal_value(restrict_operator(op, mask), method="dense").lam
    lam_comp = principal_value(restrict_operator(op, ~mask), method="dense").lam
    return float(np.max(op.h0)) + lam_comp + lam_omega - float(a)
