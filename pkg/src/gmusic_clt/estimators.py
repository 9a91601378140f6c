"""Noise-subspace estimators and their deterministic limits.

All estimators have the form d1* (I - sum_j xi_j u_j u_j*) d2 for weights xi_j
attached to the sample eigenvectors. The traditional estimator uses xi_j = 1 on
the K largest sample eigenvalues. The improved estimator gets its weights from
the contour integral

    xi_j = (1/2 pi i) oint s_j(z) h(z) dz,   s_j = 1/(lambda_hat_j - z),

over the clockwise rectangle around the signal clusters, with
h = w_hat'/(1 + sigma2 c m_hat). The integrand is rational, so the weights are
available both in closed form (residues) and by quadrature.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .empirical import EmpiricalSpectrum
from .errors import ConfigError, ConvergenceError, DomainError, SeparationError
from .model import SignalModel, SubspaceQuery, eta_true
from .spectrum import SpectralSupport, spiked_pack, w_solve

QUAD_TOL = 1e-9
MAX_NODES = 4096
DEFAULT_NODES = 64


@lru_cache(maxsize=32)
def _unit_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on (0, 1); read-only and cached."""
    t, wt = leggauss(n)
    s, ws = 0.5 * (t + 1.0), 0.5 * wt
    s.flags.writeable = False
    ws.flags.writeable = False
    return s, ws


@dataclass(frozen=True)
class RectContour:
    """Clockwise boundary of [x_lo, x_hi] x [-delta, delta]."""

    x_lo: float
    x_hi: float
    delta: float
    eps: float
    nodes_per_side: int = DEFAULT_NODES

    def __post_init__(self) -> None:
        if int(self.nodes_per_side) < 1:
            raise ConfigError("nodes per side must be a positive integer")
        if not (self.x_hi > self.x_lo and self.delta > 0):
            raise ConfigError("degenerate rectangle")

    def with_crossings(self, x_lo: float, x_hi: float) -> "RectContour":
        return RectContour(x_lo, x_hi, self.delta, self.eps, self.nodes_per_side)

    def upper_path(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and complex weights (dz) for the part of the contour in Im z > 0.

        The path runs up the left side, along the top and down the right side,
        which is the clockwise direction. With n nodes per segment, 3n in total.
        """
        n = int(n or self.nodes_per_side)
        s, ws = _unit_rule(n)
        d, L = self.delta, self.x_hi - self.x_lo
        left = self.x_lo + 1j * d * s
        top = self.x_lo + L * s + 1j * d
        right = self.x_hi + 1j * d * s[::-1]
        z = np.concatenate([left, top, right])
        dz = np.concatenate([1j * d * ws, L * ws + 0j, -1j * d * ws[::-1]])
        return z, dz

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x > self.x_lo) & (x < self.x_hi)


def contour_build(support: SpectralSupport, nodes: int = DEFAULT_NODES) -> RectContour:
    if int(nodes) != nodes or nodes < 1:
        raise ConfigError(f"nodes must be a positive integer, got {nodes!r}")
    if support.Q < 2:
        raise SeparationError("no signal cluster to enclose (a single cluster)")
    if not support.separated:
        raise SeparationError(
            f"separation fails: A-1={support.separated_a1}, A-2={support.separated_a2}"
        )
    _, _, t2m, t2p = support.thresholds
    return RectContour(t2m - support.eps, t2p + support.eps, support.delta, support.eps, int(nodes))


def real_contour_integral(g, contour: RectContour, tol: float = QUAD_TOL, n0: int | None = None):
    """(1/2 pi i) oint g dz for g with g(conj z) = conj g(z); g maps an array of z to (..., n).

    Uses Im(integral over the upper half)/pi and doubles the node count until
    successive values agree within ``tol`` (relative to max(1, |value|)).
    """
    n = int(n0 or contour.nodes_per_side)
    prev = None
    while True:
        z, dz = contour.upper_path(n)
        val = np.imag(np.tensordot(g(z), dz, axes=([-1], [0]))) / np.pi
        if prev is not None:
            err = np.max(np.abs(val - prev) / np.maximum(1.0, np.abs(val)))
            if err < tol:
                return val, n
        if n >= MAX_NODES:
            raise ConvergenceError(f"contour quadrature did not settle within {MAX_NODES} nodes")
        prev, n = val, 2 * n


# -- traditional ----------------------------------------------------------------

def _bilinear_parts(spec: EmpiricalSpectrum, q: SubspaceQuery) -> np.ndarray:
    """a_j = (d1* u_j)(u_j* d2) for every sample eigenvector."""
    if q.d1.size != spec.lambda_hat.size:
        raise ConfigError(f"probe length {q.d1.size} does not match M={spec.lambda_hat.size}")
    U = spec.u_hat
    return np.conj(U.conj().T @ q.d1) * (U.conj().T @ q.d2)


def _combine(q: SubspaceQuery, a: np.ndarray, xi: np.ndarray) -> complex:
    return complex(np.vdot(q.d1, q.d2) - np.sum(xi * a))


def eta_traditional(spec: EmpiricalSpectrum, q: SubspaceQuery) -> complex:
    K = spec.model_ref.K
    a = _bilinear_parts(spec, q)
    return complex(np.vdot(q.d1, q.d2) - np.sum(a[:K]))


def group_projections(model: SignalModel, q: SubspaceQuery) -> np.ndarray:
    """d1* P_g d2 for each distinct eigenvalue group (noise group last, P = I - U U*)."""
    if q.d1.size != model.M:
        raise ConfigError(f"probe length {q.d1.size} does not match M={model.M}")
    vals, _ = model.groups()
    p1 = model.U.conj().T @ q.d1
    p2 = model.U.conj().T @ q.d2
    per_k = np.conj(p1) * p2
    out = np.zeros(vals.size, dtype=complex)
    for k, lam in enumerate(model.lambdas):
        out[int(np.flatnonzero(vals == lam)[0])] += per_k[k]
    out[-1] = eta_true(model, q)
    return out


def traditional_weights(model: SignalModel, support: SpectralSupport, contour: RectContour) -> np.ndarray:
    """(1/2 pi i) oint (1 + sigma2 c m(z)) / (lambda_g - w(z)) dz for each group g."""
    vals, _ = model.groups()
    cache: dict[int, object] = {}

    def g(z):
        key = z.size
        if key not in cache:
            cache[key] = w_solve(model, z, support)
        p = cache[key]
        return p.one_plus_a[None, :] / (vals[:, None] - p.w[None, :])

    val, _ = real_contour_integral(g, contour)
    return val


def eta_traditional_limit(model: SignalModel, support: SpectralSupport, contour: RectContour,
                          q: SubspaceQuery) -> complex:
    """d1* d2 - (1/2 pi i) oint d1* T(z) d2 dz."""
    weights = traditional_weights(model, support, contour)
    proj = group_projections(model, q)
    return complex(np.vdot(q.d1, q.d2) - np.sum(weights * proj))


# -- improved ---------------------------------------------------------------

def _kappa(model: SignalModel, literal: bool) -> float:
    return model.sigma2 if literal else model.sigma2 * (1.0 - model.c)


def improved_weights_residue(spec: EmpiricalSpectrum, literal: bool = False) -> np.ndarray:
    """xi_j from residues at the K largest lambda_hat and the K largest omega_hat.

    h = alpha + 2 z alpha' - kappa alpha'/alpha with alpha = 1 + beta sum_l s_l and
    alpha'/alpha = sum_l s_l - sum_l 1/(omega_l - z). Each term of s_j h is a sum
    of simple or double poles whose residues are written out below.
    """
    model = spec.model_ref
    lam, om = spec.lambda_hat, spec.omega_hat
    M, K = lam.size, model.K
    if np.any(np.diff(lam) >= 0):
        raise DomainError("residue weights need distinct sample eigenvalues")
    beta = spec.beta
    kappa = _kappa(model, literal)
    gamma = beta - kappa
    inI = np.zeros(M, dtype=bool)
    inI[:K] = True

    D = lam[:, None] - lam[None, :]  # D[j, l] = lam_j - lam_l
    np.fill_diagonal(D, np.inf)
    inv = 1.0 / D
    inv2 = inv * inv
    # poles at lambda_j (j in I) and at lambda_l (l in I, l != j)
    at_j = np.where(inI, inv.sum(axis=1), 0.0)  # sum_{l != j} -1/(lam_l - lam_j)
    at_l = -(inv[:, :K]).sum(axis=1)  # sum_{l in I, l != j} -1/(lam_j - lam_l)
    rho = -inI.astype(float) + gamma * (at_j + at_l)
    dj = np.where(inI, -(lam[:, None] * inv2).sum(axis=1), 0.0)
    dl = (inv[:, :K] + lam[None, :K] * inv2[:, :K]).sum(axis=1)
    rho += 2.0 * beta * (dj + dl)
    E = lam[:, None] - om[None, :]  # lam_j - omega_l
    kj = np.where(inI, (1.0 / E).sum(axis=1), 0.0)  # sum_l -1/(omega_l - lam_j)
    kl = -(1.0 / E[:, :K]).sum(axis=1)
    rho += kappa * (kj + kl)
    return -rho


def improved_weights_quadrature(spec: EmpiricalSpectrum, contour: RectContour,
                                literal: bool = False) -> np.ndarray:
    model = spec.model_ref
    lam = spec.lambda_hat
    beta = spec.beta
    kappa = _kappa(model, literal)

    def g(z):
        s = 1.0 / (lam[:, None] - z[None, :])
        alpha = 1.0 + beta * s.sum(axis=0)
        dalpha = beta * (s * s).sum(axis=0)
        h = alpha + 2.0 * z * dalpha - kappa * dalpha / alpha
        return s * h[None, :]

    val, _ = real_contour_integral(g, contour)
    return val


def fit_contour(spec: EmpiricalSpectrum, contour: RectContour) -> RectContour:
    """Move a crossing that sits within eps/4 of a pole, keeping the K largest values inside."""
    K = spec.model_ref.K
    poles = np.concatenate([spec.lambda_hat, spec.omega_hat])
    guard = contour.eps / 4.0
    if np.min(np.abs(poles - contour.x_lo)) > guard and np.min(np.abs(poles - contour.x_hi)) > guard:
        return contour
    inside = np.concatenate([spec.lambda_hat[:K], spec.omega_hat[:K]])
    outside = np.concatenate([spec.lambda_hat[K:], spec.omega_hat[K:]])
    x_lo, x_hi = contour.x_lo, contour.x_hi
    if np.min(np.abs(poles - x_lo)) <= guard:
        lo_edge, hi_edge = outside.max(), inside.min()
        x_lo = 0.5 * (lo_edge + hi_edge)
        if hi_edge - lo_edge <= 2.0 * 1e-6 * max(1.0, abs(x_lo)):
            raise DomainError("signal and noise sample eigenvalues are not separated")
    if np.min(np.abs(poles - x_hi)) <= guard:
        x_hi = max(x_hi, poles.max() + contour.eps)
    return contour.with_crossings(x_lo, x_hi)


@dataclass(frozen=True)
class EstimateResult:
    eta_true: complex
    eta_improved: complex
    eta_improved_quadrature: complex | None
    eta_traditional: complex
    eta_traditional_limit: complex | None
    eta_spiked: complex | None

    def to_dict(self) -> dict:
        def enc(v):
            return None if v is None else {"re": v.real, "im": v.imag}

        return {k: enc(getattr(self, k)) for k in (
            "eta_true", "eta_improved", "eta_improved_quadrature", "eta_traditional",
            "eta_traditional_limit", "eta_spiked")}


def eta_improved(spec: EmpiricalSpectrum, contour: RectContour | None, q: SubspaceQuery,
                 method: str = "residue", literal: bool = False):
    """Improved estimator; ``method='both'`` returns (residue value, quadrature value)."""
    if method not in ("residue", "quadrature", "both"):
        raise ConfigError(f"unknown method {method!r}")
    a = _bilinear_parts(spec, q)
    if spec.model_ref.K == 0:
        v = complex(np.vdot(q.d1, q.d2))
        return (v, v) if method == "both" else v
    res = quad = None
    if method in ("residue", "both"):
        try:
            res = _combine(q, a, improved_weights_residue(spec, literal))
        except DomainError:
            if method == "residue":
                method = "quadrature"
            else:
                warnings.warn("tied sample eigenvalues; residue path skipped", stacklevel=2)
    if method in ("quadrature", "both"):
        if contour is None:
            raise ConfigError("quadrature path needs a contour")
        quad = _combine(q, a, improved_weights_quadrature(spec, fit_contour(spec, contour), literal))
    if method == "both":
        return res, quad
    return res if method == "residue" else quad


def eta_spiked(spec: EmpiricalSpectrum, q: SubspaceQuery) -> complex:
    """Fixed-rank form: weight h(lambda_hat_k) on each of the K largest sample eigenvectors."""
    model = spec.model_ref
    pack = spiked_pack(model)
    if not pack.separated:
        raise SeparationError(f"spike below threshold (margin {pack.margin:.6g})")
    K = model.K
    top = spec.lambda_hat[:K]
    bad = np.flatnonzero(top <= pack.edges[1])
    if bad.size:
        raise SeparationError(
            f"sample eigenvalue {int(bad[0]) + 1} ({top[bad[0]]:.6g}) is inside the bulk "
            f"(edge {pack.edges[1]:.6g})"
        )
    h = np.real(pack.h(top + 0j)) if K else np.zeros(0)
    a = _bilinear_parts(spec, q)
    return complex(np.vdot(q.d1, q.d2) - np.sum(h * a[:K]))


def estimate_all(model: SignalModel, support: SpectralSupport, spec: EmpiricalSpectrum,
                 q: SubspaceQuery, nodes: int = DEFAULT_NODES, spiked: bool = True,
                 literal: bool = False) -> EstimateResult:
    contour = contour_build(support, nodes)
    res, quad = eta_improved(spec, contour, q, "both", literal)
    sp = None
    if spiked:
        try:
            sp = eta_spiked(spec, q)
        except SeparationError:
            sp = None
    return EstimateResult(
        eta_true=eta_true(model, q),
        eta_improved=res if res is not None else quad,
        eta_improved_quadrature=quad,
        eta_traditional=eta_traditional(spec, q),
        eta_traditional_limit=eta_traditional_limit(model, support, contour, q),
        eta_spiked=sp,
    )
