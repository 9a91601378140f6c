"""Deterministic equivalents of the sample spectrum.

Everything is driven by the rational function

    phi(w) = w g(w)^2 + sigma2 (1 - c) g(w),   g(w) = 1 - sigma2 c f(w),
    f(w)   = (1/M) tr (B B* - w I)^{-1},

whose real critical points give the support of the limiting measure and whose
root w(z) of phi(w) = z gives the Stieltjes transform m(z) through
1 + sigma2 c m(z) = 1 / g(w(z)).

All traces are sums over the distinct eigenvalues of B B*, so the cost does not
grow with M.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .errors import BoundaryError, ConvergenceError, DomainError
from .model import SignalModel

REAL_TOL = 1e-9  # |Im w| below this (relative) counts as real
EDGE_TOL = 1e-9  # relative distance to a cluster edge treated as "on the edge"
POLE_TOL = 1e-12


# -- phi and its derivatives ------------------------------------------------

def _f_derivs(model: SignalModel, w):
    vals, mult = model.signal_groups()
    w = np.asarray(w, dtype=complex)
    n0 = model.M - model.K
    f0 = -n0 / w
    f1 = n0 / w**2
    f2 = -2.0 * n0 / w**3
    for lam, k in zip(vals, mult):
        d = lam - w
        f0 = f0 + k / d
        f1 = f1 + k / d**2
        f2 = f2 + 2.0 * k / d**3
    return f0 / model.M, f1 / model.M, f2 / model.M


def _check_poles(model: SignalModel, w) -> None:
    w = np.asarray(w, dtype=complex)
    poles = np.append(model.signal_groups()[0], 0.0)
    gap = np.min(np.abs(w[..., None] - poles), axis=-1) if poles.size else np.inf
    scale = np.maximum(1.0, np.abs(w))
    if np.any(gap <= POLE_TOL * scale):
        raise DomainError("phi evaluated at a pole (0 or a signal eigenvalue)")


def phi_all(model: SignalModel, w):
    """phi, phi', phi'' at w (no pole check)."""
    s2c = model.sigma2 * model.c
    kappa = model.sigma2 * (1.0 - model.c)
    w = np.asarray(w, dtype=complex)
    f0, f1, f2 = _f_derivs(model, w)
    g, g1, g2 = 1.0 - s2c * f0, -s2c * f1, -s2c * f2
    phi = w * g**2 + kappa * g
    dphi = g**2 + 2.0 * w * g * g1 + kappa * g1
    d2phi = 4.0 * g * g1 + 2.0 * w * g1**2 + (2.0 * w * g + kappa) * g2
    return phi, dphi, d2phi


def phi_eval(model: SignalModel, w):
    """phi(w) and phi'(w); raises DomainError at w in {0, lambda_1..lambda_K}."""
    _check_poles(model, w)
    phi, dphi, _ = phi_all(model, w)
    if np.ndim(phi) == 0:
        return complex(phi), complex(dphi)
    return phi, dphi


def f_eval(model: SignalModel, w):
    return _f_derivs(model, w)[0]


# -- cleared polynomial forms ------------------------------------------------

def _polynomials(model: SignalModel) -> tuple[Polynomial, Polynomial, Polynomial]:
    """(A, B, C): phi = A / B with B = w prod(lam_j - w)^2; C has the real critical points of phi as roots."""
    vals, mult = model.signal_groups()
    s2c = model.sigma2 * model.c
    kappa = model.sigma2 * (1.0 - model.c)
    wpoly = Polynomial([0.0, 1.0])
    lin = [Polynomial([lam, -1.0]) for lam in vals]
    P1 = Polynomial([1.0])
    for p in lin:
        P1 = P1 * p
    S = Polynomial([0.0])
    for j, k in enumerate(mult):
        term = Polynomial([k])
        for i, p in enumerate(lin):
            if i != j:
                term = term * p
        S = S + term
    Gn = wpoly * P1 - (s2c / model.M) * (wpoly * S - (model.M - model.K) * P1)
    A = Gn * Gn + kappa * Gn * P1
    B = wpoly * P1 * P1
    C = A.deriv() * wpoly * P1 - A * (P1 + 2.0 * wpoly * P1.deriv())
    return A, B, C


# -- support ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralSupport:
    clusters: np.ndarray  # (Q, 2) rows [x_q^-, x_q^+], increasing
    w_preimages: np.ndarray  # (Q, 2) rows [w(x_q^-), w(x_q^+)]
    thresholds: tuple  # (t1-, t1+, t2-, t2+); t2 entries are nan when Q == 1
    eps: float
    delta: float
    separated_a1: bool
    separated_a2: bool
    associations: tuple  # cluster index (0-based) of each distinct signal eigenvalue
    w_t2_minus: float

    @property
    def Q(self) -> int:
        return int(self.clusters.shape[0])

    @property
    def separated(self) -> bool:
        return self.separated_a1 and self.separated_a2

    def distance(self, z) -> np.ndarray:
        """Euclidean distance from z to the union of clusters."""
        z = np.asarray(z, dtype=complex)
        x, y = z.real[..., None], z.imag[..., None]
        lo, hi = self.clusters[:, 0], self.clusters[:, 1]
        dx = np.maximum(0.0, np.maximum(lo - x, x - hi))
        return np.min(np.hypot(dx, y), axis=-1)

    def locate(self, x: float) -> tuple[str, int]:
        """('cluster', q) or ('gap', q); gap q lies left of cluster q (gap Q is the right tail)."""
        tol = EDGE_TOL * max(1.0, abs(x))
        edges = self.clusters.ravel()
        if np.any(np.abs(edges - x) <= tol):
            raise BoundaryError(f"x={x!r} lies on an edge of the support")
        for q, (lo, hi) in enumerate(self.clusters):
            if x < lo:
                return "gap", q
            if x < hi:
                return "cluster", q
        return "gap", self.Q

    def gap_w_interval(self, q: int) -> tuple[float, float]:
        lo = -np.inf if q == 0 else self.w_preimages[q - 1, 1]
        hi = np.inf if q == self.Q else self.w_preimages[q, 0]
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "Q": self.Q,
            "clusters": self.clusters.tolist(),
            "w_preimages": self.w_preimages.tolist(),
            "thresholds": [None if np.isnan(t) else float(t) for t in self.thresholds],
            "eps": self.eps,
            "delta": self.delta,
            "separated_A1": self.separated_a1,
            "separated_A2": self.separated_a2,
            "associations": list(self.associations),
        }


def _polish_critical(model: SignalModel, w: float) -> float:
    for _ in range(8):
        _, d1, d2 = phi_all(model, w)
        step = (d1 / d2).real
        w = w - step
        if abs(step) <= 1e-15 * max(1.0, abs(w)):
            break
    return float(np.real(w))


def support_compute(model: SignalModel) -> SpectralSupport:
    _, _, C = _polynomials(model)
    roots = C.roots()
    poles = np.append(model.signal_groups()[0], 0.0)
    cand = []
    for r in roots:
        if abs(r.imag) > 1e-6 * max(1.0, abs(r.real)):
            continue
        w = _polish_critical(model, r.real)
        if not np.isfinite(w) or np.min(np.abs(poles - w)) <= 1e-10 * max(1.0, abs(w)):
            continue
        if any(abs(w - v) <= 1e-9 * max(1.0, abs(w)) for v in cand):
            continue
        cand.append(w)
    cand = np.sort(np.array(cand))
    ext = []
    for w in cand:
        phi, d1, d2 = (np.real(v) for v in phi_all(model, w))
        if abs(d1) > 1e-6 * max(1.0, abs(phi)):
            raise ConvergenceError(f"critical point {w} failed to polish (phi'={d1})")
        if phi > 0:
            ext.append((w, phi, "max" if d2 < 0 else "min"))
    kinds = [e[2] for e in ext]
    if len(ext) == 0 or len(ext) % 2 or kinds != ["max", "min"] * (len(ext) // 2):
        raise ConvergenceError(f"inconsistent extrema pattern {kinds}")
    clusters = np.array([[ext[2 * q][1], ext[2 * q + 1][1]] for q in range(len(ext) // 2)])
    pre = np.array([[ext[2 * q][0], ext[2 * q + 1][0]] for q in range(len(ext) // 2)])
    if np.any(np.diff(clusters.ravel()) <= 0):
        raise ConvergenceError("clusters are not disjoint and increasing")
    if not (pre[0, 0] < 0 < pre[0, 1]):
        raise ConvergenceError("noise cluster preimages do not straddle 0")
    Q = clusters.shape[0]
    gaps = clusters[1:, 0] - clusters[:-1, 1]
    eps = min(0.25 * float(gaps.min()), 0.5) if Q > 1 else 0.5
    delta = max(0.25, eps)
    t1m = max(clusters[0, 0] - eps, 0.5 * clusters[0, 0])
    t1p = clusters[0, 1] + eps
    if Q > 1:
        t2m, t2p = clusters[1, 0] - eps, clusters[-1, 1] + eps
    else:
        t2m = t2p = np.nan

    vals, _ = model.signal_groups()
    assoc = []
    for lam in vals:
        q = int(np.searchsorted(pre[:, 1], lam))
        assoc.append(min(q, Q - 1))
    if model.K == 0:
        a1, a2, w_t2 = True, True, np.nan
    else:
        a1 = Q > 1
        if a1:
            tmp = SpectralSupport(clusters, pre, (t1m, t1p, t2m, t2p), eps, delta, a1, False, tuple(assoc), np.nan)
            w_t2 = float(w_solve(model, t2m, tmp).w.real)
            a2 = bool(w_t2 < vals.min())
        else:
            w_t2, a2 = np.nan, False
    return SpectralSupport(
        clusters=clusters,
        w_preimages=pre,
        thresholds=(t1m, t1p, t2m, t2p),
        eps=eps,
        delta=delta,
        separated_a1=bool(a1),
        separated_a2=bool(a2),
        associations=tuple(assoc),
        w_t2_minus=w_t2,
    )


# -- w(z) -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WPoint:
    z: np.ndarray
    w: np.ndarray
    m: np.ndarray
    mtilde: np.ndarray
    wprime: np.ndarray
    sigma2: float
    c: float

    @property
    def one_plus_a(self):
        """1 + sigma2 c m(z)."""
        return 1.0 + self.sigma2 * self.c * self.m

    @property
    def one_plus_b(self):
        """1 + sigma2 mtilde(z)."""
        return 1.0 + self.sigma2 * self.mtilde

    def conj(self) -> "WPoint":
        return WPoint(np.conj(self.z), np.conj(self.w), np.conj(self.m), np.conj(self.mtilde),
                      np.conj(self.wprime), self.sigma2, self.c)

    def __getitem__(self, idx) -> "WPoint":
        return WPoint(self.z[idx], self.w[idx], self.m[idx], self.mtilde[idx], self.wprime[idx],
                      self.sigma2, self.c)


def _batched_roots(a: np.ndarray, b: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Roots of A(w) - z B(w) for each z; a, b ascending coefficient arrays of equal length."""
    p = a[None, :] - z[:, None] * b[None, :]
    d = a.size - 1
    q = p[:, :d] / p[:, d:]
    comp = np.zeros((z.size, d, d), dtype=complex)
    comp[:, np.arange(1, d), np.arange(d - 1)] = 1.0
    comp[:, :, -1] = -q
    return np.linalg.eigvals(comp)


def _newton_polish(model: SignalModel, w: np.ndarray, z: np.ndarray, iters: int = 4) -> np.ndarray:
    for _ in range(iters):
        phi, dphi, _ = phi_all(model, w)
        res = phi - z
        step = res / dphi
        w_new = w - step
        phi_new = phi_all(model, w_new)[0]
        better = np.abs(phi_new - z) <= np.abs(res)
        w = np.where(better, w_new, w)
    return w


def _coeff_arrays(model: SignalModel) -> tuple[np.ndarray, np.ndarray]:
    A, B, _ = _polynomials(model)
    a = A.coef.astype(complex)
    b = np.zeros_like(a)
    b[: B.coef.size] = B.coef
    return a, b


def _w_upper(model: SignalModel, z: np.ndarray) -> np.ndarray:
    """w(z) for Im z > 0 by continuation down a vertical path from far above the support."""
    a, b = _coeff_arrays(model)
    lam_max = float(model.lambdas.max()) if model.K else 0.0
    y0 = 100.0 * (1.0 + np.max(np.abs(z.real)) + lam_max + model.sigma2)
    y_target = z.imag
    y = np.maximum(y_target, y0)
    roots = _batched_roots(a, b, z.real + 1j * y)
    w = roots[np.arange(z.size), np.argmax(np.abs(roots), axis=1)]
    while np.any(y > y_target):
        y = np.maximum(y_target, 0.5 * y)
        roots = _batched_roots(a, b, z.real + 1j * y)
        w = roots[np.arange(z.size), np.argmin(np.abs(roots - w[:, None]), axis=1)]
    return w


def _w_real(model: SignalModel, x: float, support: SpectralSupport, a, b) -> complex:
    kind, q = support.locate(x)
    roots = _batched_roots(a, b, np.array([x], dtype=complex))[0]
    if kind == "cluster":
        r = roots[np.argmax(roots.imag)]
        if r.imag <= REAL_TOL * max(1.0, abs(r.real)):
            raise ConvergenceError(f"no complex root of phi(w) = {x} inside a cluster")
        return complex(r)
    lo, hi = support.gap_w_interval(q)
    real = roots[np.abs(roots.imag) <= 1e-6 * np.maximum(1.0, np.abs(roots.real))].real
    inside = real[(real > lo) & (real < hi)]
    if inside.size == 0:
        raise ConvergenceError(f"no real root of phi(w) = {x} in ({lo}, {hi})")
    if inside.size > 1:
        dphi = np.real(phi_all(model, inside)[1])
        inside = inside[dphi > 0]
        if inside.size != 1:
            raise ConvergenceError(f"ambiguous real root of phi(w) = {x}")
    return complex(inside[0], 0.0)


def w_solve(model: SignalModel, z, support: SpectralSupport | None = None) -> WPoint:
    """Solve z = phi(w) on the branch w = w(z); accepts a scalar or an array of z."""
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex)).ravel()
    if np.any(z == 0):
        raise DomainError("z = 0 is excluded (mtilde has a pole there)")
    w = np.empty_like(z)
    is_real = np.abs(z.imag) <= 1e-14 * np.maximum(1.0, np.abs(z))
    if np.any(is_real):
        if support is None:
            support = support_compute(model)
        a, b = _coeff_arrays(model)
        for i in np.flatnonzero(is_real):
            w[i] = _w_real(model, float(z[i].real), support, a, b)
    cplx = ~is_real
    if np.any(cplx):
        zc = z[cplx]
        up = zc.imag > 0
        zu = np.where(up, zc, np.conj(zc))
        wu = _w_upper(model, zu)
        w[cplx] = np.where(up, wu, np.conj(wu))
    w = _newton_polish(model, w, z)
    w[is_real] = np.where(np.abs(w[is_real].imag) <= REAL_TOL * np.maximum(1.0, np.abs(w[is_real])),
                          w[is_real].real + 0j, w[is_real])
    _, dphi, _ = phi_all(model, w)
    f0 = f_eval(model, w)
    g = 1.0 - model.sigma2 * model.c * f0
    m = f0 / g
    mt = model.c * m - (1.0 - model.c) / z
    p = WPoint(z=z, w=w, m=m, mtilde=mt, wprime=1.0 / dphi, sigma2=model.sigma2, c=model.c)
    return p[0] if scalar else p


def phi_residual(model: SignalModel, p: WPoint):
    return np.abs(phi_all(model, p.w)[0] - p.z)


# -- resolvent equivalents ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class ResolventDiag:
    T: np.ndarray  # M diagonal entries of T(z) in the eigenbasis of B B*
    Ttilde_signal: np.ndarray  # K entries of Ttilde(z) along the right singular vectors of B
    Ttilde_noise: complex  # common value of the remaining N - K entries
    noise_multiplicity: int


def resolvent_diag(model: SignalModel, p: WPoint) -> ResolventDiag:
    """Diagonal of T(z) and Ttilde(z); both are (1 + .)/(lambda_k - w(z)) in the eigenbasis."""
    lam = model.lambda_full()
    if np.ndim(p.w) != 0:
        raise ValueError("resolvent_diag expects a scalar WPoint")
    T = p.one_plus_a / (lam - p.w)
    Tt_sig = p.one_plus_b / (model.lambdas - p.w)
    Tt_noise = complex(p.one_plus_b / (0.0 - p.w))
    m_back = T.mean()
    if abs(m_back - p.m) > 1e-9 * max(1.0, abs(p.m)):
        raise ConvergenceError(f"(1/M) tr T = {m_back} disagrees with m = {p.m}")
    mt_back = (Tt_sig.sum() + (model.N - model.K) * Tt_noise) / model.N
    if abs(mt_back - p.mtilde) > 1e-9 * max(1.0, abs(p.mtilde)):
        raise ConvergenceError(f"(1/N) tr Ttilde = {mt_back} disagrees with mtilde = {p.mtilde}")
    return ResolventDiag(T=T, Ttilde_signal=Tt_sig, Ttilde_noise=Tt_noise,
                         noise_multiplicity=model.N - model.K)


# -- density ----------------------------------------------------------------

def density_eval(model: SignalModel, x, support: SpectralSupport | None = None):
    """(1/pi) Im m(x + i0); zero in the gaps. Edge points are nudged inward with a warning."""
    if support is None:
        support = support_compute(model)
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    out = np.zeros(xs.size)
    a, b = _coeff_arrays(model)
    s2c = model.sigma2 * model.c
    for i, xi in enumerate(xs):
        try:
            kind, _ = support.locate(xi)
        except BoundaryError:
            warnings.warn(f"density requested on a support edge at x={xi}; returning 0", stacklevel=2)
            continue
        if kind == "gap":
            continue
        w = _w_real(model, xi, support, a, b)
        w = complex(_newton_polish(model, np.array([w]), np.array([xi + 0j]))[0])
        f0 = complex(f_eval(model, w))
        out[i] = max(0.0, (f0 / (1.0 - s2c * f0)).imag / np.pi)
    return float(out[0]) if scalar else out


# -- fixed-rank (Marchenko-Pastur) closed forms ------------------------------

def mp_phi(w, sigma2: float, c: float):
    w = np.asarray(w, dtype=complex) if np.iscomplexobj(w) else np.asarray(w, dtype=float)
    return (w + sigma2 * c) * (w + sigma2) / w


def mp_edges(sigma2: float, c: float) -> tuple[float, float]:
    return sigma2 * (1 - np.sqrt(c)) ** 2, sigma2 * (1 + np.sqrt(c)) ** 2


@dataclass(frozen=True)
class SpikedSummary:
    sigma2: float
    c: float
    lambdas: tuple
    margin: float  # lambda_K - sigma2 sqrt(c); separation iff > 0
    limits: tuple  # phi(lambda_k), almost-sure limits of the K largest sample eigenvalues
    edges: tuple

    @property
    def separated(self) -> bool:
        return self.margin > 0

    def w(self, z):
        """MP branch of w(z); on the real line outside the bulk it is the root on the edge's side."""
        s2, c = self.sigma2, self.c
        scalar = np.ndim(z) == 0
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        bq = s2 * c + s2 - z
        disc = np.sqrt(bq * bq - 4 * s2 * s2 * c + 0j)
        r1, r2 = (-bq + disc) / 2, (-bq - disc) / 2
        lo, hi = self.edges
        out = np.empty_like(z)
        for i, zi in enumerate(z):
            a, b = r1[i], r2[i]
            if abs(zi.imag) > 1e-14 * max(1.0, abs(zi)):
                s = np.sign(zi.imag)
                out[i] = a if a.imag * s > 0 else b
            elif zi.real > hi:
                out[i] = max(a.real, b.real)
            elif zi.real < lo:
                out[i] = min(a.real, b.real)
            else:
                out[i] = a if a.imag > 0 else b
        return out[0] if scalar else out

    def one_plus_a(self, z):
        w = self.w(z)
        return w / (w + self.sigma2 * self.c)

    def m(self, z):
        return (self.one_plus_a(z) - 1.0) / (self.sigma2 * self.c)

    def delta(self, z1, z2):
        return 1.0 - self.sigma2**2 * self.c / (self.w(z1) * self.w(z2))

    def h(self, x):
        """w'(x) / (1 + sigma2 c m(x)) = w (w + sigma2 c) / (w^2 - sigma2^2 c)."""
        w = self.w(x)
        return w * (w + self.sigma2 * self.c) / (w * w - self.sigma2**2 * self.c)


def spiked_pack(model: SignalModel) -> SpikedSummary:
    s2, c = model.sigma2, model.c
    margin = float(model.lambdas.min() - s2 * np.sqrt(c)) if model.K else np.inf
    limits = tuple(float(mp_phi(lam, s2, c)) for lam in model.lambdas)
    return SpikedSummary(sigma2=s2, c=c, lambdas=tuple(model.lambdas.tolist()), margin=margin,
                         limits=limits, edges=mp_edges(s2, c))
