"""Second-order theory: kernels, variance coefficients and the 2x2 covariance.

In the eigenbasis of B B* every trace reduces to a sum over distinct eigenvalue
groups, and the variance coefficient of a pair of eigen-directions depends only
on their eigenvalues. Tables are therefore indexed by group pairs and expanded
to direction pairs on demand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, SeparationError
from .estimators import RectContour, group_projections
from .model import SignalModel, SubspaceQuery
from .spectrum import SpectralSupport, WPoint, spiked_pack, w_solve

QUOTIENT_SWITCH = 1e-6
DELTA_CHECK = 1e-6
VARTHETA_RTOL = 1e-6
IMAG_TOL = 1e-8
DEFAULT_NODES = 128
MAX_NODES = 512  # per segment; the tensor grid is (3 n)^2


# -- kernels ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelPack:
    z1: np.ndarray
    z2: np.ndarray
    u: np.ndarray
    v: np.ndarray
    vtilde: np.ndarray
    s: np.ndarray
    r: np.ndarray
    delta: np.ndarray  # (1 - u)^2 - z1 z2 v vtilde
    delta_quotient: np.ndarray  # (z1 - z2)/(w1 - w2), or 1/w'(z) on the diagonal
    theta_factors: tuple  # (z1 z2 (1+a1)(1+a2) vtilde, v / ((1+a1)(1+a2)), 1 - u)

    def theta(self, lam_k: float, lam_l: float):
        t0, t1, t2 = self.theta_factors
        return t0 + lam_k * lam_l * t1 + (lam_k + lam_l) * t2


def _broadcast_pair(p1: WPoint, p2: WPoint, outer: bool):
    def f(x, first):
        x = np.asarray(x)
        if not outer:
            return x
        return x[:, None] if first else x[None, :]

    keys = ("z", "w", "wprime")
    a = {k: f(getattr(p1, k), True) for k in keys}
    b = {k: f(getattr(p2, k), False) for k in keys}
    a["A"], b["A"] = f(p1.one_plus_a, True), f(p2.one_plus_a, False)
    a["Bt"], b["Bt"] = f(p1.one_plus_b, True), f(p2.one_plus_b, False)
    return a, b


def kernel_pack(model: SignalModel, p1: WPoint, p2: WPoint, outer: bool = False,
                check: bool = True) -> KernelPack:
    """u, v, vtilde, s, r and Delta at (z1, z2); ``outer=True`` builds the full grid of pairs."""
    a, b = _broadcast_pair(p1, p2, outer)
    vals, mult = model.groups()
    s2n = model.sigma2 / model.N
    w1, w2 = a["w"], b["w"]
    S12 = 0.0
    L1 = 0.0
    L2 = 0.0
    L12 = 0.0
    Lsq = 0.0
    for lam, k in zip(vals, mult):
        d = k / ((lam - w1) * (lam - w2))
        S12 = S12 + d
        L12 = L12 + lam * d
        Lsq = Lsq + lam * lam * d
        if lam != 0.0:
            L1 = L1 + k * lam / (lam - w1)
            L2 = L2 + k * lam / (lam - w2)
    AA = a["A"] * b["A"]
    u = s2n * L12
    v = s2n * AA * S12
    vt = s2n * a["Bt"] * b["Bt"] * (S12 + (model.N - model.M) / (w1 * w2))
    z1z2 = a["z"] * b["z"]
    delta = (1.0 - u) ** 2 - z1z2 * v * vt
    s = s2n * (model.N - L1 - L2) / AA
    r = s2n * Lsq / AA
    dz = a["z"] - b["z"]
    close = np.abs(dz) < QUOTIENT_SWITCH
    dw = np.where(close, 1.0, w1 - w2)
    quot = np.where(close, 1.0 / np.broadcast_to(a["wprime"], np.shape(dz)), dz / dw)
    if check:
        err = np.abs(delta - quot)
        if np.any(err > DELTA_CHECK * np.maximum(1.0, np.abs(delta))):
            raise ConvergenceError(
                f"Delta cross-check failed (max discrepancy {float(np.max(err)):.3e})"
            )
    factors = (z1z2 * AA * vt, v / AA, 1.0 - u)
    return KernelPack(z1=a["z"], z2=b["z"], u=u, v=v, vtilde=vt, s=s, r=r, delta=delta,
                      delta_quotient=quot, theta_factors=factors)


def kernel_diagnostics(pack: KernelPack) -> dict:
    """Worst violations of the kernel identities and bounds over a pack."""
    ident = np.abs(pack.s + pack.r - pack.z1 * pack.z2 * pack.vtilde)
    scale = np.maximum(1.0, np.abs(pack.z1 * pack.z2 * pack.vtilde))
    return {
        "s_plus_r": float(np.max(ident / scale)),
        "delta_quotient": float(np.max(np.abs(pack.delta - pack.delta_quotient))),
        "max_abs_u": float(np.max(np.abs(pack.u))),
        "series_ratio": float(np.max(np.abs(pack.delta / (1.0 - pack.u) ** 2 - 1.0))),
    }


# -- contour grid ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ContourGrid:
    """Upper-half contour nodes with their WPoints; the lower half is the mirror image."""

    z: np.ndarray
    weights: np.ndarray
    points: WPoint
    n: int


def contour_grid(model: SignalModel, support: SpectralSupport, contour: RectContour,
                 n: int) -> ContourGrid:
    z, dz = contour.upper_path(n)
    return ContourGrid(z=z, weights=dz, points=w_solve(model, z, support), n=int(n))


# -- variance coefficients -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VarianceTable:
    model_ref: SignalModel
    group_values: np.ndarray  # distinct eigenvalues, noise 0 last
    values: np.ndarray  # (G, G) symmetric; nan where not computed
    method: str
    meta: dict = field(default_factory=dict)

    def group_of(self, k: int) -> int:
        """Group row of 1-based direction index k."""
        if not 1 <= k <= self.model_ref.M:
            raise ConfigError(f"index {k} outside 1..{self.model_ref.M}")
        return int(self.model_ref.group_index()[k - 1])

    def value(self, k: int, l: int) -> float:
        v = self.values[self.group_of(k), self.group_of(l)]
        if np.isnan(v):
            raise ConfigError(f"pair ({k}, {l}) is not in the table")
        return float(v)

    @property
    def pairs(self) -> dict:
        """Map (k, l) over representative 1-based indices of each group pair to the value."""
        gi = self.model_ref.group_index()
        rep = [int(np.flatnonzero(gi == g)[0]) + 1 for g in range(self.group_values.size)]
        out = {}
        for g, kg in enumerate(rep):
            for h, kh in enumerate(rep):
                if not np.isnan(self.values[g, h]):
                    out[(kg, kh)] = float(self.values[g, h])
        return out

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "group_values": self.group_values.tolist(),
            "values": [[None if np.isnan(x) else float(x) for x in row] for row in self.values],
            "meta": self.meta,
        }


def _pair_integrals(model: SignalModel, grid: ContourGrid, pairs, trad: bool):
    """Return (vartheta, imaginary residue) for each group pair on one grid."""
    vals, _ = model.groups()
    p = grid.points
    W = grid.weights
    out = []
    packs = [kernel_pack(model, p, p, outer=True), kernel_pack(model, p, p.conj(), outer=True)]
    weights = [(W, W), (W, -np.conj(W))]
    for g, h in pairs:
        lg, lh = vals[g], vals[h]
        total = []
        for pack, q2, (Wa, Wb) in zip(packs, (p, p.conj()), weights):
            w1, w2 = p.w[:, None], q2.w[None, :]
            if trad:
                x1, x2 = p.one_plus_a[:, None], q2.one_plus_a[None, :]
            else:
                x1, x2 = p.wprime[:, None], q2.wprime[None, :]
            den = (lg - w1) * (lh - w1) * (lg - w2) * (lh - w2) * pack.delta
            F = pack.theta(lg, lh) * x1 * x2 / den
            total.append(Wa @ F @ Wb)
        I_uu, I_ul = total
        full = 2.0 * I_uu.real + 2.0 * I_ul
        scale = -model.sigma2 / (8.0 * np.pi**2)
        out.append((float(scale * full.real), float(abs(scale * full.imag))))
    return out


def _group_pairs(G: int, pairs) -> list:
    if pairs is None:
        return [(g, h) for g in range(G) for h in range(g, G)]
    return sorted({(min(g, h), max(g, h)) for g, h in pairs})


def vartheta_table(model: SignalModel, support: SpectralSupport | None, contour: RectContour | None,
                   method: str = "numeric", group_pairs=None, n: int = DEFAULT_NODES) -> VarianceTable:
    """ϑ over distinct-eigenvalue group pairs (row/column G-1 is the noise group).

    method: numeric | trad_numeric (double contour quadrature) or
    spiked_closed | trad_closed (fixed-rank closed forms).
    """
    vals, _ = model.groups()
    G = vals.size
    pairs = _group_pairs(G, group_pairs)
    table = np.full((G, G), np.nan)
    meta: dict = {}
    if method in ("numeric", "trad_numeric"):
        if support is None or contour is None:
            raise ConfigError("numeric variance needs the support and a contour")
        trad = method == "trad_numeric"
        n = int(n)
        prev = None
        while True:
            res = _pair_integrals(model, contour_grid(model, support, contour, n), pairs, trad)
            cur = np.array([r[0] for r in res])
            if prev is not None:
                change = np.max(np.abs(cur - prev) / np.maximum(np.abs(cur), 1e-12))
                if change < VARTHETA_RTOL:
                    break
            if n >= MAX_NODES:
                raise ConvergenceError(f"double contour quadrature unstable at {n} nodes per segment")
            prev, n = cur, 2 * n
        imag = max(r[1] for r in res)
        if imag > IMAG_TOL * max(1.0, float(np.max(np.abs(cur)))):
            raise ConvergenceError(f"variance coefficient has imaginary residue {imag:.3e}")
        meta = {"nodes_per_segment": n, "imag_residue": imag, "rel_change": float(change)}
        for (g, h), val in zip(pairs, cur):
            table[g, h] = table[h, g] = val
    elif method in ("spiked_closed", "trad_closed"):
        fn = vartheta_spiked_value if method == "spiked_closed" else vartheta_trad_closed_value
        for g, h in pairs:
            table[g, h] = table[h, g] = fn(model, vals[g], vals[h])
    else:
        raise ConfigError(f"unknown variance method {method!r}")
    if np.nanmin(table) < -1e-10:
        raise ConvergenceError(f"negative variance coefficient {np.nanmin(table):.3e}")
    return VarianceTable(model_ref=model, group_values=vals, values=table, method=method, meta=meta)


def _groups_of(model: SignalModel, k: int, l: int) -> tuple[int, int]:
    for i in (k, l):
        if not 1 <= i <= model.M:
            raise ConfigError(f"index {i} outside 1..{model.M}")
    gi = model.group_index()
    return int(gi[k - 1]), int(gi[l - 1])


def vartheta_numeric(model: SignalModel, support: SpectralSupport, contour: RectContour,
                     k: int, l: int, n: int = DEFAULT_NODES) -> float:
    g, h = _groups_of(model, k, l)
    return float(vartheta_table(model, support, contour, "numeric", [(g, h)], n).values[g, h])


def _spiked_check(model: SignalModel) -> None:
    pack = spiked_pack(model)
    if not pack.separated:
        raise SeparationError(f"spike below threshold (margin {pack.margin:.6g})")


def vartheta_spiked_value(model: SignalModel, lk: float, ll: float) -> float:
    _spiked_check(model)
    s2, c = model.sigma2, model.c
    s4c = s2 * s2 * c
    if lk == 0.0 and ll == 0.0:
        return 0.0
    num = s4c * (lk * ll + (lk + ll) * s2 + s2 * s2) * (lk * ll + s4c)
    den = 2.0 * (lk * lk - s4c) * (ll * ll - s4c) * (lk * ll - s4c)
    return float(num / den)


def vartheta_spiked(model: SignalModel, k: int, l: int) -> float:
    lam = model.lambda_full()
    _groups_of(model, k, l)
    return vartheta_spiked_value(model, lam[k - 1], lam[l - 1])


def vartheta_trad_closed_value(model: SignalModel, lk: float, ll: float) -> float:
    _spiked_check(model)
    s2, c = model.sigma2, model.c
    s4c = s2 * s2 * c
    if lk == 0.0 and ll == 0.0:
        return 0.0
    if lk == 0.0 or ll == 0.0:
        lam = max(lk, ll)
        return float(s2 * (lam + s2) * (lam * lam - s4c) / (2.0 * lam * lam * (lam + s2 * c) ** 2))
    p = lk * ll
    t = lk + ll
    chi = (p * (p + s2 * t + s2 * s2) * ((1.0 + c) * (p + s4c) + 2.0 * s2 * c * t)
           - c * (p - s4c) * (p + s2 * t + s4c) ** 2)
    den = 2.0 * p * (lk + s2 * c) ** 2 * (ll + s2 * c) ** 2 * (p - s4c)
    return float(s4c * chi / den)


def vartheta_trad(model: SignalModel, support: SpectralSupport | None, contour: RectContour | None,
                  k: int, l: int, method: str = "numeric", n: int = DEFAULT_NODES) -> float:
    g, h = _groups_of(model, k, l)
    if method == "numeric":
        return float(vartheta_table(model, support, contour, "trad_numeric", [(g, h)], n).values[g, h])
    if method == "closed":
        vals, _ = model.groups()
        return vartheta_trad_closed_value(model, vals[g], vals[h])
    raise ConfigError(f"unknown method {method!r}")


def vartheta_lower_bound(model: SignalModel, k: int, l: int) -> float:
    """Closed-form lower bound on ϑ(k, l) for each signal/noise regime."""
    lam = model.lambda_full()
    _groups_of(model, k, l)
    K, s2 = model.K, model.sigma2
    sk, sl = k <= K, l <= K
    if sk and sl:
        return (model.M - K) / model.N * s2 * s2 / (2.0 * lam[k - 1] * lam[l - 1])
    if not sk and not sl:
        return s2 * s2 / (2.0 * model.N) * float(np.sum(1.0 / model.lambdas**2))
    return s2 / (2.0 * lam[(k if sk else l) - 1])


# -- covariance assembly ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CovarianceAssembly:
    gamma: np.ndarray  # (2, 2)
    per_pair: dict  # (g, h) -> (2, 2) over group pairs
    eta_proj: dict  # (i, j) -> group sums of d_i* u_k u_k* d_j
    nondegeneracy: float

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "nondegeneracy": self.nondegeneracy,
            "eta_proj": {f"{i}{j}": [[x.real, x.imag] for x in v] for (i, j), v in self.eta_proj.items()},
        }


def gamma_pair(e11k, e22k, e12k, e11l, e22l, e12l) -> np.ndarray:
    p = e12k * e12l
    sym = 0.5 * (e11k * e22l + e11l * e22k).real
    return np.array([[p.real + sym, -p.imag], [-p.imag, -p.real + sym]])


def gamma_assemble(model: SignalModel, q: SubspaceQuery, table: VarianceTable) -> CovarianceAssembly:
    q11 = SubspaceQuery(q.d1, q.d1)
    q22 = SubspaceQuery(q.d2, q.d2)
    E11 = group_projections(model, q11)
    E22 = group_projections(model, q22)
    E12 = group_projections(model, q)
    G = E12.size
    gamma = np.zeros((2, 2))
    per_pair = {}
    nd_a = 0.0
    nd_b = 0.0 + 0.0j
    weight_tol = 1e-14 * max(1.0, q.norms[0] * q.norms[1]) ** 2
    for g in range(G):
        for h in range(G):
            blk = gamma_pair(E11[g], E22[g], E12[g], E11[h], E22[h], E12[h])
            if np.max(np.abs(blk)) <= weight_tol:
                continue
            t = table.values[g, h]
            if np.isnan(t):
                raise ConfigError(f"variance table lacks group pair ({g}, {h})")
            per_pair[(g, h)] = blk
            gamma += t * blk
            nd_a += t * (E11[g] * E22[h]).real
            nd_b += t * E12[g] * E12[h]
    gamma = 0.5 * (gamma + gamma.T)
    return CovarianceAssembly(gamma=gamma, per_pair=per_pair,
                              eta_proj={(1, 1): E11, (2, 2): E22, (1, 2): E12},
                              nondegeneracy=float(nd_a - abs(nd_b)))


def mse_predict(assembly: CovarianceAssembly, xi: complex = 1.0, tol: float = 1e-10) -> tuple[float, bool]:
    """Predicted variance of sqrt(N) Re(xi (eta_hat - eta)) and the nondegeneracy verdict."""
    x = np.array([complex(xi).real, complex(xi).imag])
    return float(x @ assembly.gamma @ x), bool(assembly.nondegeneracy > tol)


def quadratic_variance(model: SignalModel, d: np.ndarray, table: VarianceTable) -> float:
    """2 sum_{k,l} ϑ(k,l) |d* u_k|^2 |d* u_l|^2 for a quadratic form d* Pi d."""
    E = group_projections(model, SubspaceQuery(d, d)).real
    mask = E != 0
    sub = table.values[np.ix_(mask, mask)]
    if np.any(np.isnan(sub)):
        raise ConfigError("variance table lacks a needed group pair")
    return float(2.0 * E[mask] @ sub @ E[mask])
