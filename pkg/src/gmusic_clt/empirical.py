"""Eigen-analysis of one realization.

Indexing is descending throughout (lambda_hat[0] is the largest sample
eigenvalue). Where the theory indexes ascending, "the M-K smallest" and "the K
largest" are what is meant and that is what the code uses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import Realization, SignalModel
from .spectrum import SpectralSupport

@dataclass(frozen=True, eq=False)
class EmpiricalSpectrum:
    lambda_hat: np.ndarray  # (M,) descending
    u_hat: np.ndarray  # (M, M) columns match lambda_hat
    omega_hat: np.ndarray  # (M,) descending zeros of 1 + sigma2 c m_hat
    model_ref: SignalModel

    @property
    def beta(self) -> float:
        """sigma2 c / M, the weight of the rank-one update whose eigenvalues are omega_hat."""
        m = self.model_ref
        return m.sigma2 * m.c / m.M


def secular_roots(lam: np.ndarray, beta: float, max_iter: int = 200) -> np.ndarray:
    """Zeros of 1 + beta * sum_j 1/(lam_j - x), lam descending.

    These are the eigenvalues of diag(lam) + beta 1 1^T; root k lies in
    (lam[k], lam[k-1]) with lam[-1] := lam[0] + beta * M. Vectorized bisection.
    """
    lam = np.asarray(lam, dtype=float)
    M = lam.size
    upper = np.concatenate(([lam[0] + beta * M], lam[:-1]))
    lo, hi = lam.copy(), upper.copy()
    tied = hi <= lo
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = 1.0 + beta * np.sum(1.0 / (lam[None, :] - mid[:, None]), axis=1)
        neg = val < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
        width = hi - lo
        if np.all((width <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(mid))) | tied):
            break
    out = 0.5 * (lo + hi)
    out[tied] = lam[tied]
    return out


def secular_function(lam: np.ndarray, beta: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 1.0 + beta * np.sum(1.0 / (lam[None, :] - x[..., None]), axis=-1)


def decompose(model: SignalModel, r: Realization) -> EmpiricalSpectrum:
    S = r.sigma_matrix
    vals, vecs = np.linalg.eigh(S @ S.conj().T)
    # eigh is ascending; stable sort on -vals keeps ties in original index order
    order = np.argsort(-vals, kind="stable")
    lam = np.maximum(vals[order], 0.0)
    U = vecs[:, order]
    omega = secular_roots(lam, model.sigma2 * model.c / model.M)
    return EmpiricalSpectrum(lambda_hat=lam, u_hat=U, omega_hat=omega, model_ref=model)


def spectrum_from_eigs(model: SignalModel, lam, U=None) -> EmpiricalSpectrum:
    """Build a spectrum from given eigenvalues (descending) and optional eigenvectors."""
    lam = np.asarray(lam, dtype=float)
    if U is None:
        U = np.eye(lam.size, dtype=complex)
    return EmpiricalSpectrum(lambda_hat=lam, u_hat=np.asarray(U, dtype=complex),
                             omega_hat=secular_roots(lam, model.sigma2 * model.c / model.M),
                             model_ref=model)


def empirical_stieltjes(spec: EmpiricalSpectrum, z, literal: bool = False):
    """(m_hat, w_hat, w_hat') at z.

    w_hat(z) = z a^2 - kappa a with a = 1 + sigma2 c m_hat(z) and
    kappa = sigma2 (1 - c). ``literal=True`` uses kappa = sigma2 instead.
    """
    model = spec.model_ref
    lam = spec.lambda_hat
    z = np.asarray(z, dtype=complex)
    diff = lam - z[..., None]
    if np.any(np.abs(diff) <= 1e-14 * np.maximum(1.0, np.abs(z[..., None]))):
        raise DomainError("empirical Stieltjes transform evaluated at a sample eigenvalue")
    m_hat = np.mean(1.0 / diff, axis=-1)
    dm = np.mean(1.0 / diff**2, axis=-1)
    s2c = model.sigma2 * model.c
    kappa = model.sigma2 if literal else model.sigma2 * (1.0 - model.c)
    a = 1.0 + s2c * m_hat
    da = s2c * dm
    w_hat = z * a * a - kappa * a
    dw_hat = a * a + 2.0 * z * a * da - kappa * da
    if np.ndim(m_hat) == 0:
        return complex(m_hat), complex(w_hat), complex(dw_hat)
    return m_hat, w_hat, dw_hat


@dataclass(frozen=True)
class ConfinementVerdict:
    lambda_noise: bool
    lambda_signal: bool
    omega_noise: bool
    omega_signal: bool

    @property
    def lambdas_ok(self) -> bool:
        return self.lambda_noise and self.lambda_signal

    @property
    def omegas_ok(self) -> bool:
        return self.omega_noise and self.omega_signal

    @property
    def ok(self) -> bool:
        return self.lambdas_ok and self.omegas_ok


def confinement_check(spec: EmpiricalSpectrum, support: SpectralSupport) -> ConfinementVerdict:
    """Smallest M-K values in [t1-, t1+] and largest K in [t2-, t2+], for lambda_hat and omega_hat."""
    K = spec.model_ref.K
    t1m, t1p, t2m, t2p = support.thresholds

    def split(x):
        noise, signal = x[K:], x[:K]
        ok_n = bool(np.all((noise >= t1m) & (noise <= t1p)))
        ok_s = True if K == 0 else bool(np.all((signal >= t2m) & (signal <= t2p)))
        return ok_n, ok_s

    ln, ls = split(spec.lambda_hat)
    on, os_ = split(spec.omega_hat)
    return ConfinementVerdict(ln, ls, on, os_)
