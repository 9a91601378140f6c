"""Seeded Monte Carlo check of the fluctuation theory."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .empirical import confinement_check, decompose
from .errors import ConfigError, SeparationError
from .estimators import (
    contour_build,
    eta_improved,
    eta_traditional,
    eta_traditional_limit,
)
from .fluctuations import gamma_assemble, mse_predict, vartheta_table
from .model import Scenario, eta_true, sample_realization, trial_seed
from .spectrum import support_compute

STATISTICS = ("quadratic", "bilinear-real", "bivariate")
ESTIMATORS = ("improved", "traditional")
MIN_KS_SAMPLES = 100


def ks_normal(samples) -> float:
    """Sup-norm distance between the empirical CDF of ``samples`` and the N(0, 1) CDF."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_KS_SAMPLES:
        raise ConfigError(f"need at least {MIN_KS_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("samples must be finite")
    return float(stats.kstest(x, "norm").statistic)


def summarize(x: np.ndarray) -> dict:
    return {
        "mean": float(np.mean(x)),
        "variance": float(np.var(x, ddof=1)),
        "skewness": float(stats.skew(x)),
        "excess_kurtosis": float(stats.kurtosis(x)),
    }


@dataclass(frozen=True, eq=False)
class CltReport:
    trials: int
    statistic_kind: str
    estimator: str
    samples_summary: dict
    ks_distance: float
    predicted_variance: float
    empirical_raw_variance: float
    histogram: tuple  # (edges, counts)
    master_seed: int
    gamma: np.ndarray
    confinement_failures: int
    samples: np.ndarray = field(repr=False)  # standardized statistic, (trials,) or (trials, 2)
    raw: np.ndarray = field(repr=False)  # sqrt(N)(eta_hat - center), complex
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        edges, counts = self.histogram
        return {
            "trials": self.trials,
            "statistic_kind": self.statistic_kind,
            "estimator": self.estimator,
            "samples_summary": self.samples_summary,
            "ks_distance": self.ks_distance,
            "predicted_variance": self.predicted_variance,
            "empirical_raw_variance": self.empirical_raw_variance,
            "gamma": self.gamma.tolist(),
            "confinement_failures": self.confinement_failures,
            "master_seed": self.master_seed,
            "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
            **self.extra,
        }

    def histogram_rows(self) -> list[tuple[float, float, int, float]]:
        edges, counts = self.histogram
        centers = 0.5 * (edges[:-1] + edges[1:])
        pdf = stats.norm.pdf(centers)
        return [(float(a), float(b), int(n), float(p)) for a, b, n, p in zip(edges[:-1], edges[1:], counts, pdf)]


def _whitener(gamma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(gamma)
    if vals.min() <= 1e-12 * max(1.0, vals.max()):
        raise ConfigError("covariance is singular; the bivariate statistic is degenerate")
    return vecs @ np.diag(vals**-0.5) @ vecs.T


def run_trials(scenario: Scenario, trials: int, master_seed: int, estimator: str = "improved",
               statistic: str = "quadratic", threads: int = 1, nodes: int = 64,
               center: str = "limit") -> CltReport:
    """Run ``trials`` independent realizations and standardize sqrt(N)(eta_hat - eta).

    The traditional estimator is centred at its own deterministic limit unless
    ``center='true'``, which centres it at eta and exposes its bias.
    """
    if int(trials) != trials or trials < 1:
        raise ConfigError("trials must be a positive integer")
    if statistic not in STATISTICS:
        raise ConfigError(f"unknown statistic {statistic!r}")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator {estimator!r}")
    if center not in ("limit", "true"):
        raise ConfigError(f"unknown centring {center!r}")
    model, q = scenario.model, scenario.query
    if statistic == "quadratic" and not q.is_quadratic:
        raise ConfigError("quadratic statistic needs d1 == d2")
    support = support_compute(model)
    if not support.separated:
        raise SeparationError("separation conditions fail; the estimator is not consistent here")
    contour = contour_build(support, nodes)

    method = "numeric" if estimator == "improved" else "trad_numeric"
    table = vartheta_table(model, support, contour, method)
    asm = gamma_assemble(model, q, table)
    variance, _ = mse_predict(asm, q.xi)
    target = eta_true(model, q)
    if estimator == "traditional" and center == "limit":
        target = eta_traditional_limit(model, support, contour, q)

    def one(t: int) -> tuple[complex, bool]:
        spec = decompose(model, sample_realization(model, trial_seed(master_seed, t)))
        ok = confinement_check(spec, support).lambdas_ok
        if estimator == "improved":
            est = eta_improved(spec, contour, q, "residue")
        else:
            est = eta_traditional(spec, q)
        return est, ok

    idx = range(int(trials))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(one, idx, chunksize=64))
    else:
        results = [one(t) for t in idx]
    est = np.array([r[0] for r in results])
    failures = int(sum(not r[1] for r in results))
    raw = np.sqrt(model.N) * (est - target)
    extra: dict = {}
    if statistic == "bivariate":
        Wh = _whitener(asm.gamma)
        z = np.stack([raw.real, -raw.imag], axis=1) @ Wh.T
        ks = [ks_normal(z[:, 0]), ks_normal(z[:, 1])]
        extra = {
            "ks_per_coordinate": ks,
            "cross_correlation": float(np.corrcoef(z[:, 0], z[:, 1])[0, 1]),
        }
        samples = z
        flat = z[:, 0]
        ks_distance = max(ks)
        raw_scalar = raw.real
    else:
        if not variance > 0:
            raise ConfigError(
                "predicted variance is zero: fluctuations are faster than N^-1/2 for this query"
            )
        raw_scalar = (q.xi * raw).real
        samples = raw_scalar / np.sqrt(variance)
        flat = samples
        ks_distance = ks_normal(samples) if samples.size >= MIN_KS_SAMPLES else float("nan")
    counts, edges = np.histogram(flat, bins=min(60, max(1, int(np.sqrt(flat.size)))))
    return CltReport(
        trials=int(trials),
        statistic_kind="bivariate-whitened" if statistic == "bivariate" else "scalar-real",
        estimator=estimator,
        samples_summary=summarize(flat) if flat.size > 1 else {},
        ks_distance=ks_distance,
        predicted_variance=variance,
        empirical_raw_variance=float(np.var(raw_scalar, ddof=1)) if raw.size > 1 else float("nan"),
        histogram=(edges, counts),
        master_seed=int(master_seed),
        gamma=asm.gamma,
        confinement_failures=failures,
        samples=samples,
        raw=raw,
        extra=extra,
    )
