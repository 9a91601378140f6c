from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmusic_clt.empirical import decompose, spectrum_from_eigs
from gmusic_clt.errors import ConfigError, SeparationError
from gmusic_clt.estimators import (
    RectContour,
    contour_build,
    eta_improved,
    eta_spiked,
    eta_traditional,
    eta_traditional_limit,
    improved_weights_quadrature,
    improved_weights_residue,
    real_contour_integral,
    traditional_weights,
)
from gmusic_clt.model import SubspaceQuery, build_model, canonical_vector, eta_true, sample_realization
from gmusic_clt.spectrum import support_compute, w_solve

FIG3 = build_model(10, 20, 1.0, [10, 10, 10, 5, 5])
FIG4 = build_model(20, 40, 1.0, [5, 6])
E_M = canonical_vector(20, 20)


def _complex_vec(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_contour_encloses_signal_clusters() -> None:
    s = support_compute(FIG3)
    c = contour_build(s, 32)
    assert s.clusters[0, 1] < s.thresholds[1] < c.x_lo < s.clusters[1, 0]
    assert c.x_hi > s.clusters[-1, 1]
    assert c.delta >= 0.25 and c.nodes_per_side == 32


def test_contour_rejects_degenerate_inputs() -> None:
    with pytest.raises(SeparationError):
        contour_build(support_compute(build_model(4, 8, 1.0, [])))
    with pytest.raises(ConfigError):
        contour_build(support_compute(FIG3), 0)
    with pytest.raises(SeparationError):
        contour_build(support_compute(build_model(10, 20, 1.0, [0.3])))


def test_contour_integral_oracles() -> None:
    # (1/2 pi i) clockwise around poles inside: 1/(lam - z) integrates to 1
    c = RectContour(1.0, 5.0, 0.5, 0.25, 16)
    val, _ = real_contour_integral(lambda z: 1.0 / (np.array([2.0, 4.0, 7.0])[:, None] - z), c)
    assert np.allclose(val, [1.0, 1.0, 0.0], atol=1e-12)
    # w'/((lam - w)(0 - w)) around the signal clusters of a one-spike model gives -1/lam
    m = build_model(40, 80, 1.0, [5.0])
    s = support_compute(m)
    ct = contour_build(s)

    def g(z):
        p = w_solve(m, z, s)
        return p.wprime / ((5.0 - p.w) * (0.0 - p.w))

    val, _ = real_contour_integral(g, ct)
    assert abs(val + 1.0 / 5.0) < 1e-10


def test_traditional_without_signal() -> None:
    m = build_model(6, 12, 1.0, [])
    rng = np.random.default_rng(0)
    q = SubspaceQuery(_complex_vec(rng, 6), _complex_vec(rng, 6))
    spec = decompose(m, sample_realization(m, 1))
    assert eta_traditional(spec, q) == np.vdot(q.d1, q.d2)
    assert eta_improved(spec, None, q) == np.vdot(q.d1, q.d2)


def test_traditional_annihilates_sample_signal_vector() -> None:
    spec = decompose(FIG4, sample_realization(FIG4, 3))
    u1 = spec.u_hat[:, 0]
    assert abs(eta_traditional(spec, SubspaceQuery(u1, u1))) < 1e-12


def test_traditional_bias_exceeds_improved() -> None:
    q = SubspaceQuery(E_M, E_M)
    trad, imp = [], []
    for seed in range(200):
        spec = decompose(FIG4, sample_realization(FIG4, seed))
        trad.append(eta_traditional(spec, q).real)
        imp.append(eta_improved(spec, None, q).real)
    assert abs(np.mean(trad) - 1.0) > abs(np.mean(imp) - 1.0)


def test_traditional_limit_quadrature_is_stable() -> None:
    s = support_compute(FIG4)
    a = traditional_weights(FIG4, s, contour_build(s, 128))
    b = traditional_weights(FIG4, s, contour_build(s, 256))
    assert np.max(np.abs(a - b)) < 1e-9


def test_traditional_limit_vanishes_off_signal() -> None:
    s = support_compute(FIG4)
    q = SubspaceQuery(canonical_vector(20, 5), canonical_vector(20, 6))
    assert abs(eta_traditional_limit(FIG4, s, contour_build(s), q)) < 1e-12


def test_traditional_limit_matches_monte_carlo() -> None:
    m = build_model(200, 400, 1.0, [5.0])
    s = support_compute(m)
    u1 = m.U[:, 0]
    q = SubspaceQuery(u1, u1)
    limit = eta_traditional_limit(m, s, contour_build(s), q).real
    assert 0.0 < limit < 1.0
    draws = []
    for seed in range(1000):
        S = sample_realization(m, seed).sigma_matrix
        _, vecs = np.linalg.eigh(S @ S.conj().T)
        draws.append(1.0 - abs(vecs[0, -1]) ** 2)
    assert abs(np.mean(draws) / limit - 1.0) < 0.02


def test_dual_path_agreement_seed_7() -> None:
    s = support_compute(FIG4)
    spec = decompose(FIG4, sample_realization(FIG4, 7))
    res, quad = eta_improved(spec, contour_build(s), SubspaceQuery(E_M, E_M), "both")
    assert abs(res - quad) <= 1e-10 * max(1.0, abs(res))


def test_residue_weights_match_quadrature_weights() -> None:
    s = support_compute(FIG3)
    c = contour_build(s)
    spec = decompose(FIG3, sample_realization(FIG3, 11))
    a = improved_weights_residue(spec)
    b = improved_weights_quadrature(spec, c)
    assert np.max(np.abs(a - b)) < 1e-10
    a = improved_weights_residue(spec, literal=True)
    b = improved_weights_quadrature(spec, c, literal=True)
    assert np.max(np.abs(a - b)) < 1e-10


def test_residue_falls_back_on_ties() -> None:
    s = support_compute(FIG4)
    spec = decompose(FIG4, sample_realization(FIG4, 2))
    lam = spec.lambda_hat.copy()
    lam[5] = lam[6]
    tied = spectrum_from_eigs(FIG4, lam, spec.u_hat)
    q = SubspaceQuery(E_M, E_M)
    assert abs(eta_improved(tied, contour_build(s), q) - eta_improved(tied, contour_build(s), q, "quadrature")) < 1e-14


def test_crossing_moved_away_from_pole() -> None:
    s = support_compute(FIG4)
    c = contour_build(s)
    spec = decompose(FIG4, sample_realization(FIG4, 7))
    lam = spec.lambda_hat.copy()
    lam[2] = c.x_lo - 0.01  # a noise eigenvalue right under the crossing
    near = spectrum_from_eigs(FIG4, lam, spec.u_hat)
    q = SubspaceQuery(E_M, E_M)
    res, quad = eta_improved(near, c, q, "both")
    assert abs(res - quad) < 1e-8


def test_unknown_method_rejected() -> None:
    spec = decompose(FIG4, sample_realization(FIG4, 1))
    with pytest.raises(ConfigError):
        eta_improved(spec, None, SubspaceQuery(E_M, E_M), "magic")


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_estimator_symmetries(seed: int) -> None:
    rng = np.random.default_rng(seed)
    spec = decompose(FIG4, sample_realization(FIG4, seed))
    d1, d2 = _complex_vec(rng, 20), _complex_vec(rng, 20)
    q, qs = SubspaceQuery(d1, d2), SubspaceQuery(d2, d1)
    for f in (eta_traditional, lambda sp, qq: eta_improved(sp, None, qq)):
        assert abs(f(spec, q) - np.conj(f(spec, qs))) < 1e-10
        assert abs(f(spec, SubspaceQuery(d1, d1)).imag) < 1e-10
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 20))
    gauged = dataclasses.replace(spec, u_hat=spec.u_hat * phases[None, :])
    assert abs(eta_improved(spec, None, q) - eta_improved(gauged, None, q)) < 1e-10
    assert abs(eta_traditional(spec, q) - eta_traditional(gauged, q)) < 1e-10


def test_spiked_weight_at_known_image_point() -> None:
    m = build_model(2, 4, 1.0, [1.0])
    spec = spectrum_from_eigs(m, [6.6, 0.2])
    d = canonical_vector(2, 1)
    assert abs(eta_spiked(spec, SubspaceQuery(d, d)) - (1 - 1.1224490)) < 1e-7


def test_spiked_weight_tends_to_one() -> None:
    m = build_model(2, 4, 1.0, [1.0])
    spec = spectrum_from_eigs(m, [1e6, 0.2])
    d = canonical_vector(2, 1)
    assert abs(eta_spiked(spec, SubspaceQuery(d, d))) < 1e-5


def test_spiked_rejects_bulk_eigenvalue() -> None:
    m = build_model(2, 4, 1.0, [1.0])
    spec = spectrum_from_eigs(m, [2.0, 0.2])
    with pytest.raises(SeparationError, match="sample eigenvalue 1"):
        eta_spiked(spec, SubspaceQuery(canonical_vector(2, 1), canonical_vector(2, 1)))


def test_spiked_estimator_tracks_improved() -> None:
    e1 = canonical_vector(20, 1)
    q = SubspaceQuery(e1, e1)
    gap_s, gap_t = [], []
    for seed in range(100):
        spec = decompose(FIG4, sample_realization(FIG4, seed))
        imp = eta_improved(spec, None, q)
        gap_s.append(abs(eta_spiked(spec, q) - imp))
        gap_t.append(abs(eta_traditional(spec, q) - imp))
    assert np.median(gap_s) < np.median(gap_t)


def test_improved_is_closer_to_truth_on_average() -> None:
    q = SubspaceQuery(E_M, E_M)
    assert eta_true(FIG4, q) == 1.0
    spec = decompose(FIG4, sample_realization(FIG4, 0))
    assert abs(eta_improved(spec, None, q) - 1.0) < 0.1
