"""QR eigensolver against closed forms, an independent cubic-root oracle,
and algebraic identities (trace, determinant, similarity)."""

import cmath
import math

import numpy as np
import pytest

from thermoden import eigen
from thermoden.errors import NumericError, ShapeError


def match_multisets(got, want, tol):
    """Greedy nearest-neighbor matching of two complex multisets."""
    got = list(got)
    assert len(got) == len(want)
    for w in want:
        best = min(range(len(got)), key=lambda i: abs(got[i] - w))
        assert abs(got[best] - w) <= tol, f"no match for {w}: nearest {got[best]}"
        got.pop(best)


def cubic_roots(a2, a1, a0):
    """Roots of x^3 + a2 x^2 + a1 x + a0 via the depressed-cubic formulas.

    Independent of any matrix machinery: trigonometric form for three real
    roots, Cardano cube roots for the complex-pair case.
    """
    p = a1 - a2**2 / 3.0
    q = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + a0
    shift = -a2 / 3.0
    disc = -4.0 * p**3 - 27.0 * q**2
    if abs(p) < 1e-14 and abs(q) < 1e-14:
        return [shift, shift, shift]
    if disc >= 0.0:  # three real roots
        r = 2.0 * math.sqrt(-p / 3.0)
        phi = math.acos(max(-1.0, min(1.0, 3.0 * q / (2.0 * p) * math.sqrt(-3.0 / p))))
        return [shift + r * math.cos(phi / 3.0 - 2.0 * math.pi * k / 3.0)
                for k in range(3)]
    inner = math.sqrt(q**2 / 4.0 + p**3 / 27.0)
    u = np.cbrt(-q / 2.0 + inner)
    v = np.cbrt(-q / 2.0 - inner)
    real = shift + u + v
    re = shift - (u + v) / 2.0
    im = math.sqrt(3.0) / 2.0 * (u - v)
    return [real, complex(re, im), complex(re, -im)]


def char_poly_roots_3x3(m):
    tr = np.trace(m)
    minors = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
              + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
              + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
    det = np.linalg.det(m)
    return cubic_roots(-tr, minors, -det)


def test_identity_exact():
    spec = eigen.eigenvalues(np.eye(7))
    np.testing.assert_array_equal(spec.eigenvalues, np.ones(7, dtype=complex))
    assert spec.spectral_radius == 1.0


def test_rotation_pure_imaginary():
    spec = eigen.eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    match_multisets(spec.eigenvalues, [1j, -1j], tol=1e-15)


def test_diagonal_matrix():
    spec = eigen.eigenvalues(np.diag([3.0, -1.0, 0.5]))
    match_multisets(spec.eigenvalues, [3.0, -1.0, 0.5], tol=1e-12)


def test_3x3_vs_characteristic_polynomial_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m = rng.normal(size=(3, 3)) * rng.choice([0.1, 1.0, 10.0])
        got = eigen.eigenvalues(m).eigenvalues
        want = char_poly_roots_3x3(m)
        scale = max(1.0, max(abs(w) for w in want))
        match_multisets(got, want, tol=1e-8 * scale)


def test_trace_identity_random():
    rng = np.random.default_rng(2)
    for _ in range(30):
        n = int(rng.integers(2, 81))
        m = rng.normal(size=(n, n))
        spec = eigen.eigenvalues(m)
        assert abs(spec.eigenvalues.sum() - np.trace(m)) <= 1e-8 * n * np.abs(m).max()


def test_determinant_identity_well_conditioned():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n = int(rng.integers(2, 31))
        m = rng.normal(size=(n, n)) + 3.0 * np.eye(n)  # push away from singular
        spec = eigen.eigenvalues(m)
        prod = np.prod(np.abs(spec.eigenvalues))
        det = abs(np.linalg.det(m))
        assert prod == pytest.approx(det, rel=1e-6)


def test_similarity_invariance():
    rng = np.random.default_rng(4)
    for _ in range(10):
        n = int(rng.integers(2, 41))
        m = rng.normal(size=(n, n))
        q, _ = np.linalg.qr(rng.normal(size=(n, n)))
        sim = q.T @ m @ q
        a = eigen.eigenvalues(m).eigenvalues
        b = eigen.eigenvalues(sim).eigenvalues
        match_multisets(b, a, tol=1e-6 * max(1.0, np.abs(a).max()))


def test_conjugate_pairs():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.normal(size=(12, 12))
        ev = eigen.eigenvalues(m).eigenvalues
        complex_part = sorted([z for z in ev if z.imag > 1e-10], key=abs)
        conj_part = sorted([z.conjugate() for z in ev if z.imag < -1e-10], key=abs)
        assert len(complex_part) == len(conj_part)
        for a, b in zip(complex_part, conj_part):
            assert abs(a - b) < 1e-8


def test_defective_matrix():
    # Jordan block: repeated eigenvalue without full eigenvector basis
    j = np.array([[2.0, 1.0, 0.0], [0.0, 2.0, 1.0], [0.0, 0.0, 2.0]])
    ev = eigen.eigenvalues(j).eigenvalues
    match_multisets(ev, [2.0, 2.0, 2.0], tol=1e-5)  # defective: O(eps^(1/3)) accuracy


def test_zero_matrix():
    ev = eigen.eigenvalues(np.zeros((5, 5))).eigenvalues
    np.testing.assert_array_equal(ev, np.zeros(5, dtype=complex))


def test_shape_and_finiteness_errors():
    with pytest.raises(ShapeError):
        eigen.eigenvalues(np.ones((2, 3)))
    with pytest.raises(NumericError):
        eigen.eigenvalues(np.array([[np.nan, 0.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        eigen.eigenvalues(np.eye(513))


def test_numba_kernel_matches_numpy_fallback():
    kernel = eigen._get_kernel()
    if kernel is None:
        pytest.skip("numba unavailable; single code path")
    rng = np.random.default_rng(6)
    for _ in range(10):
        n = int(rng.integers(3, 41))
        m = rng.normal(size=(n, n))
        fast = eigen.eigenvalues(m).eigenvalues
        slow = eigen._francis(eigen._hessenberg(m), 100 * n)
        match_multisets(fast, slow, tol=1e-9 * max(1.0, np.abs(fast).max()))


def test_spectral_radius_matches_lapack():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 81))
        m = rng.normal(size=(n, n))
        ours = eigen.eigenvalues(m).spectral_radius
        ref = np.max(np.abs(np.linalg.eigvals(m)))
        assert ours == pytest.approx(ref, rel=1e-9, abs=1e-10)


def test_analyze_identity_transition_block():
    from thermoden.blocks import BlockConfig, build_block
    rng = np.random.default_rng(8)
    blk = build_block(BlockConfig(in_dim=4, out_dim=4, kind="mlp", layers=1,
                                  width=4), rng, "fx")
    blk.layer_maps[0].weight.values = np.eye(4)

    class Shim:
        def dynamics_weights(self):
            return blk.square_weights()

    report = eigen.analyze_model(Shim())
    match_multisets(report.spectra[0].eigenvalues, [1.0] * 4, tol=1e-12)
    assert report.dominant_counts["fx.layer0"] == 4


def test_analyze_pf_models_within_bounds():
    from thermoden.ssm import build_structured
    for seed in range(20):
        model = build_structured(n_y=3, n_u=2, n_d=1, horizon=4, seed=seed,
                                 n_x=10, layers=2, width=10, weight_kind="pf",
                                 lambda_min=0.8, lambda_max=1.0)
        report = eigen.analyze_model(model)
        assert report.bounds_satisfied
        for spec in report.spectra:
            assert 0.8 - 1e-8 <= spec.spectral_radius <= 1.0 + 1e-8


def test_analyze_unconstrained_flags_but_does_not_raise():
    from thermoden.blocks import BlockConfig, build_block
    rng = np.random.default_rng(9)
    blk = build_block(BlockConfig(in_dim=3, out_dim=3, kind="mlp", layers=1,
                                  width=3), rng, "fx")
    blk.layer_maps[0].weight.values = 2.0 * np.eye(3)  # radius 2 > 1

    class Shim:
        def dynamics_weights(self):
            return blk.square_weights()

    report = eigen.analyze_model(Shim())
    assert report.spectra[0].spectral_radius == pytest.approx(2.0)
    assert report.bound_violations == []  # unconstrained weights carry no bounds


def test_empty_report_warns():
    class Empty:
        def dynamics_weights(self):
            return []

    with pytest.warns(UserWarning, match="no square dynamics weights"):
        report = eigen.analyze_model(Empty())
    assert report.spectra == []


def test_spectrum_csv_round_trip(tmp_path):
    import csv
    spec = eigen.eigenvalues(np.array([[0.0, 1.0], [-1.0, 0.0]]), label="fx")
    report = eigen.EigenReport(spectra=[spec])
    path = tmp_path / "eigen_test.csv"
    eigen.write_spectrum_csv(report, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["re", "im", "source", "spectral_radius"]
    assert len(rows) == 3
    assert float(rows[1][3]) == pytest.approx(1.0)
