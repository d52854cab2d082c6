"""Eigenvalues of real square matrices and spectral analysis of learned models.

The solver reduces to upper Hessenberg form with Householder similarity
transforms, then runs the implicitly shifted QR iteration (Francis double
shift, real arithmetic throughout) with deflation. Eigenvalues only; no
eigenvectors are accumulated. Intended for desk-scale matrices (n <= 512).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

DEFLATION_TOL = 1e-12
MAX_DIM = 512


@dataclass
class Spectrum:
    """Eigenvalues of one weight matrix, sorted by decreasing modulus."""

    eigenvalues: np.ndarray
    spectral_radius: float
    source_label: str = ""

    def dominant_count(self, threshold: float) -> int:
        return int(np.sum(np.abs(self.eigenvalues) > threshold))


@dataclass
class EigenReport:
    """Per-matrix spectra of a model's dynamics weights plus bound checks."""

    spectra: list[Spectrum] = field(default_factory=list)
    dominant_threshold: float = 0.8
    dominant_counts: dict[str, int] = field(default_factory=dict)
    bound_violations: list[str] = field(default_factory=list)
    lambda_min: float | None = None
    lambda_max: float | None = None

    @property
    def bounds_satisfied(self) -> bool:
        return not self.bound_violations


def _hessenberg(a: np.ndarray) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = a.copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        nx = float(np.linalg.norm(x))
        if nx == 0.0:
            continue
        # reflect x onto -+|x| e1, picking the sign that avoids cancellation
        x[0] += math.copysign(nx, x[0])
        nv = float(np.linalg.norm(x))
        if nv == 0.0:
            continue
        v = x / nv
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _eig2(a: float, b: float, c: float, d: float) -> tuple[complex, complex]:
    """Closed-form eigenvalues of [[a, b], [c, d]]; complex pairs are exact conjugates."""
    p = 0.5 * (a + d)
    det = a * d - b * c
    disc = (0.5 * (a - d)) ** 2 + b * c
    if disc >= 0.0:
        sq = math.sqrt(disc)
        # larger-magnitude root first, the other via det to dodge cancellation
        r1 = p + math.copysign(sq, p) if p != 0.0 else sq
        r2 = det / r1 if r1 != 0.0 else 0.0
        return complex(r1), complex(r2)
    sq = math.sqrt(-disc)
    return complex(p, sq), complex(p, -sq)


def eigenvalues(matrix: np.ndarray, label: str = "") -> Spectrum:
    """Full spectrum of a real square matrix.

    Raises NumericError if the QR iteration exceeds 100*n sweeps or the
    trace identity (sum of eigenvalues == trace) is violated.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"eigenvalues needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("eigenvalues: matrix has non-finite entries")
    n = a.shape[0]
    if n > MAX_DIM:
        raise ShapeError(f"matrix dimension {n} exceeds the supported maximum {MAX_DIM}")

    if n == 1:
        eigs = [complex(a[0, 0])]
    elif n == 2:
        eigs = list(_eig2(a[0, 0], a[0, 1], a[1, 0], a[1, 1]))
    else:
        kernel = _get_kernel()
        if kernel is not None:
            h = _hessenberg(a)
            count, ere, eim, mass = kernel(h, 100 * n, DEFLATION_TOL)
            if count < 0:
                raise NumericError(
                    f"QR iteration did not converge within {100 * n} sweeps; "
                    f"remaining subdiagonal mass {mass:.3e}"
                )
            eigs = [complex(r, i) for r, i in zip(ere, eim)]
        else:
            eigs = _francis(_hessenberg(a), max_sweeps=100 * n)

    eigs = sorted(eigs, key=lambda z: (-abs(z), -z.real, -z.imag))
    vals = np.array(eigs, dtype=np.complex128)

    scale = max(1e-300, float(np.max(np.abs(a))))
    trace_gap = abs(vals.sum() - np.trace(a))
    if trace_gap > 1e-8 * n * scale:
        raise NumericError(
            f"trace identity violated: |sum(eig) - trace| = {trace_gap:.3e} "
            f"exceeds {1e-8 * n * scale:.3e}"
        )
    radius = float(np.max(np.abs(vals))) if n else 0.0
    return Spectrum(eigenvalues=vals, spectral_radius=radius, source_label=label)


def _francis_scalar(h, max_sweeps, tol):
    """Scalar-loop form of the double-shift QR sweep, written to be numba-compilable.

    Mutates the Hessenberg matrix h in place. Returns (count, re, im, mass);
    count == -1 flags non-convergence with the leftover subdiagonal mass.
    """
    n = h.shape[0]
    ere = np.zeros(n)
    eim = np.zeros(n)
    cnt = 0
    hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm += abs(h[i, j])
    if hnorm == 0.0:
        return n, ere, eim, 0.0

    m = n - 1
    sweeps = 0
    since = 0
    while m >= 0:
        if m == 0:
            ere[cnt] = h[0, 0]
            cnt += 1
            break
        l = m
        while l > 0:
            s = abs(h[l - 1, l - 1]) + abs(h[l, l])
            if s == 0.0:
                s = hnorm
            if abs(h[l, l - 1]) <= tol * s:
                h[l, l - 1] = 0.0
                break
            l -= 1
        if l == m:
            ere[cnt] = h[m, m]
            cnt += 1
            m -= 1
            since = 0
            continue
        if l == m - 1:
            a2 = h[m - 1, m - 1]
            b2 = h[m - 1, m]
            c2 = h[m, m - 1]
            d2 = h[m, m]
            p = 0.5 * (a2 + d2)
            det = a2 * d2 - b2 * c2
            disc = (0.5 * (a2 - d2)) ** 2 + b2 * c2
            if disc >= 0.0:
                sq = math.sqrt(disc)
                r1 = p + math.copysign(sq, p) if p != 0.0 else sq
                r2 = det / r1 if r1 != 0.0 else 0.0
                ere[cnt] = r1
                cnt += 1
                ere[cnt] = r2
                cnt += 1
            else:
                sq = math.sqrt(-disc)
                ere[cnt] = p
                eim[cnt] = sq
                cnt += 1
                ere[cnt] = p
                eim[cnt] = -sq
                cnt += 1
            m -= 2
            since = 0
            continue

        sweeps += 1
        since += 1
        if sweeps > max_sweeps:
            mass = 0.0
            for i in range(1, m + 1):
                mass += abs(h[i, i - 1])
            return -1, ere, eim, mass

        if since % 10 == 0:
            s_exc = abs(h[m, m - 1]) + abs(h[m - 1, m - 2])
            h11 = 0.75 * s_exc + h[m, m]
            tr = 2.0 * h11
            det = h11 * h11 + 0.4375 * s_exc * s_exc
        else:
            tr = h[m - 1, m - 1] + h[m, m]
            det = h[m - 1, m - 1] * h[m, m] - h[m - 1, m] * h[m, m - 1]

        x = h[l, l] * h[l, l] + h[l, l + 1] * h[l + 1, l] - tr * h[l, l] + det
        y = h[l + 1, l] * (h[l, l] + h[l + 1, l + 1] - tr)
        z = h[l + 2, l + 1] * h[l + 1, l]

        for k in range(l, m - 1):
            nv = math.sqrt(x * x + y * y + z * z)
            if nv != 0.0:
                u0 = x + math.copysign(nv, x)
                nu2 = u0 * u0 + y * y + z * z
                if nu2 != 0.0:
                    b0 = 2.0 / nu2
                    r = l if l > k - 1 else k - 1
                    for j in range(r, m + 1):
                        w = b0 * (u0 * h[k, j] + y * h[k + 1, j] + z * h[k + 2, j])
                        h[k, j] -= u0 * w
                        h[k + 1, j] -= y * w
                        h[k + 2, j] -= z * w
                    rr = k + 4 if k + 4 < m + 1 else m + 1
                    for i in range(l, rr):
                        w = b0 * (u0 * h[i, k] + y * h[i, k + 1] + z * h[i, k + 2])
                        h[i, k] -= u0 * w
                        h[i, k + 1] -= y * w
                        h[i, k + 2] -= z * w
            if k < m - 2:
                x = h[k + 1, k]
                y = h[k + 2, k]
                z = h[k + 3, k]
            else:
                x = h[k + 1, k]
                y = h[k + 2, k]
                z = 0.0

        nv = math.sqrt(x * x + y * y)
        if nv != 0.0:
            u0 = x + math.copysign(nv, x)
            nu2 = u0 * u0 + y * y
            if nu2 != 0.0:
                b0 = 2.0 / nu2
                r = l if l > m - 2 else m - 2
                for j in range(r, m + 1):
                    w = b0 * (u0 * h[m - 1, j] + y * h[m, j])
                    h[m - 1, j] -= u0 * w
                    h[m, j] -= y * w
                for i in range(l, m + 1):
                    w = b0 * (u0 * h[i, m - 1] + y * h[i, m])
                    h[i, m - 1] -= u0 * w
                    h[i, m] -= y * w
    return cnt, ere, eim, 0.0


_kernel = None
_kernel_tried = False


def _get_kernel():
    """JIT-compiled QR sweep when numba is available, else None (numpy fallback)."""
    global _kernel, _kernel_tried
    if not _kernel_tried:
        _kernel_tried = True
        try:
            import numba
            _kernel = numba.njit(cache=True)(_francis_scalar)
        except ImportError:
            _kernel = None
    return _kernel


def _francis(h: np.ndarray, max_sweeps: int) -> list[complex]:
    """Implicit double-shift QR with deflation on an upper Hessenberg matrix."""
    n = h.shape[0]
    hnorm = max(1e-300, float(np.abs(h).sum()))
    eigs: list[complex] = []
    m = n - 1
    sweeps = 0
    since_deflation = 0
    while m >= 0:
        if m == 0:
            eigs.append(complex(h[0, 0]))
            break
        # scan for a negligible subdiagonal entry, bottom up
        l = m
        while l > 0:
            s = abs(h[l - 1, l - 1]) + abs(h[l, l])
            if s == 0.0:
                s = hnorm
            if abs(h[l, l - 1]) <= DEFLATION_TOL * s:
                h[l, l - 1] = 0.0
                break
            l -= 1

        if l == m:
            eigs.append(complex(h[m, m]))
            m -= 1
            since_deflation = 0
            continue
        if l == m - 1:
            eigs.extend(_eig2(h[m - 1, m - 1], h[m - 1, m], h[m, m - 1], h[m, m]))
            m -= 2
            since_deflation = 0
            continue

        sweeps += 1
        since_deflation += 1
        if sweeps > max_sweeps:
            mass = float(np.sum(np.abs(np.diag(h, -1)[:m])))
            raise NumericError(
                f"QR iteration did not converge within {max_sweeps} sweeps; "
                f"remaining subdiagonal mass {mass:.3e}"
            )

        if since_deflation % 10 == 0:
            # exceptional shift to break rare limit cycles (LAPACK dlahqr constants)
            s_exc = abs(h[m, m - 1]) + abs(h[m - 1, m - 2])
            h11 = 0.75 * s_exc + h[m, m]
            h21 = s_exc
            tr = 2.0 * h11
            det = h11 * h11 + 0.4375 * s_exc * h21
        else:
            tr = h[m - 1, m - 1] + h[m, m]
            det = h[m - 1, m - 1] * h[m, m] - h[m - 1, m] * h[m, m - 1]

        # first column of (H - s1 I)(H - s2 I), where s1 + s2 = tr, s1*s2 = det
        x = h[l, l] * h[l, l] + h[l, l + 1] * h[l + 1, l] - tr * h[l, l] + det
        y = h[l + 1, l] * (h[l, l] + h[l + 1, l + 1] - tr)
        z = h[l + 2, l + 1] * h[l + 1, l]

        # chase the bulge down the subdiagonal with 3x1 Householder reflectors,
        # applied as rank-1 row/column updates restricted to the active block
        for k in range(l, m - 1):
            nv = math.sqrt(x * x + y * y + z * z)
            if nv != 0.0:
                u0 = x + math.copysign(nv, x)
                nu = math.sqrt(u0 * u0 + y * y + z * z)
                if nu != 0.0:
                    u0, u1, u2 = u0 / nu, y / nu, z / nu
                    r = max(l, k - 1)
                    row0, row1, row2 = h[k, r:m + 1], h[k + 1, r:m + 1], h[k + 2, r:m + 1]
                    w = u0 * row0 + u1 * row1 + u2 * row2
                    row0 -= (2.0 * u0) * w
                    row1 -= (2.0 * u1) * w
                    row2 -= (2.0 * u2) * w
                    rr = min(k + 4, m + 1)
                    col0, col1, col2 = h[l:rr, k], h[l:rr, k + 1], h[l:rr, k + 2]
                    w = u0 * col0 + u1 * col1 + u2 * col2
                    col0 -= (2.0 * u0) * w
                    col1 -= (2.0 * u1) * w
                    col2 -= (2.0 * u2) * w
            if k < m - 2:
                x, y, z = h[k + 1, k], h[k + 2, k], h[k + 3, k]
            else:
                x, y = h[k + 1, k], h[k + 2, k]

        # final 2x1 reflector clears the leftover bulge entry below the subdiagonal
        nv = math.sqrt(x * x + y * y)
        if nv != 0.0:
            u0 = x + math.copysign(nv, x)
            nu = math.sqrt(u0 * u0 + y * y)
            if nu != 0.0:
                u0, u1 = u0 / nu, y / nu
                r = max(l, m - 2)
                row0, row1 = h[m - 1, r:m + 1], h[m, r:m + 1]
                w = u0 * row0 + u1 * row1
                row0 -= (2.0 * u0) * w
                row1 -= (2.0 * u1) * w
                col0, col1 = h[l:m + 1, m - 1], h[l:m + 1, m]
                w = u0 * col0 + u1 * col1
                col0 -= (2.0 * u0) * w
                col1 -= (2.0 * u1) * w
    return eigs


def analyze_model(model, dominant_threshold: float = 0.8,
                  bound_slack: float = 1e-8) -> EigenReport:
    """Spectra of every square dynamics weight of a state-space model.

    ``model`` must provide dynamics_weights() yielding
    (label, matrix, eigenvalue_bounds-or-None) triples; eigenvalue-bounded
    weights are checked against their declared interval and flagged (never
    raised) on violation, since unconstrained weights may legitimately land
    outside the unit disk.
    """
    report = EigenReport(dominant_threshold=dominant_threshold)
    for label, matrix, bounds in model.dynamics_weights():
        spec = eigenvalues(matrix, label=label)
        report.spectra.append(spec)
        report.dominant_counts[label] = spec.dominant_count(dominant_threshold)
        if bounds is not None:
            lo, hi = bounds
            report.lambda_min, report.lambda_max = lo, hi
            if not (lo - bound_slack <= spec.spectral_radius <= hi + bound_slack):
                report.bound_violations.append(
                    f"{label}: spectral radius {spec.spectral_radius:.12f} "
                    f"outside [{lo}, {hi}]"
                )
    if not report.spectra:
        warnings.warn("model exposes no square dynamics weights; eigen report is empty")
    return report


def write_spectrum_csv(report: EigenReport, path) -> None:
    """Complex-plane scatter rows: one line per eigenvalue per source matrix."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "source", "spectral_radius"])
        for spec in report.spectra:
            for z in spec.eigenvalues:
                writer.writerow([f"{z.real:.17g}", f"{z.imag:.17g}",
                                 spec.source_label, f"{spec.spectral_radius:.17g}"])
