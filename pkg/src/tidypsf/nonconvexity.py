"""Certificates that single-mask PSFs do not form a convex set.

The argument works in autocorrelation space. For a pupil ``X`` supported on
an aperture with a support pair ``(u, v)``, the only overlapping open pixels
at lag ``v - u`` are ``u`` and ``v`` themselves, so the autocorrelation at
that lag is ``X_u * conj(X_v)`` and lies on the unit circle. Averaging the
autocorrelations of several pupils (equivalently, averaging their PSFs) can
move that coordinate strictly inside the unit disc, which no single pupil
can reproduce.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import List, Sequence, Tuple

import numpy as np
import scipy.fft

from .optics import Aperture


class ApertureRejected(ValueError):
    """No direction isolates a unique support pair on this rasterization."""


@dataclass(frozen=True)
class SupportPair:
    u: Tuple[int, int]
    v: Tuple[int, int]
    direction: Tuple[int, int]

    @property
    def lag(self) -> Tuple[int, int]:
        return (self.v[0] - self.u[0], self.v[1] - self.u[1])


@dataclass
class ConvexityCertificate:
    coordinate_value: complex
    magnitude: float
    verdict: str
    tolerance: float
    pair: SupportPair = None
    per_mask_coordinates: List[complex] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "u": list(self.pair.u),
            "v": list(self.pair.v),
            "direction": list(self.pair.direction),
            "per_mask_coordinates": [[z.real, z.imag] for z in self.per_mask_coordinates],
            "mean_coordinate": [self.coordinate_value.real, self.coordinate_value.imag],
            "magnitude": self.magnitude,
            "verdict": self.verdict,
            "tolerance": self.tolerance,
        }


def candidate_directions(limit: int):
    """Primitive integer directions ``(p, q)`` with ``|p|, |q| <= limit``, one per +/- pair.

    Ordered by ``max(|p|, |q|)``, then ``|p| + |q|``, then descending ``p``
    and ``q``, so ``(1, 0), (0, 1), (1, 1), (1, -1)`` come first.
    """
    dirs = []
    for p in range(-limit, limit + 1):
        for q in range(-limit, limit + 1):
            if (p, q) == (0, 0) or gcd(abs(p), abs(q)) != 1:
                continue
            if p < 0 or (p == 0 and q < 0):
                continue
            dirs.append((p, q))
    dirs.sort(key=lambda d: (max(abs(d[0]), abs(d[1])), abs(d[0]) + abs(d[1]), -d[0], -d[1]))
    return dirs


def _unique_extremes(points: np.ndarray, w) -> tuple:
    proj = points @ np.asarray(w, dtype=np.int64)
    lo, hi = proj.min(), proj.max()
    lo_idx = np.flatnonzero(proj == lo)
    hi_idx = np.flatnonzero(proj == hi)
    if lo_idx.size == 1 and hi_idx.size == 1 and lo != hi:
        return tuple(int(c) for c in points[lo_idx[0]]), tuple(int(c) for c in points[hi_idx[0]])
    return None


def verify_support_pair(support: np.ndarray, pair: SupportPair) -> bool:
    """Exhaustively check that ``pair.direction`` isolates ``u`` and ``v``."""
    points = np.argwhere(np.asarray(support, dtype=bool))
    found = _unique_extremes(points, pair.direction)
    return found == (tuple(pair.u), tuple(pair.v))


def find_support_pair(aperture: Aperture) -> SupportPair:
    """Scan directions for one with a unique minimiser ``u`` and maximiser ``v``."""
    points = np.argwhere(aperture.support)
    for w in candidate_directions(aperture.n):
        found = _unique_extremes(points, w)
        if found is not None:
            pair = SupportPair(found[0], found[1], w)
            aperture.support_pair = (pair.u, pair.v)
            return pair
    raise ApertureRejected(
        f"{aperture.shape_tag} aperture of size {aperture.n}: no direction isolates a unique support pair")


def autocorrelation_direct(x: np.ndarray) -> np.ndarray:
    """``C[s, r] = sum_{i,j} X[i,j] * conj(X[i+s, j+r])`` by explicit summation.

    Output is (2N-1, 2N-1) with lag ``(s, r)`` stored at ``[s + N - 1, r + N - 1]``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    out = np.zeros((2 * n - 1, 2 * n - 1), dtype=np.complex128)
    # separate real arithmetic keeps C[-s] == conj(C[s]) bit-exact
    xr, xi = x.real.copy(), x.imag.copy()
    for s in range(-(n - 1), n):
        i0, i1 = max(0, -s), min(n, n - s)
        for r in range(-(n - 1), n):
            j0, j1 = max(0, -r), min(n, n - r)
            ar, ai = xr[i0:i1, j0:j1], xi[i0:i1, j0:j1]
            br, bi = xr[i0 + s:i1 + s, j0 + r:j1 + r], xi[i0 + s:i1 + s, j0 + r:j1 + r]
            re = np.sum(ar * br + ai * bi)
            im = np.sum(ai * br - ar * bi)
            out[s + n - 1, r + n - 1] = complex(re, im)
    return out


def autocorrelation_fourier(x: np.ndarray) -> np.ndarray:
    """Same quantity via the cross-correlation theorem.

    With ``F = DFT(X)`` padded to ``P >= 2N - 1``, ``C[s] = IDFT(|F|^2)[-s mod P]``.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    p = 2 * n
    spectrum = scipy.fft.fft2(x, s=(p, p))
    corr = scipy.fft.ifft2(spectrum * np.conj(spectrum))
    lags = np.arange(-(n - 1), n)
    idx = (-lags) % p
    return corr[np.ix_(idx, idx)]


def autocorrelation(x: np.ndarray, method: str = "direct") -> np.ndarray:
    if method == "direct":
        return autocorrelation_direct(x)
    if method == "fourier":
        return autocorrelation_fourier(x)
    raise ValueError(f"unknown method {method!r}")


def lag_coordinate(x: np.ndarray, lag) -> complex:
    """Autocorrelation at a single lag, summed over the full overlap region."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    s, r = lag
    i0, i1 = max(0, -s), min(n, n - s)
    j0, j1 = max(0, -r), min(n, n - r)
    if i0 >= i1 or j0 >= j1:
        return 0j
    return complex(np.sum(x[i0:i1, j0:j1] * np.conj(x[i0 + s:i1 + s, j0 + r:j1 + r])))


def certify_single_mask(x: np.ndarray, pair: SupportPair, tol: float = 1e-9) -> ConvexityCertificate:
    z = lag_coordinate(x, pair.lag)
    mag = abs(z)
    verdict = "on_circle" if abs(mag - 1.0) <= tol else "inside_disc"
    return ConvexityCertificate(z, mag, verdict, tol, pair, [z])


def certify_average_escapes(pupils: Sequence[np.ndarray], pair: SupportPair,
                            tol: float = 1e-9, weights=None) -> ConvexityCertificate:
    """Autocorrelation coordinate of the (weighted) average of several pupils.

    ``inside_disc`` means the averaged PSF cannot be produced by any single
    mask on this aperture.
    """
    if len(pupils) < 2:
        raise ValueError("need at least two pupils to average")
    coords = [lag_coordinate(x, pair.lag) for x in pupils]
    if weights is None:
        weights = np.full(len(coords), 1.0 / len(coords))
    mean = complex(np.sum(np.asarray(weights) * np.asarray(coords)))
    mag = abs(mean)
    verdict = "inside_disc" if mag < 1.0 - tol else "on_circle"
    return ConvexityCertificate(mean, mag, verdict, tol, pair, coords)
