"""Pupil functions and depth/wavelength-dependent PSFs from phase masks.

Conventions
-----------
* Grids are indexed ``[row, col]``; the grid centre is ``((N-1)/2, (N-1)/2)``.
* The DFT is unnormalised (``scipy.fft.fft2`` default), applied after zero
  padding the pupil to ``P = pad_factor * N`` at the high-index end.
* PSFs are fftshifted so DC lands on index ``P // 2``, centre-cropped to
  ``psf_crop`` and renormalised to unit sum.

Array layouts used throughout the package:

``heights``  (k, N, N)            one height map per mask, metres
``stack``    (D, L, c, c)         PSF per depth bin and wavelength
``stacks``   (k, D, L, c, c)      one stack per mask
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.fft

DEFAULT_WAVELENGTHS = (610e-9, 530e-9, 470e-9)
NOISE_HEIGHT_MAX = 1.2e-6


class DegenerateApertureError(ValueError):
    """Raised when a pupil carries no energy or an aperture is unusable."""


# ---------------------------------------------------------------------------
# Apertures

@dataclass
class Aperture:
    """Binary pupil support.

    ``support_pair`` is ``((u_row, u_col), (v_row, v_col))`` once certified
    by :func:`tidypsf.nonconvexity.find_support_pair`, otherwise ``None``.
    """

    support: np.ndarray
    shape_tag: str = "custom"
    support_pair: Optional[tuple] = None

    def __post_init__(self):
        self.support = np.asarray(self.support).astype(bool)
        if self.support.ndim != 2 or self.support.shape[0] != self.support.shape[1]:
            raise ValueError(f"aperture support must be square, got {self.support.shape}")
        if np.count_nonzero(self.support) < 2:
            raise DegenerateApertureError("aperture needs at least 2 open pixels")

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def open_count(self) -> int:
        return int(np.count_nonzero(self.support))

    @classmethod
    def disk(cls, n: int, radius: Optional[float] = None) -> "Aperture":
        """Pixels whose centre lies within ``radius`` (default ``(n-1)/2``) of the grid centre."""
        c = (n - 1) / 2.0
        r = c if radius is None else float(radius)
        i, j = np.indices((n, n))
        return cls((i - c) ** 2 + (j - c) ** 2 <= r * r, "disk")

    @classmethod
    def square(cls, n: int) -> "Aperture":
        return cls(np.ones((n, n), dtype=bool), "square")

    @classmethod
    def regular_polygon(cls, n: int, sides: int, rotation: float = 0.0) -> "Aperture":
        """Regular polygon inscribed in the circle of radius ``(n-1)/2``.

        A pixel is open when its centre is inside (or on) every edge.
        ``rotation`` is in radians; the first vertex sits at angle ``rotation``
        measured from the +col axis.
        """
        if sides < 3:
            raise ValueError("a polygon needs at least 3 sides")
        c = (n - 1) / 2.0
        i, j = np.indices((n, n))
        x, y = j - c, i - c
        angles = rotation + 2 * np.pi * np.arange(sides) / sides
        vx, vy = c * np.cos(angles), c * np.sin(angles)
        inside = np.ones((n, n), dtype=bool)
        for a in range(sides):
            b = (a + 1) % sides
            ex, ey = vx[b] - vx[a], vy[b] - vy[a]
            cross = ex * (y - vy[a]) - ey * (x - vx[a])
            inside &= cross >= -1e-12
        return cls(inside, f"regular_polygon({sides})")

    @classmethod
    def from_spec(cls, shape: str, n: int, sides: int = 6, radius=None, rotation=0.0) -> "Aperture":
        if shape == "disk":
            return cls.disk(n, radius)
        if shape == "square":
            return cls.square(n)
        if shape in ("polygon", "regular_polygon"):
            return cls.regular_polygon(n, sides, rotation)
        raise ValueError(f"unknown aperture shape {shape!r}")


# ---------------------------------------------------------------------------
# Masks and recipe

@dataclass
class PhaseMaskSequence:
    """Ordered phase masks (heights in metres) with dwell weights."""

    heights: np.ndarray
    dwell_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.ndim == 2:
            h = h[None]
        if h.ndim != 3 or h.shape[1] != h.shape[2] or h.shape[0] < 1:
            raise ValueError(f"heights must have shape (k, N, N), got {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("mask heights must be finite")
        self.heights = h
        if self.dwell_weights is None:
            self.dwell_weights = np.full(h.shape[0], 1.0 / h.shape[0])
        w = np.asarray(self.dwell_weights, dtype=np.float64)
        if w.shape != (h.shape[0],):
            raise ValueError(f"expected {h.shape[0]} dwell weights, got {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("dwell weights must be nonnegative and sum to 1")
        self.dwell_weights = w

    @property
    def k(self) -> int:
        return self.heights.shape[0]

    @property
    def n(self) -> int:
        return self.heights.shape[1]


@dataclass
class OpticalRecipe:
    wavelengths_m: Sequence[float] = DEFAULT_WAVELENGTHS
    defocus_values: Sequence[float] = field(default_factory=lambda: np.linspace(-20.0, 20.0, 21))
    refractive_index_delta: float = 0.5
    pad_factor: int = 4
    psf_crop: int = 23

    def __post_init__(self):
        self.wavelengths_m = tuple(float(w) for w in self.wavelengths_m)
        self.defocus_values = np.asarray(self.defocus_values, dtype=np.float64).ravel()
        if not self.wavelengths_m or any(w <= 0 for w in self.wavelengths_m):
            raise ValueError("wavelengths must be positive")
        if self.defocus_values.size == 0 or np.any(np.diff(self.defocus_values) <= 0):
            raise ValueError("defocus values must be strictly increasing")
        if int(self.pad_factor) < 1:
            raise ValueError("pad_factor must be >= 1")
        self.pad_factor = int(self.pad_factor)
        self.psf_crop = int(self.psf_crop)
        if self.psf_crop < 1:
            raise ValueError("psf_crop must be positive")

    def padded_size(self, n: int) -> int:
        p = self.pad_factor * n
        if self.psf_crop > p:
            raise ValueError(f"psf_crop={self.psf_crop} exceeds padded size {p}")
        return p

    def phase_constants(self) -> np.ndarray:
        """Height-to-phase factor ``2*pi*(n-1)/lambda`` per wavelength (rad/m)."""
        return 2 * np.pi * self.refractive_index_delta / np.asarray(self.wavelengths_m)

    def to_dict(self) -> dict:
        return {
            "wavelengths_m": list(self.wavelengths_m),
            "defocus_values": [float(v) for v in self.defocus_values],
            "refractive_index_delta": float(self.refractive_index_delta),
            "pad_factor": self.pad_factor,
            "psf_crop": self.psf_crop,
        }


# ---------------------------------------------------------------------------
# Forward model

def defocus_phase(psi: float, n: int) -> np.ndarray:
    """Quadratic defocus ``psi * rho**2`` with rho normalised to the inscribed circle."""
    if n < 2:
        raise ValueError("grid size must be >= 2")
    c = (n - 1) / 2.0
    i, j = np.indices((n, n), dtype=np.float64)
    rho2 = ((i - c) ** 2 + (j - c) ** 2) / (c * c)
    return psi * rho2


def pupil_function(heights, aperture: Aperture, wavelength: float, psi: float,
                   recipe: OpticalRecipe) -> np.ndarray:
    """``A * exp(i*defocus + i*c*heights)`` with ``c = 2*pi*(n-1)/wavelength``."""
    h = np.asarray(heights, dtype=np.float64)
    if h.shape != aperture.support.shape:
        raise ValueError(f"mask shape {h.shape} does not match aperture {aperture.support.shape}")
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    c = 2 * np.pi * recipe.refractive_index_delta / wavelength
    phase = defocus_phase(psi, h.shape[0]) + c * h
    return np.where(aperture.support, np.exp(1j * phase), 0.0 + 0.0j)


def pupil_fields(heights, aperture: Aperture, recipe: OpticalRecipe) -> np.ndarray:
    """All pupils for a mask stack, shape (k, D, L, N, N)."""
    h = np.asarray(heights, dtype=np.float64)
    if h.ndim == 2:
        h = h[None]
    n = h.shape[-1]
    if h.shape[-2:] != aperture.support.shape:
        raise ValueError(f"mask shape {h.shape[-2:]} does not match aperture {aperture.support.shape}")
    c = recipe.phase_constants()
    rho2 = defocus_phase(1.0, n)
    phase = (recipe.defocus_values[None, :, None, None, None] * rho2
             + c[None, None, :, None, None] * h[:, None, None, :, :])
    return np.where(aperture.support, np.exp(1j * phase), 0.0 + 0.0j)


def _crop_window(p: int, crop: int) -> slice:
    start = p // 2 - crop // 2
    return slice(start, start + crop)


def _psf_forward(fields: np.ndarray, p: int, crop: int):
    """Batched PSF over the last two axes; returns (kernels, cache)."""
    spectrum = scipy.fft.fft2(fields, s=(p, p), axes=(-2, -1))
    intensity = spectrum.real ** 2 + spectrum.imag ** 2
    energy = intensity.sum(axis=(-2, -1), keepdims=True)
    if np.any(energy <= 0):
        raise DegenerateApertureError("pupil has zero Fourier energy")
    g = scipy.fft.fftshift(intensity / energy, axes=(-2, -1))
    win = _crop_window(p, crop)
    cropped = g[..., win, win]
    total = cropped.sum(axis=(-2, -1), keepdims=True)
    if np.any(total <= 0):
        raise DegenerateApertureError("cropped PSF carries no energy")
    kernels = cropped / total
    cache = dict(spectrum=spectrum, g=g, energy=energy, kernels=kernels, total=total, p=p, crop=crop)
    return kernels, cache


def _psf_backward(cache: dict, grad_kernels: np.ndarray) -> np.ndarray:
    """Given dLoss/dkernels, return dLoss/dpupil as the complex array Z with
    ``dLoss/dphase = -2 * Im(pupil * Z)`` restricted to the N x N pupil grid.

    Chain: renormalise (quotient rule) -> crop -> fftshift -> |F|^2/||F||^2
    (quotient rule) -> |F|^2 (Wirtinger, 2 Re(conj F dF)) -> DFT adjoint.
    """
    p, crop = cache["p"], cache["crop"]
    k = cache["kernels"]
    gk = grad_kernels
    g_cropped = (gk - (gk * k).sum(axis=(-2, -1), keepdims=True)) / cache["total"]
    g_shifted = np.zeros(cache["g"].shape, dtype=np.float64)
    win = _crop_window(p, crop)
    g_shifted[..., win, win] = g_cropped
    g_g = scipy.fft.ifftshift(g_shifted, axes=(-2, -1))
    g_norm = scipy.fft.ifftshift(cache["g"], axes=(-2, -1))
    g_intensity = (g_g - (g_g * g_norm).sum(axis=(-2, -1), keepdims=True)) / cache["energy"]
    # W is symmetric, so the adjoint of fft2 applied to conj is fft2 itself
    z = scipy.fft.fft2(g_intensity * np.conj(cache["spectrum"]), axes=(-2, -1))
    return z


def psf_from_pupil(pupil: np.ndarray, recipe: OpticalRecipe) -> np.ndarray:
    """Normalised PSF ``|F(X)|^2 / ||F(X)||^2``, centre-cropped and renormalised."""
    x = np.asarray(pupil, dtype=np.complex128)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"pupil must be square 2-D, got {x.shape}")
    if not np.any(x):
        raise DegenerateApertureError("all-zero pupil")
    p = recipe.padded_size(x.shape[0])
    kernels, _ = _psf_forward(x, p, recipe.psf_crop)
    return kernels


def mask_psf_stacks(heights, aperture: Aperture, recipe: OpticalRecipe) -> np.ndarray:
    """Per-mask PSF stacks, shape (k, D, L, crop, crop)."""
    fields = pupil_fields(heights, aperture, recipe)
    p = recipe.padded_size(aperture.n)
    kernels, _ = _psf_forward(fields, p, recipe.psf_crop)
    return kernels


def average_stacks(stacks: np.ndarray, weights) -> np.ndarray:
    """Dwell-weighted sum of per-mask stacks, accumulated in mask order."""
    weights = np.asarray(weights, dtype=np.float64)
    acc = weights[0] * stacks[0]
    for j in range(1, len(weights)):
        acc = acc + weights[j] * stacks[j]
    return acc


def render_psf_stack(sequence: PhaseMaskSequence, aperture: Aperture, recipe: OpticalRecipe):
    """Return ``(per_mask_stacks, averaged_stack)``."""
    stacks = mask_psf_stacks(sequence.heights, aperture, recipe)
    return stacks, average_stacks(stacks, sequence.dwell_weights)


def delta_stack(n_depths: int, n_wavelengths: int, crop: int) -> np.ndarray:
    """PSF stack of centred unit impulses."""
    stack = np.zeros((n_depths, n_wavelengths, crop, crop))
    stack[:, :, crop // 2, crop // 2] = 1.0
    return stack


def check_psf_stack(stack: np.ndarray, atol: float = 1e-9) -> None:
    stack = np.asarray(stack)
    if stack.ndim != 4:
        raise ValueError(f"PSF stack must be (D, L, c, c), got {stack.shape}")
    if np.any(stack < 0):
        raise ValueError("PSF stack has negative entries")
    sums = stack.sum(axis=(-2, -1))
    if np.max(np.abs(sums - 1.0)) > atol:
        raise ValueError("PSF kernels must sum to 1")


def parseval_energy(pupil: np.ndarray, padded_size: int) -> dict:
    """Fourier energy of the zero-padded pupil vs the closed form ``P^2 * sum(A)``."""
    x = np.asarray(pupil, dtype=np.complex128)
    spectrum = scipy.fft.fft2(x, s=(padded_size, padded_size))
    computed = float(np.sum(spectrum.real ** 2 + spectrum.imag ** 2))
    closed = float(padded_size ** 2 * np.count_nonzero(x))
    return {
        "computed": computed,
        "closed_form": closed,
        "relative_difference": abs(computed - closed) / closed,
    }
