"""Image quality metrics: RMSE, PSNR and single-scale SSIM."""
from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def metric_rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def metric_psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; capped at 99 dB for (near-)identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(-10.0 * np.log10(mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(x, y, window, c1, c2):
    def filt(img):
        return convolve2d(img, window, mode="valid")

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def metric_ssim(a, b, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5,
                k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged across channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < win_size or a.shape[1] < win_size:
        raise ValueError(f"SSIM needs images at least {win_size}x{win_size}, got {a.shape[:2]}")
    window = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    vals = [_ssim_channel(a[:, :, ch], b[:, :, ch], window, c1, c2) for ch in range(a.shape[2])]
    return float(np.mean(vals))


def metrics_report(pairs, names=None) -> dict:
    """RMSE/PSNR/SSIM per image pair plus their means."""
    rows = []
    for idx, (ref, test) in enumerate(pairs):
        ref, test = _pair(ref, test)
        row = {
            "name": names[idx] if names else f"image_{idx}",
            "rmse": metric_rmse(ref, test),
            "psnr_db": metric_psnr(ref, test),
        }
        min_side = min(ref.shape[:2])
        row["ssim"] = metric_ssim(ref, test) if min_side >= 11 else None
        rows.append(row)
    ssims = [r["ssim"] for r in rows if r["ssim"] is not None]
    return {
        "rmse": float(np.mean([r["rmse"] for r in rows])),
        "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "ssim": float(np.mean(ssims)) if ssims else None,
        "per_image": rows,
    }
