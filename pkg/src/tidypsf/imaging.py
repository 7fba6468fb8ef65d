"""Layered depth-dependent image formation and time-averaged coded capture."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import convolve2d, correlate2d

from .optics import NOISE_HEIGHT_MAX, Aperture, OpticalRecipe, PhaseMaskSequence, mask_psf_stacks


@dataclass
class LayeredScene:
    """All-in-focus image ``(H, W, C)`` plus binary layer masks ``(D, H, W)``."""

    all_in_focus: np.ndarray
    layer_masks: np.ndarray
    depth_map: Optional[np.ndarray] = None

    def __post_init__(self):
        img = np.asarray(self.all_in_focus, dtype=np.float64)
        if img.ndim == 2:
            img = img[:, :, None]
        masks = np.asarray(self.layer_masks, dtype=np.float64)
        if masks.ndim != 3 or masks.shape[1:] != img.shape[:2]:
            raise ValueError(f"layer masks {masks.shape} do not match image {img.shape}")
        if not np.array_equal(masks.sum(axis=0), np.ones(img.shape[:2])):
            raise ValueError("layer masks must partition every pixel exactly once")
        self.all_in_focus = img
        self.layer_masks = masks

    @property
    def n_layers(self) -> int:
        return self.layer_masks.shape[0]

    @classmethod
    def from_depth(cls, image, depth_map, edges) -> "LayeredScene":
        return cls(image, depth_to_layers(depth_map, edges), np.asarray(depth_map, dtype=np.float64))


@dataclass
class SwitchingConfig:
    exposure_ms: float = 100.0
    swap_ms: float = 0.0
    rng_seed: int = 0
    n_random_states_per_swap: int = 1

    def check(self, k: int) -> None:
        if self.exposure_ms <= 0 or self.swap_ms < 0:
            raise ValueError("exposure must be positive and swap time nonnegative")
        if self.n_random_states_per_swap < 1:
            raise ValueError("need at least one random state per swap")
        if (k - 1) * self.swap_ms >= self.exposure_ms:
            raise ValueError(
                f"{k - 1} swaps of {self.swap_ms} ms do not fit in a {self.exposure_ms} ms exposure")


def uniform_bin_edges(count: int, lo: float, hi: float) -> np.ndarray:
    return np.linspace(lo, hi, count + 1)


def depth_to_layers(depth_map, edges) -> np.ndarray:
    """Bucket depths into ``len(edges) - 1`` binary layers.

    Bin d holds ``edges[d] <= z < edges[d+1]``; the last bin is closed above
    and values outside the edge range are clamped into the end bins.
    """
    z = np.asarray(depth_map, dtype=np.float64)
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least 2 entries")
    if np.any(np.isnan(z)):
        raise ValueError("depth map contains NaN")
    n_bins = edges.size - 1
    idx = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, n_bins - 1)
    return (idx[None, :, :] == np.arange(n_bins)[:, None, None]).astype(np.float64)


def _check_stack(scene: LayeredScene, stack: np.ndarray) -> None:
    if stack.ndim != 4:
        raise ValueError(f"PSF stack must be (D, L, c, c), got {stack.shape}")
    if stack.shape[0] != scene.n_layers:
        raise ValueError(f"stack has {stack.shape[0]} depths, scene has {scene.n_layers} layers")
    if stack.shape[1] != scene.all_in_focus.shape[2]:
        raise ValueError(
            f"stack has {stack.shape[1]} wavelengths, image has {scene.all_in_focus.shape[2]} channels")
    if stack.shape[2] % 2 == 0 or stack.shape[2] != stack.shape[3]:
        raise ValueError("PSF kernels must be square and odd-sized")


def _capture_raw(scene: LayeredScene, stack: np.ndarray) -> np.ndarray:
    img = scene.all_in_focus
    out = np.zeros_like(img)
    for ch in range(img.shape[2]):
        acc = np.zeros(img.shape[:2])
        for d in range(scene.n_layers):
            acc += scene.layer_masks[d] * convolve2d(img[:, :, ch], stack[d, ch], mode="same")
        out[:, :, ch] = acc
    return out


def capture_single(scene: LayeredScene, stack) -> np.ndarray:
    """``I_c = sum_d O_d * (L_c conv h_{d,c})`` with zero-padded "same" convolution."""
    stack = np.asarray(stack, dtype=np.float64)
    _check_stack(scene, stack)
    return np.maximum(_capture_raw(scene, stack), 0.0)


def capture_time_averaged(scene: LayeredScene, stacks, weights) -> np.ndarray:
    """Dwell-weighted average of the per-mask coded images."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(stacks) != weights.size:
        raise ValueError(f"{len(stacks)} stacks but {weights.size} weights")
    if abs(weights.sum() - 1.0) > 1e-12 or np.any(weights < 0):
        raise ValueError("weights must be nonnegative and sum to 1")
    acc = weights[0] * capture_single(scene, stacks[0])
    for j in range(1, weights.size):
        acc = acc + weights[j] * capture_single(scene, stacks[j])
    return acc


def capture_kernel_vjp(scene: LayeredScene, grad_image: np.ndarray, crop: int) -> np.ndarray:
    """Adjoint of :func:`capture_single` w.r.t. the PSF stack.

    Returns dLoss/dstack of shape (D, C, crop, crop) for an upstream image
    gradient ``grad_image`` of shape (H, W, C). The non-negativity clamp is
    treated as the identity (kernels and images are nonnegative).
    """
    r = crop // 2
    img = scene.all_in_focus
    out = np.zeros((scene.n_layers, img.shape[2], crop, crop))
    for ch in range(img.shape[2]):
        padded = np.pad(img[:, :, ch], r)
        for d in range(scene.n_layers):
            corr = correlate2d(padded, scene.layer_masks[d] * grad_image[:, :, ch], mode="valid")
            out[d, ch] = corr[::-1, ::-1]
    return out


def switching_weights(k: int, cfg: SwitchingConfig, dwell_weights=None):
    """Weights for programmed masks and for random swap states.

    Programmed mask j gets ``dwell_j * (exposure - (k-1)*swap) / exposure``;
    each of the ``(k-1) * n_random_states_per_swap`` random states gets an
    equal share of ``(k-1)*swap/exposure``.
    """
    cfg.check(k)
    dwell = np.full(k, 1.0 / k) if dwell_weights is None else np.asarray(dwell_weights, dtype=np.float64)
    programmed = dwell * ((cfg.exposure_ms - (k - 1) * cfg.swap_ms) / cfg.exposure_ms)
    n_random = (k - 1) * cfg.n_random_states_per_swap if cfg.swap_ms > 0 else 0
    per_state = (cfg.swap_ms / cfg.exposure_ms) / cfg.n_random_states_per_swap
    return programmed, np.full(n_random, per_state)


def random_swap_heights(k: int, n: int, cfg: SwitchingConfig) -> np.ndarray:
    """Random intermediate SLM states, one stream per swap index."""
    out = []
    for swap in range(k - 1):
        rng = np.random.default_rng([cfg.rng_seed, swap])
        out.append(rng.uniform(0.0, NOISE_HEIGHT_MAX, size=(cfg.n_random_states_per_swap, n, n)))
    if not out:
        return np.zeros((0, n, n))
    return np.concatenate(out)


def capture_with_switching(scene: LayeredScene, sequence: PhaseMaskSequence, aperture: Aperture,
                           recipe: OpticalRecipe, cfg: SwitchingConfig) -> np.ndarray:
    """Coded image including random-phase light captured while the SLM swaps."""
    k = sequence.k
    programmed_w, random_w = switching_weights(k, cfg, sequence.dwell_weights)
    stacks = list(mask_psf_stacks(sequence.heights, aperture, recipe))
    weights = list(programmed_w)
    if random_w.size:
        rand_h = random_swap_heights(k, sequence.n, cfg)
        stacks += list(mask_psf_stacks(rand_h, aperture, recipe))
        weights += list(random_w)
    return capture_time_averaged(scene, stacks, np.asarray(weights))


def synthetic_scene(height: int, width: int, n_layers: int, channels: int = 3, seed: int = 0,
                    depth_range=(-20.0, 20.0)) -> LayeredScene:
    """Textured random scene with piecewise-smooth depth, for experiments without data."""
    rng = np.random.default_rng(seed)
    fine = rng.uniform(0.0, 1.0, size=(height, width, channels))
    # 4x4 blocks add structure larger than single-pixel noise
    coarse = rng.uniform(0.0, 1.0, size=(-(-height // 4), -(-width // 4), channels))
    blocks = np.kron(coarse, np.ones((4, 4, 1)))[:height, :width]
    img = 0.5 * fine + 0.5 * blocks
    lo, hi = depth_range
    yy, xx = np.mgrid[0:height, 0:width]
    depth = lo + (hi - lo) * (0.5 * (xx / max(width - 1, 1)) + 0.5 * (yy / max(height - 1, 1)))
    depth += rng.normal(0.0, 0.05 * (hi - lo), size=depth.shape)
    edges = uniform_bin_edges(n_layers, lo, hi)
    return LayeredScene.from_depth(img, np.clip(depth, lo, hi), edges)
