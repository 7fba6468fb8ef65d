"""Gradient-based design of phase-mask sequences.

Gradients are analytic: the loss is pulled back through the capture (linear
in the kernels), the dwell-weighted average, the crop/renormalisation, the
squared-magnitude spectrum and the DFT, down to the mask heights.
"""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import io as tio
from .imaging import LayeredScene, capture_kernel_vjp, capture_time_averaged
from .optics import (
    NOISE_HEIGHT_MAX,
    Aperture,
    OpticalRecipe,
    PhaseMaskSequence,
    _psf_backward,
    _psf_forward,
    average_stacks,
    pupil_fields,
)

FISHER_NOISE_MEAN = 5.35e-7
FISHER_NOISE_STD = 3.05e-7

IMPULSE = "impulse_psf_mse"
DIRECT = "direct_capture_mse"


class NumericalError(FloatingPointError):
    pass


@dataclass
class Objective:
    kind: str = IMPULSE
    scenes: List[LayeredScene] = field(default_factory=list)
    depth_weights: Optional[np.ndarray] = None
    # False: weights enter as given, so scaling them scales the loss
    normalize_weights: bool = True

    def __post_init__(self):
        if self.kind not in (IMPULSE, DIRECT):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.kind == DIRECT and not self.scenes:
            raise ValueError("direct-capture objective needs at least one scene")

    def weights_for(self, n_depths: int) -> np.ndarray:
        if self.depth_weights is None:
            return np.ones(n_depths)
        w = np.asarray(self.depth_weights, dtype=np.float64)
        if w.shape != (n_depths,) or np.any(w < 0):
            raise ValueError(f"need {n_depths} nonnegative depth weights")
        if self.normalize_weights:
            w = w * (n_depths / w.sum())
        return w


@dataclass
class OptimizerConfig:
    beta1: float = 0.99
    beta2: float = 0.999
    lr_mask: float = 1e-8
    epsilon: float = 1e-8
    max_iters: int = 200
    seed: int = 0
    grad_check: bool = False

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lr_mask <= 0:
            raise ValueError("learning rate must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamState":
        params = np.array(params, dtype=np.float64)
        return cls(params, np.zeros_like(params), np.zeros_like(params), 0)


@dataclass
class OptRun:
    config: OptimizerConfig
    initial: PhaseMaskSequence
    final: PhaseMaskSequence
    loss_trace: List[float]
    final_loss: float
    termination: str
    wall_clock_s: float = 0.0
    grad_check_error: Optional[float] = None

    def to_json(self, include_timing: bool = False) -> dict:
        out = {
            "config": asdict(self.config),
            "k": self.final.k,
            "n": self.final.n,
            "loss_trace": [float(x) for x in self.loss_trace],
            "initial_loss": float(self.loss_trace[0]) if self.loss_trace else float(self.final_loss),
            "final_loss": float(self.final_loss),
            "iterations": len(self.loss_trace),
            "termination": self.termination,
            "grad_check_error": self.grad_check_error,
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out


# ---------------------------------------------------------------------------
# Initialisers

def init_uniform_noise(k: int, n: int, seed: int) -> PhaseMaskSequence:
    """Heights i.i.d. uniform on [0, 1.2e-6] m, uniform dwell weights."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    return PhaseMaskSequence(rng.uniform(0.0, NOISE_HEIGHT_MAX, size=(k, n, n)))


def load_base_mask(base_mask) -> np.ndarray:
    """Accept an (N, N) array or a path to a ``.tpsf`` (first mask) or ``.npy`` file."""
    if base_mask is None:
        raise FileNotFoundError(
            "a base (Fisher) mask is required for this initialisation; pass --base-mask "
            "with a .tpsf or .npy height map in metres")
    if isinstance(base_mask, (str, os.PathLike)):
        path = os.fspath(base_mask)
        if not os.path.exists(path):
            raise FileNotFoundError(
                f"base mask file {path!r} not found; supply a .tpsf or .npy height map in metres")
        if path.endswith(".npy"):
            arr = np.load(path)
        else:
            arr = tio.read_tpsf(path)[0][0]
    else:
        arr = np.asarray(base_mask)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"base mask must be square 2-D, got {arr.shape}")
    return arr


def init_fisher_variants(k: int, base_mask, scheme: str, noisy_count: int = 0,
                         seed: int = 0) -> PhaseMaskSequence:
    """Sequences built around a supplied base mask.

    ``one_fisher_rest_noise``: mask 0 is the base, the rest uniform noise.
    ``rotations_noise_on_m``: mask j is the base rotated by j * 90 degrees;
    the last ``noisy_count`` masks get additive Gaussian noise
    (mean 5.35e-7 m, std 3.05e-7 m).
    """
    base = load_base_mask(base_mask)
    n = base.shape[0]
    if not 0 <= noisy_count <= k:
        raise ValueError("noisy_count must lie in [0, k]")
    rng = np.random.default_rng(seed)
    if scheme == "one_fisher_rest_noise":
        heights = np.empty((k, n, n))
        heights[0] = base
        heights[1:] = rng.uniform(0.0, NOISE_HEIGHT_MAX, size=(k - 1, n, n))
    elif scheme == "rotations_noise_on_m":
        heights = np.stack([np.rot90(base, j) for j in range(k)])
        if noisy_count:
            heights[k - noisy_count:] += rng.normal(FISHER_NOISE_MEAN, FISHER_NOISE_STD,
                                                    size=(noisy_count, n, n))
    else:
        raise ValueError(f"unknown initialisation scheme {scheme!r}")
    return PhaseMaskSequence(heights)


# ---------------------------------------------------------------------------
# Losses and gradients

def impulse_target(crop: int) -> np.ndarray:
    t = np.zeros((crop, crop))
    t[crop // 2, crop // 2] = 1.0
    return t


def _impulse_terms(avg: np.ndarray, objective: Objective):
    n_depths, n_wl, crop, _ = avg.shape
    w = objective.weights_for(n_depths)
    diff = avg - impulse_target(crop)
    per_kernel = np.mean(diff ** 2, axis=(-2, -1))
    scale = 1.0 / (n_depths * n_wl)
    loss = float(np.sum(w[:, None] * per_kernel) * scale)
    grad_avg = (2.0 * scale / (crop * crop)) * w[:, None, None, None] * diff
    return loss, grad_avg


def _capture_terms(stacks: np.ndarray, weights: np.ndarray, scenes: List[LayeredScene], crop: int):
    loss = 0.0
    grad_stacks = np.zeros_like(stacks)
    for scene in scenes:
        img = capture_time_averaged(scene, stacks, weights)
        resid = img - scene.all_in_focus
        loss += float(np.mean(resid ** 2))
        g_img = 2.0 * resid / (resid.size * len(scenes))
        g_stack = capture_kernel_vjp(scene, g_img, crop)
        grad_stacks += weights[:, None, None, None, None] * g_stack[None]
    return loss / len(scenes), grad_stacks


def _as_arrays(sequence):
    if isinstance(sequence, PhaseMaskSequence):
        return sequence.heights, sequence.dwell_weights
    h = np.asarray(sequence, dtype=np.float64)
    if h.ndim == 2:
        h = h[None]
    return h, np.full(h.shape[0], 1.0 / h.shape[0])


def loss_value(sequence, aperture: Aperture, recipe: OpticalRecipe, objective: Objective) -> float:
    heights, weights = _as_arrays(sequence)
    fields = pupil_fields(heights, aperture, recipe)
    stacks, _ = _psf_forward(fields, recipe.padded_size(aperture.n), recipe.psf_crop)
    if objective.kind == IMPULSE:
        return _impulse_terms(average_stacks(stacks, weights), objective)[0]
    loss = 0.0
    for scene in objective.scenes:
        img = capture_time_averaged(scene, stacks, weights)
        loss += float(np.mean((img - scene.all_in_focus) ** 2))
    return loss / len(objective.scenes)


def loss_impulse_psf(sequence, aperture, recipe, objective: Objective = None) -> float:
    objective = objective or Objective(IMPULSE)
    if objective.kind != IMPULSE:
        raise ValueError("objective must be impulse_psf_mse")
    return loss_value(sequence, aperture, recipe, objective)


def loss_direct_capture(sequence, aperture, recipe, scenes) -> float:
    return loss_value(sequence, aperture, recipe, Objective(DIRECT, scenes=list(scenes)))


def loss_and_gradient(sequence, aperture: Aperture, recipe: OpticalRecipe, objective: Objective):
    """Return ``(loss, dLoss/dheights)`` with gradients shaped (k, N, N)."""
    heights, weights = _as_arrays(sequence)
    n = aperture.n
    fields = pupil_fields(heights, aperture, recipe)
    stacks, cache = _psf_forward(fields, recipe.padded_size(n), recipe.psf_crop)
    if objective.kind == IMPULSE:
        loss, grad_avg = _impulse_terms(average_stacks(stacks, weights), objective)
        grad_stacks = weights[:, None, None, None, None] * grad_avg[None]
    else:
        loss, grad_stacks = _capture_terms(stacks, weights, objective.scenes, recipe.psf_crop)
    z = _psf_backward(cache, grad_stacks)[..., :n, :n]
    grad_phase = -2.0 * np.imag(fields * z)
    c = recipe.phase_constants()
    grads = np.einsum("kdlij,l->kij", grad_phase, c)
    if not (np.isfinite(loss) and np.all(np.isfinite(grads))):
        raise NumericalError(f"non-finite loss or gradient (loss={loss})")
    return loss, grads


def gradient(sequence, aperture, recipe, objective) -> np.ndarray:
    return loss_and_gradient(sequence, aperture, recipe, objective)[1]


def finite_difference_gradient(sequence, aperture, recipe, objective, step: float = 1e-9,
                               entries=None) -> np.ndarray:
    """Central differences of :func:`loss_value`; ``entries`` limits which (j, r, c) are probed."""
    heights, weights = _as_arrays(sequence)
    out = np.zeros_like(heights)
    if entries is None:
        entries = list(np.ndindex(heights.shape))
    for idx in entries:
        plus = heights.copy()
        minus = heights.copy()
        plus[idx] += step
        minus[idx] -= step
        lp = loss_value(PhaseMaskSequence(plus, weights), aperture, recipe, objective)
        lm = loss_value(PhaseMaskSequence(minus, weights), aperture, recipe, objective)
        out[idx] = (lp - lm) / (2 * step)
    return out


def relative_error(analytic: np.ndarray, reference: np.ndarray) -> float:
    denom = np.linalg.norm(reference)
    if denom == 0:
        return float(np.linalg.norm(analytic))
    return float(np.linalg.norm(analytic - reference) / denom)


# ---------------------------------------------------------------------------
# Adam

def adam_step(state: AdamState, grads: np.ndarray, config: OptimizerConfig) -> AdamState:
    """One bias-corrected Adam update; returns a new state."""
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != state.params.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.params.shape}")
    t = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * g * g
    m_hat = m / (1.0 - config.beta1 ** t)
    v_hat = v / (1.0 - config.beta2 ** t)
    # overflow surfaces as non-finite heights, which the next evaluation rejects
    with np.errstate(over="ignore", invalid="ignore"):
        params = state.params - config.lr_mask * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return AdamState(params, m, v, t)


CONVERGENCE_WINDOW = 50
CONVERGENCE_RTOL = 1e-8
DIVERGENCE_FACTOR = 1e3


def optimize_sequence(objective: Objective, init: PhaseMaskSequence, config: OptimizerConfig,
                      aperture: Aperture, recipe: OpticalRecipe, callback=None) -> OptRun:
    """Run Adam on the mask heights; dwell weights stay fixed.

    Stops at ``max_iters``, when the loss changes by less than 1e-8
    (relative) over 50 iterations, or when it exceeds 1000x its initial
    value. The returned sequence is the best iterate seen.
    """
    start = time.perf_counter()
    weights = init.dwell_weights.copy()
    state = AdamState.fresh(init.heights)
    trace: List[float] = []
    best_loss, best_params = np.inf, state.params.copy()
    termination = "max_iters"
    grad_err = None

    for it in range(config.max_iters):
        try:
            loss, grads = loss_and_gradient(PhaseMaskSequence(state.params, weights),
                                            aperture, recipe, objective)
        except (NumericalError, ValueError) as exc:
            termination = f"non_finite: {exc}"
            break
        if it == 0 and config.grad_check:
            grad_err = _spot_check(state.params, weights, grads, aperture, recipe, objective, config.seed)
        trace.append(loss)
        if callback is not None:
            callback(it, loss)
        if loss < best_loss:
            best_loss, best_params = loss, state.params.copy()
        if loss > DIVERGENCE_FACTOR * trace[0]:
            termination = "diverged"
            break
        if len(trace) > CONVERGENCE_WINDOW:
            ref = trace[-1 - CONVERGENCE_WINDOW]
            if abs(ref - loss) <= CONVERGENCE_RTOL * abs(ref):
                termination = "converged"
                break
        state = adam_step(state, grads, config)

    final = PhaseMaskSequence(best_params, weights)
    if not trace:
        best_loss = loss_value(final, aperture, recipe, objective)
    return OptRun(config, init, final, trace, float(best_loss), termination,
                  time.perf_counter() - start, grad_err)


def _spot_check(params, weights, grads, aperture, recipe, objective, seed, n_probe=8):
    rng = np.random.default_rng(seed)
    open_idx = np.argwhere(aperture.support)
    entries = []
    for _ in range(n_probe):
        j = int(rng.integers(params.shape[0]))
        r, c = open_idx[rng.integers(len(open_idx))]
        entries.append((j, int(r), int(c)))
    fd = finite_difference_gradient(PhaseMaskSequence(params, weights), aperture, recipe, objective,
                                    entries=entries)
    sel = tuple(np.array(entries).T)
    return relative_error(grads[sel], fd[sel])
