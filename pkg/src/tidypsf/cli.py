"""Command-line front end.

Subcommands: ``psf``, ``capture``, ``optimize``, ``certify``,
``sweep-switching``, ``metrics`` and ``run`` (all stages). Every
invocation writes a ``manifest.json`` with the config hash, the seed and a
SHA-256 per output file.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft
import yaml

from . import __version__
from . import io as tio
from .imaging import (
    LayeredScene,
    SwitchingConfig,
    capture_time_averaged,
    capture_with_switching,
    synthetic_scene,
    uniform_bin_edges,
)
from .metrics import metric_rmse, metric_psnr, metrics_report
from .nonconvexity import ApertureRejected, certify_average_escapes, certify_single_mask, find_support_pair
from .optics import (
    Aperture,
    DegenerateApertureError,
    OpticalRecipe,
    PhaseMaskSequence,
    delta_stack,
    pupil_function,
    render_psf_stack,
)
from .optimize import (
    NumericalError,
    Objective,
    OptimizerConfig,
    init_fisher_variants,
    init_uniform_noise,
    optimize_sequence,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


class OutputDirError(OSError):
    pass


# ---------------------------------------------------------------------------
# Configuration

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out_dir": "tidypsf_out",
    "recipe": {
        "wavelengths_m": [610e-9, 530e-9, 470e-9],
        "defocus": {"count": 21, "min": -20.0, "max": 20.0},
        "refractive_index_delta": 0.5,
        "pad_factor": 4,
        "psf_crop": 23,
    },
    "aperture": {"shape": "disk", "n": 23, "sides": 6, "radius": None},
    "sequence": {"path": None, "init": "uniform_noise", "k": 1, "base_mask": None, "noisy_count": 0},
    "scenes": [],
    "synthetic_scene": {"height": 32, "width": 32},
    "bins": {"count": 21, "min": -20.0, "max": 20.0},
    "objective": {"kind": "impulse_psf_mse", "depth_weights": None},
    "optimizer": {"beta1": 0.99, "beta2": 0.999, "lr_mask": 1e-8, "epsilon": 1e-8,
                  "max_iters": 200, "grad_check": False},
    "switching": {"exposure_ms": 100.0, "swaps_ms": [0, 1, 2, 4, 8, 16], "n_random_states_per_swap": 1},
    "certify": {"tol": 1e-9},
    "capture": {"delta": False},
}

INIT_SCHEMES = ("uniform_noise", "zeros", "one_fisher_rest_noise", "rotations_noise_on_m")


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and key != "defocus":
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment settings; ``raw`` keeps the merged mapping for hashing."""

    raw: dict
    recipe: OpticalRecipe = None
    optimizer: OptimizerConfig = None
    seed: int = 0
    out_dir: str = "tidypsf_out"
    threads: int = 1

    @classmethod
    def from_dict(cls, data: Optional[dict] = None) -> "ExperimentConfig":
        raw = _merge(DEFAULTS, data or {})
        try:
            rc = raw["recipe"]
            defocus = rc["defocus"]
            if isinstance(defocus, dict):
                values = np.linspace(float(defocus["min"]), float(defocus["max"]), int(defocus["count"]))
            else:
                values = np.asarray(defocus, dtype=np.float64)
            recipe = OpticalRecipe(rc["wavelengths_m"], values, float(rc["refractive_index_delta"]),
                                   int(rc["pad_factor"]), int(rc["psf_crop"]))
            recipe.padded_size(int(raw["aperture"]["n"]))
            opt = OptimizerConfig(seed=int(raw["seed"]), **raw["optimizer"])
            seed = int(raw["seed"])
            if not 0 <= seed < 2 ** 64:
                raise ValueError("seed must be an unsigned 64-bit integer")
            if raw["sequence"]["init"] not in INIT_SCHEMES:
                raise ValueError(f"unknown init scheme {raw['sequence']['init']!r}")
            if int(raw["sequence"]["k"]) < 1:
                raise ValueError("sequence length k must be >= 1")
            if int(raw["threads"]) < 1:
                raise ValueError("threads must be >= 1")
            Objective(raw["objective"]["kind"], scenes=[None])
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(raw, recipe, opt, seed, str(raw["out_dir"]), int(raw["threads"]))
        cfg._check_files()
        return cfg

    @classmethod
    def load(cls, path: Optional[str], overrides: Optional[dict] = None) -> "ExperimentConfig":
        data = {}
        if path:
            if not os.path.exists(path):
                raise ConfigError(f"config file {path!r} not found")
            with open(path, encoding="utf-8") as f:
                try:
                    data = yaml.safe_load(f) or {}
                except yaml.YAMLError as exc:
                    raise ConfigError(f"cannot parse {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
        merged = _merge(DEFAULTS, data)
        for dotted, val in (overrides or {}).items():
            if val is None:
                continue
            node = merged
            keys = dotted.split(".")
            for key in keys[:-1]:
                node = node[key]
            node[keys[-1]] = val
        return cls.from_dict(merged)

    def _check_files(self):
        paths = [self.raw["sequence"]["path"], self.raw["sequence"]["base_mask"]]
        for scene in self.raw["scenes"]:
            if not isinstance(scene, dict) or "image" not in scene:
                raise ConfigError("each scene needs an 'image' entry (and optionally 'depth')")
            paths += [scene.get("image"), scene.get("depth")]
        for p in paths:
            if p and not os.path.exists(p):
                raise ConfigError(f"referenced file {p!r} does not exist")

    def hash(self) -> str:
        hashed = {k: v for k, v in self.raw.items() if k not in ("out_dir", "threads")}
        blob = json.dumps(hashed, sort_keys=True, default=_json_default).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    # builders -----------------------------------------------------------

    def aperture(self) -> Aperture:
        a = self.raw["aperture"]
        try:
            return Aperture.from_spec(a["shape"], int(a["n"]), int(a.get("sides") or 6), a.get("radius"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def sequence(self) -> PhaseMaskSequence:
        s = self.raw["sequence"]
        n = int(self.raw["aperture"]["n"])
        if s["path"]:
            heights, weights = tio.read_tpsf(s["path"])
            if heights.shape[1] != n:
                raise ConfigError(f"sequence file has N={heights.shape[1]}, aperture has N={n}")
            return PhaseMaskSequence(heights, weights)
        k = int(s["k"])
        if s["init"] == "uniform_noise":
            return init_uniform_noise(k, n, self.seed)
        if s["init"] == "zeros":
            return PhaseMaskSequence(np.zeros((k, n, n)))
        try:
            return init_fisher_variants(k, s["base_mask"], s["init"], int(s["noisy_count"]), self.seed)
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc

    def scenes(self) -> list:
        b = self.raw["bins"]
        edges = uniform_bin_edges(int(b["count"]), float(b["min"]), float(b["max"]))
        n_depths = self.recipe.defocus_values.size
        if int(b["count"]) != n_depths:
            raise ConfigError(f"bin count {b['count']} must equal the {n_depths} defocus values")
        n_ch = len(self.recipe.wavelengths_m)
        out = []
        for entry in self.raw["scenes"]:
            img = np.asarray(tio.read_image(entry["image"]), dtype=np.float64)
            if img.ndim == 2:
                img = img[:, :, None]
            if img.shape[2] != n_ch:
                raise ConfigError(f"{entry['image']}: {img.shape[2]} channels but {n_ch} wavelengths")
            if entry.get("depth"):
                depth = np.asarray(tio.read_image(entry["depth"]), dtype=np.float64)
                if depth.ndim == 3:
                    depth = depth[:, :, 0]
            else:
                depth = np.full(img.shape[:2], 0.5 * (edges[0] + edges[-1]))
            if depth.shape != img.shape[:2]:
                raise ConfigError(f"{entry['depth']}: depth map size does not match image")
            out.append((os.path.basename(entry["image"]), LayeredScene.from_depth(img, depth, edges)))
        if not out:
            syn = self.raw["synthetic_scene"]
            scene = synthetic_scene(int(syn["height"]), int(syn["width"]), n_depths, n_ch, seed=self.seed,
                                    depth_range=(float(b["min"]), float(b["max"])))
            out.append(("synthetic", scene))
        return out

    def objective(self, scenes=None) -> Objective:
        o = self.raw["objective"]
        if o["kind"] == "direct_capture_mse":
            return Objective(o["kind"], scenes=[s for _, s in (scenes or self.scenes())],
                             depth_weights=o.get("depth_weights"))
        return Objective(o["kind"], depth_weights=o.get("depth_weights"))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Artifact writing

class Artifacts:
    """Output directory plus a record of every file written."""

    def __init__(self, out_dir: str):
        self.root = out_dir
        try:
            os.makedirs(out_dir, exist_ok=True)
            probe = os.path.join(out_dir, ".write_probe")
            with open(probe, "w") as f:
                f.write("")
            os.remove(probe)
        except OSError as exc:
            raise OutputDirError(f"output directory {out_dir!r} is not writable: {exc}") from exc
        self.files = []

    def path(self, name: str) -> str:
        full = os.path.join(self.root, name)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        self.files.append(name)
        return full

    def json(self, name: str, payload: dict) -> None:
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True, default=_json_default)
            f.write("\n")

    def manifest(self, cfg: ExperimentConfig, command: str, timing: dict) -> dict:
        hashes = {}
        for name in sorted(set(self.files)):
            with open(os.path.join(self.root, name), "rb") as f:
                hashes[name] = hashlib.sha256(f.read()).hexdigest()
        manifest = {
            "tool": "tidypsf",
            "version": __version__,
            "command": command,
            "seed": cfg.seed,
            "threads": cfg.threads,
            "config_hash": cfg.hash(),
            "config": cfg.raw,
            "files": hashes,
            "timing_s": timing,
        }
        with open(os.path.join(self.root, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=_json_default)
            f.write("\n")
        return manifest


def write_stack(art: Artifacts, prefix: str, stack: np.ndarray) -> None:
    """One PFM per depth: RGB when there are 3 wavelengths, else one greyscale file per wavelength."""
    n_depths, n_wl = stack.shape[:2]
    for d in range(n_depths):
        if n_wl == 3:
            tio.write_pfm(art.path(f"{prefix}_d{d:02d}.pfm"), np.moveaxis(stack[d], 0, -1))
        else:
            for w in range(n_wl):
                tio.write_pfm(art.path(f"{prefix}_d{d:02d}_w{w}.pfm"), stack[d, w])


def stack_montage(stack: np.ndarray) -> np.ndarray:
    """Kernels laid out left to right by depth, channels by wavelength."""
    tiles = [np.moveaxis(stack[d], 0, -1) for d in range(stack.shape[0])]
    strip = np.concatenate(tiles, axis=1)
    return strip if strip.shape[2] in (1, 3) else strip.mean(axis=2)


# ---------------------------------------------------------------------------
# Stages

def stage_psf(cfg, art, sequence, aperture):
    stacks, avg = render_psf_stack(sequence, aperture, cfg.recipe)
    write_stack(art, "psf/avg", avg)
    for j in range(sequence.k):
        write_stack(art, f"psf/mask{j}", stacks[j])
    tio.write_png16(art.path("psf/avg_preview.png"), stack_montage(avg))
    return stacks, avg


def stage_capture(cfg, art, scenes, stacks, weights, tag="coded"):
    results = []
    for idx, (name, scene) in enumerate(scenes):
        img = capture_time_averaged(scene, stacks, weights)
        tio.write_pfm(art.path(f"{tag}/{idx:03d}.pfm"), img)
        tio.write_png16(art.path(f"{tag}/{idx:03d}_preview.png"), img)
        results.append((name, scene, img))
    return results


def stage_certify(cfg, aperture, sequence, tol):
    pair = find_support_pair(aperture)
    # certified at zero defocus and the first wavelength
    pupils = [pupil_function(h, aperture, cfg.recipe.wavelengths_m[0], 0.0, cfg.recipe)
              for h in sequence.heights]
    if len(pupils) == 1:
        cert = certify_single_mask(pupils[0], pair, tol)
    else:
        cert = certify_average_escapes(pupils, pair, tol, sequence.dwell_weights)
    payload = cert.to_json()
    payload["seed"] = cfg.seed
    payload["aperture"] = aperture.shape_tag
    return payload


def stage_optimize(cfg, art, sequence, aperture, scenes=None):
    objective = cfg.objective(scenes)
    run = optimize_sequence(objective, sequence, cfg.optimizer, aperture, cfg.recipe)
    payload = run.to_json()
    payload["seed"] = cfg.seed
    payload["objective"] = objective.kind
    art.json("optrun.json", payload)
    tio.write_tpsf(art.path("sequence.tpsf"), run.final.heights, run.final.dwell_weights)
    return run


def stage_sweep(cfg, art, sequence, aperture, scenes):
    sw = cfg.raw["switching"]
    swaps = [float(s) for s in sw["swaps_ms"]]
    rows = []
    for swap in swaps:
        scfg = SwitchingConfig(float(sw["exposure_ms"]), swap, cfg.seed, int(sw["n_random_states_per_swap"]))
        rmses, psnrs = [], []
        for _, scene in scenes:
            img = capture_with_switching(scene, sequence, aperture, cfg.recipe, scfg)
            rmses.append(metric_rmse(img, scene.all_in_focus))
            psnrs.append(metric_psnr(img, scene.all_in_focus))
        rows.append({"swap_ms": swap, "rmse": float(np.mean(rmses)), "psnr_db": float(np.mean(psnrs))})
    payload = {"seed": cfg.seed, "k": sequence.k, "exposure_ms": float(sw["exposure_ms"]), "rows": rows}
    art.json("sweep_switching.json", payload)
    return payload


def run_experiment(cfg: ExperimentConfig, command: str = "run") -> dict:
    """Full pipeline: sequence (optimised when max_iters > 0), PSFs, captures,
    certificate, metrics, switching sweep and manifest."""
    timing = {}
    art = Artifacts(cfg.out_dir)
    aperture = cfg.aperture()
    sequence = cfg.sequence()
    scenes = cfg.scenes()
    t0 = time.perf_counter()
    if cfg.optimizer.max_iters > 0:
        sequence = stage_optimize(cfg, art, sequence, aperture, scenes).final
    else:
        tio.write_tpsf(art.path("sequence.tpsf"), sequence.heights, sequence.dwell_weights)
    timing["optimize"] = time.perf_counter() - t0
    stacks, _ = stage_psf(cfg, art, sequence, aperture)
    captured = stage_capture(cfg, art, scenes, stacks, sequence.dwell_weights)
    report = metrics_report([(s.all_in_focus, img) for _, s, img in captured], [n for n, _, _ in captured])
    report["seed"] = cfg.seed
    art.json("metrics.json", report)
    art.json("certificate.json", stage_certify(cfg, aperture, sequence, float(cfg.raw["certify"]["tol"])))
    if cfg.raw["switching"]["swaps_ms"]:
        stage_sweep(cfg, art, sequence, aperture, scenes)
    timing["total"] = time.perf_counter() - t0
    return art.manifest(cfg, command, timing)


# ---------------------------------------------------------------------------
# Argument parsing

def _csv_floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _bins(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected COUNT,MIN,MAX")
    return {"count": int(parts[0]), "min": float(parts[1]), "max": float(parts[2])}


def _common(parser, suppress=True):
    d = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--config", default=d, help="YAML experiment config")
    g.add_argument("--seed", type=int, default=d)
    g.add_argument("--out", default=d, help="output directory")
    g.add_argument("--threads", type=int, default=d, help="FFT worker threads")
    g.add_argument("-v", "--verbose", action="store_true", default=d)


def _optics_args(p):
    g = p.add_argument_group("optics")
    g.add_argument("--n", type=int, help="mask / aperture grid size")
    g.add_argument("--aperture", choices=["disk", "square", "polygon"])
    g.add_argument("--sides", type=int, help="polygon side count")
    g.add_argument("--wavelengths", type=_csv_floats, help="comma-separated wavelengths in metres")
    g.add_argument("--defocus", type=_bins, help="COUNT,MIN,MAX defocus values")
    g.add_argument("--pad-factor", type=int)
    g.add_argument("--psf-crop", type=int)


def _sequence_args(p):
    g = p.add_argument_group("mask sequence")
    g.add_argument("--sequence", help="TPSF mask file")
    g.add_argument("--k", type=int, help="sequence length")
    g.add_argument("--init", choices=INIT_SCHEMES)
    g.add_argument("--base-mask", help="base (Fisher) mask file for fisher-style inits")
    g.add_argument("--noisy-count", type=int)


def _scene_args(p):
    g = p.add_argument_group("scene")
    g.add_argument("--image", help="all-in-focus image (PNG or PFM)")
    g.add_argument("--depth", help="depth map (PFM)")
    g.add_argument("--bins", type=_bins, help="COUNT,MIN,MAX depth bin edges")
    g.add_argument("--synthetic", type=int, nargs=2, metavar=("H", "W"), help="synthetic scene size")


def _optimizer_args(p):
    g = p.add_argument_group("optimizer")
    g.add_argument("--objective", choices=["impulse_psf_mse", "direct_capture_mse"])
    g.add_argument("--iters", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--grad-check", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tidypsf", description=__doc__.split("\n\n")[0])
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psf", help="render per-mask and time-averaged PSF stacks")
    _optics_args(p), _sequence_args(p)

    p = sub.add_parser("capture", help="simulate a coded image")
    _optics_args(p), _sequence_args(p), _scene_args(p)
    p.add_argument("--delta", action="store_true", default=None, help="use unit-impulse PSFs")

    p = sub.add_parser("optimize", help="optimise a mask sequence")
    _optics_args(p), _sequence_args(p), _scene_args(p), _optimizer_args(p)

    p = sub.add_parser("certify", help="non-convexity certificate for a mask sequence")
    _optics_args(p), _sequence_args(p)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("sweep-switching", help="coded-image RMSE vs SLM swap time")
    _optics_args(p), _sequence_args(p), _scene_args(p), _optimizer_args(p)
    p.add_argument("--swaps", type=_csv_floats, help="comma-separated swap times in ms")
    p.add_argument("--exposure-ms", type=float)

    p = sub.add_parser("metrics", help="RMSE / PSNR / SSIM between two images")
    p.add_argument("reference")
    p.add_argument("test")

    p = sub.add_parser("run", help="run every stage from a config file")
    for sp in sub.choices.values():
        _common(sp)
    return parser


OVERRIDES = {
    "seed": "seed", "out": "out_dir", "threads": "threads",
    "n": "aperture.n", "aperture": "aperture.shape", "sides": "aperture.sides",
    "wavelengths": "recipe.wavelengths_m", "defocus": "recipe.defocus",
    "pad_factor": "recipe.pad_factor", "psf_crop": "recipe.psf_crop",
    "sequence": "sequence.path", "k": "sequence.k", "init": "sequence.init",
    "base_mask": "sequence.base_mask", "noisy_count": "sequence.noisy_count",
    "bins": "bins", "objective": "objective.kind", "iters": "optimizer.max_iters",
    "lr": "optimizer.lr_mask", "grad_check": "optimizer.grad_check",
    "tol": "certify.tol", "swaps": "switching.swaps_ms", "exposure_ms": "switching.exposure_ms",
    "delta": "capture.delta",
}


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for attr, key in OVERRIDES.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "defocus", None) is not None and getattr(args, "bins", None) is None:
        # keep layer count in step with the defocus bins unless set explicitly
        overrides["bins"] = dict(args.defocus)
    if getattr(args, "image", None):
        overrides["scenes"] = [{"image": args.image, "depth": getattr(args, "depth", None)}]
    if getattr(args, "synthetic", None):
        overrides["synthetic_scene"] = {"height": args.synthetic[0], "width": args.synthetic[1]}
    return ExperimentConfig.load(getattr(args, "config", None), overrides)


def _cmd_psf(cfg, art):
    aperture, sequence = cfg.aperture(), cfg.sequence()
    stage_psf(cfg, art, sequence, aperture)
    tio.write_tpsf(art.path("sequence.tpsf"), sequence.heights, sequence.dwell_weights)
    return {"k": sequence.k, "depths": int(cfg.recipe.defocus_values.size)}


def _cmd_capture(cfg, art):
    scenes = cfg.scenes()
    if cfg.raw["capture"]["delta"]:
        stack = delta_stack(cfg.recipe.defocus_values.size, len(cfg.recipe.wavelengths_m), cfg.recipe.psf_crop)
        stacks, weights = stack[None], np.ones(1)
    else:
        stacks, _ = render_psf_stack(cfg.sequence(), cfg.aperture(), cfg.recipe)
        weights = cfg.sequence().dwell_weights
    captured = stage_capture(cfg, art, scenes, stacks, weights)
    report = metrics_report([(s.all_in_focus, img) for _, s, img in captured], [n for n, _, _ in captured])
    report["seed"] = cfg.seed
    art.json("metrics.json", report)
    return {"rmse": report["rmse"], "files": [f"coded/{i:03d}.pfm" for i in range(len(captured))]}


def _cmd_optimize(cfg, art):
    aperture = cfg.aperture()
    scenes = cfg.scenes() if cfg.raw["objective"]["kind"] == "direct_capture_mse" else None
    run = stage_optimize(cfg, art, cfg.sequence(), aperture, scenes)
    if run.termination.startswith("non_finite"):
        # optrun.json is already on disk for diagnosis
        raise NumericalError(f"optimisation stopped: {run.termination}")
    return {"initial_loss": run.loss_trace[0] if run.loss_trace else run.final_loss,
            "final_loss": run.final_loss, "iterations": len(run.loss_trace),
            "termination": run.termination}


def _cmd_certify(cfg, art):
    payload = stage_certify(cfg, cfg.aperture(), cfg.sequence(), float(cfg.raw["certify"]["tol"]))
    art.json("certificate.json", payload)
    return payload


def _cmd_sweep(cfg, art):
    aperture, scenes = cfg.aperture(), cfg.scenes()
    sequence = cfg.sequence()
    if not cfg.raw["sequence"]["path"] and cfg.optimizer.max_iters > 0:
        sequence = stage_optimize(cfg, art, sequence, aperture, scenes).final
    return stage_sweep(cfg, art, sequence, aperture, scenes)


def _cmd_metrics(cfg, art, args):
    a = np.asarray(tio.read_image(args.reference), dtype=np.float64)
    b = np.asarray(tio.read_image(args.test), dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"image shapes differ: {a.shape} vs {b.shape}")
    report = metrics_report([(a, b)], [os.path.basename(args.test)])
    report["seed"] = cfg.seed
    art.json("metrics.json", report)
    return report


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        with scipy.fft.set_workers(cfg.threads):
            if args.command == "run":
                manifest = run_experiment(cfg)
                print(json.dumps({"out": cfg.out_dir, "files": len(manifest["files"])}))
                return EXIT_OK
            art = Artifacts(cfg.out_dir)
            t0 = time.perf_counter()
            if args.command == "metrics":
                result = _cmd_metrics(cfg, art, args)
            else:
                handler = {"psf": _cmd_psf, "capture": _cmd_capture, "optimize": _cmd_optimize,
                           "certify": _cmd_certify, "sweep-switching": _cmd_sweep}[args.command]
                result = handler(cfg, art)
            art.manifest(cfg, args.command, {"total": time.perf_counter() - t0})
            print(json.dumps(result, indent=2, default=_json_default))
            return EXIT_OK
    except OutputDirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, tio.FormatError, FileNotFoundError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DegenerateApertureError, ApertureRejected, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
