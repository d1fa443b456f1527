"""One experiment end to end: degrade, fit with early stopping, persist."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .._alloc import tune_allocator
from ..degradation import (
    ForwardOp,
    adjoint_fft2,
    apply_noise,
    fft2,
    make_inpainting_mask,
    make_mri_mask,
    mri_noise,
)
from ..errors import ShapeError
from ..metrics import GapReport, compute_gaps, log_spectrum, to_luma, whiteness_statistic
from ..models import build_generator
from ..stopper import RunResult, run_with_es
from ..trace import RunTrace
from ..validator import save_checkpoint
from .config import ExperimentConfig
from .imageio import load_image, save_image
from .phantoms import PHANTOMS, make_phantom

log = logging.getLogger(__name__)


@dataclass
class Problem:
    ground_truth: np.ndarray | None
    y: np.ndarray
    op: ForwardOp
    # what the measurement looks like as a picture
    measurement_view: np.ndarray


@dataclass
class RunOutcome:
    run_dir: Path
    result: RunResult
    gaps: GapReport | None


def load_ground_truth(cfg: ExperimentConfig) -> np.ndarray | None:
    src = cfg["image"]
    if src is None:
        return None
    if src in PHANTOMS:
        return make_phantom(src, cfg["height"], cfg["width"], cfg.channels, seed=cfg["image.seed"])
    img = load_image(src)
    if cfg.task == "mri" and img.shape[2] == 3:
        img = to_luma(img)[:, :, None]
    return img


def build_problem(cfg: ExperimentConfig) -> Problem:
    gt = load_ground_truth(cfg)
    seed = cfg["seed"]
    if cfg["measurement"] is not None:
        y = load_image(cfg["measurement"])
        if gt is not None and gt.shape != y.shape:
            raise ShapeError("run_experiment", "measurement and ground truth differ", y.shape, gt.shape)
        return Problem(gt, y, ForwardOp(), y)
    h, w, _ = gt.shape
    if cfg.task == "denoise":
        y = apply_noise(gt, cfg.noise_spec())
        return Problem(gt, y, ForwardOp(), y)
    if cfg.task == "regress":
        y = apply_noise(gt, cfg.noise_spec(), clip=False)
        return Problem(gt, y, ForwardOp(), np.clip(y, 0, 1))
    if cfg.task == "inpaint":
        mask = make_inpainting_mask(h, w, cfg["inpaint.rate"], seed=seed)
        op = ForwardOp("mask", mask)
        y = apply_noise(gt, cfg.noise_spec()) * op.mask_for(gt)
        return Problem(gt, y, op, y)
    mask = make_mri_mask(h, w, cfg["mri.acceleration"], seed=seed)
    op = ForwardOp("subsampled_fourier", mask)
    m = op.mask_for(gt)
    y = m * (fft2(gt) + mri_noise(gt.shape, cfg["mri.sigma"], seed=seed))
    view = np.clip(np.abs(adjoint_fft2(y)), 0, 1)
    return Problem(gt, y, op, view)


def residual(problem: Problem, x: np.ndarray) -> np.ndarray:
    """Single-channel data residual f(x) - y."""
    op = problem.op
    if op.kind == "subsampled_fourier":
        m = op.mask_for(x)
        r = np.real(adjoint_fft2(m * fft2(x) - problem.y))
        return to_luma(r)
    r = np.asarray(x, np.float64) - problem.y
    if op.kind == "mask":
        r = r * op.mask_for(r)
    return to_luma(r)


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _diagnostics(run_dir: Path, problem: Problem, final, save_images: bool) -> dict:
    out = {}
    try:
        if problem.ground_truth is not None:
            spec = log_spectrum(problem.ground_truth)
            np.save(run_dir / "spectrum.npy", spec)
            if save_images:
                save_image(spec, run_dir / "spectrum.png")
        r = residual(problem, final)
        corr, off = whiteness_statistic(r)
        np.save(run_dir / "whiteness.npy", corr)
        if save_images:
            view = np.fft.fftshift(np.log1p(np.abs(corr)))
            save_image(view / max(view.max(), 1e-12), run_dir / "whiteness.png")
        out.update(whiteness_zero_shift=float(corr[0, 0]), whiteness_off_origin_norm=off,
                   residual_variance=float(np.mean(r * r)))
    except ShapeError as exc:
        # diagnostics use the radix-2 transform; other sizes just skip them
        out["skipped"] = str(exc)
    return out


def run_experiment(cfg: ExperimentConfig, run_dir=None) -> RunOutcome:
    """Run one configured experiment, writing artifacts to ``run_dir``.

    ``trace.csv`` grows row by row, so an interrupted or diverged run leaves
    a readable prefix behind.
    """
    tune_allocator()
    run_dir = Path(run_dir if run_dir is not None else cfg["output"])
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.dumps(), encoding="ascii")

    problem = build_problem(cfg)
    gt = problem.ground_truth
    h, w, c = problem.y.shape
    gen = build_generator(cfg.generator_config(h, w, c))
    ae_cfg = cfg.ae_config(h, w, c)
    stop = cfg.stop_config()
    save_images = cfg["save.images"]
    if save_images:
        if gt is not None:
            save_image(gt, run_dir / "ground_truth.png")
        save_image(problem.measurement_view, run_dir / "measurement.png")
        if problem.op.mask is not None:
            m = problem.op.mask
            save_image(np.fft.fftshift(m) if problem.op.kind == "subsampled_fourier" else m, run_dir / "mask.png")

    with open(run_dir / "trace.csv", "w", encoding="ascii", newline="\n") as fh:
        fh.write(RunTrace.header())

        def on_row(row):
            fh.write(RunTrace.format_row(row))
            fh.flush()

        log.info("run %s: task=%s kind=%s seed=%d", run_dir, cfg.task, gen.config.kind, cfg["seed"])
        result = run_with_es(
            gen, problem.y, problem.op, cfg.fit_kind, stop, ae_cfg, lr=cfg["generator.lr"],
            ground_truth=gt, on_row=on_row, timing=cfg["timing"],
        )

    d = result.decision
    summary = {
        "decision": {
            "stopped": d.stopped,
            "reason": d.reason,
            "selected_index": d.selected_index,
            "stop_iteration": d.stop_iteration,
        }
    }
    gaps = None
    if gt is not None and result.trace.has_metrics():
        gaps = compute_gaps(result.trace, d.selected_index)
        summary["gaps"] = gaps.to_dict()
    _dump_json(summary, run_dir / "gaps.json")

    if save_images:
        save_image(d.selected_image, run_dir / "selected.png")
        save_image(result.final_image, run_dir / "final.png")
        if result.peak_image is not None:
            save_image(result.peak_image, run_dir / "peak.png")
    _dump_json(_diagnostics(run_dir, problem, result.final_image, save_images), run_dir / "diagnostics.json")
    if cfg["save.checkpoint"]:
        save_checkpoint(result.extras["ae"], run_dir / "ae.npz")
    return RunOutcome(run_dir, result, gaps)
