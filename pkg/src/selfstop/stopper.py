"""Co-training loop with autoencoder-based early stopping.

Per outer iteration the generator takes one step on the fitting loss, the
autoencoder takes one step on the window of recent iterates, and the newest
iterate is scored. The stop fires after ``patience`` consecutive scores fail
to beat the best one; the best-scoring iterate is returned.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .degradation import ForwardOp, adjoint_fft2, fft2
from .errors import ConfigError, GraphError, NumericalError
from .metrics import psnr, ssim
from .models import Generator, to_image
from .tensor import Adam, backward, ops
from .trace import RunTrace
from .validator import AEState, AutoencoderConfig, ae_score, ae_train_step, build_autoencoder

VARIANTS = ("patience", "running_average")
REASONS = ("patience_exhausted", "max_iters", "running_average_upturn")


@dataclass(frozen=True)
class StopConfig:
    window: int = 256
    patience: int = 500
    max_iters: int = 20_000
    variant: str = "patience"
    span: int = 100
    # scores taken before this many iterations never become "best"; None means `window`
    warmup: int | None = None
    # an improvement must beat best * (1 - rel_tol)
    rel_tol: float = 0.0
    # keep 8-bit copies of the window instead of full precision
    quantize: bool = False
    # keep iterating (and tracing) after the decision, up to max_iters
    trace_after_stop: bool = False

    @property
    def warmup_iters(self) -> int:
        return self.window if self.warmup is None else self.warmup

    def validate(self) -> None:
        if self.window < 1 or self.patience < 1 or self.span < 1:
            raise ConfigError(f"window, patience and span must be >= 1, got {self.window}, {self.patience}, {self.span}")
        if self.max_iters <= self.window:
            raise ConfigError(f"max_iters ({self.max_iters}) must exceed the window ({self.window})")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown stopping variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "running_average" and (self.span - 1) // 2 > self.window:
            raise ConfigError("running-average span too wide for the window to hold its centre iterate")
        if not 0 <= self.rel_tol < 1:
            raise ConfigError(f"rel_tol must lie in [0, 1), got {self.rel_tol}")
        if self.warmup_iters < 0:
            raise ConfigError("warmup must be >= 0")


@dataclass
class StopDecision:
    stopped: bool
    selected_index: int
    selected_image: np.ndarray | None
    reason: str
    stop_iteration: int


class StopController:
    """Window, best-score bookkeeping and the stop rule.

    ``observe`` holds the patience logic and needs no autoencoder, so it can
    be driven by a synthetic score sequence; ``es_step`` adds the AE step.
    """

    def __init__(self, config: StopConfig, ae: AEState | None = None):
        config.validate()
        self.config = config
        self.ae = ae
        self.buffer: deque = deque(maxlen=config.window)
        self.buffer_index: deque = deque(maxlen=config.window)
        self.k = 0
        self.best_loss = np.inf
        self.best_index = -1
        self.best_image: np.ndarray | None = None
        self.stale = 0
        self.decision: StopDecision | None = None
        self._recent: deque = deque(maxlen=config.span)

    # ---------------------------------------------------------- storage

    def _store(self, x):
        if x is None:
            return None
        if self.config.quantize:
            return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8)
        return np.array(x, dtype=np.float32, copy=True)

    def _load(self, item):
        if item is None or item.dtype != np.uint8:
            return item
        return item.astype(np.float32) / 255

    def window_images(self) -> list:
        return [self._load(it) for it in self.buffer]

    def window_indices(self) -> list[int]:
        return list(self.buffer_index)

    # ---------------------------------------------------------- rule

    def observe(self, score: float, image=None) -> StopDecision | None:
        """Record the score of iterate ``k + 1`` and push it into the window."""
        if self.decision is not None and not self.config.trace_after_stop:
            raise GraphError("controller already stopped; build a new one to continue")
        cfg = self.config
        self.k += 1
        k = self.k
        stored = self._store(image)
        decision = None
        if k > cfg.warmup_iters:
            if cfg.variant == "patience":
                value, index, pick = score, k, stored
            else:
                self._recent.append(score)
                if len(self._recent) < cfg.span:
                    value = None
                else:
                    value = float(np.mean(self._recent))
                    # centre of the averaged span; older iterates come from the window
                    back = (cfg.span - 1) // 2
                    index = k - back
                    pick = stored if back == 0 else self.buffer[len(self.buffer) - back]
            if value is not None:
                if value < self.best_loss * (1.0 - cfg.rel_tol) or self.best_index < 0:
                    self.best_loss = value
                    self.best_index = index
                    self.best_image = pick
                    self.stale = 0
                else:
                    self.stale += 1
                    if self.stale == cfg.patience and self.decision is None:
                        reason = "patience_exhausted" if cfg.variant == "patience" else "running_average_upturn"
                        decision = self._decide(True, reason)
        self.buffer.append(stored)
        self.buffer_index.append(k)
        return decision

    def _decide(self, stopped, reason):
        d = StopDecision(stopped, self.best_index, self._load(self.best_image), reason, self.k)
        self.decision = d
        return d

    def finish(self, last_image=None) -> StopDecision:
        """Decision at the iteration budget: the stop if one fired, else the best so far."""
        if self.decision is not None:
            return self.decision
        if self.best_index < 0:
            img = self._store(last_image) if last_image is not None else (self.buffer[-1] if self.buffer else None)
            self.best_index, self.best_image = self.k, img
        d = StopDecision(False, self.best_index, self._load(self.best_image), "max_iters", self.k)
        self.decision = d
        return d

    @property
    def running_average(self) -> float | None:
        if len(self._recent) < self.config.span:
            return None
        return float(np.mean(self._recent))


def es_step(ctrl: StopController, x_new) -> tuple[float, StopDecision | None]:
    """Train the AE one step on the window, score ``x_new``, update the rule."""
    if ctrl.ae is None:
        raise ConfigError("es_step needs a controller with an autoencoder")
    if ctrl.decision is not None and not ctrl.config.trace_after_stop:
        raise GraphError("controller already stopped; build a new one to continue")
    if ctrl.buffer:
        ae_train_step(ctrl.ae, ctrl.window_images())
    score = ae_score(ctrl.ae, x_new)
    return score, ctrl.observe(score, x_new)


# ---------------------------------------------------------------- fitting losses


def fit_loss(out, y, op: ForwardOp, kind: str = "mse"):
    """Data-fidelity term for a ``(1, C, H, W)`` output ``out``.

    ``y`` is in image layout ``(H, W, C)``; for the Fourier operator it is the
    complex masked measurement.
    """
    if kind not in ("mse", "l1"):
        raise ConfigError(f"unknown fitting loss {kind!r}")
    if op.kind == "identity":
        target = np.ascontiguousarray(np.asarray(y).transpose(2, 0, 1)[None], dtype=out.dtype)
        return ops.mse(out, target) if kind == "mse" else ops.l1(out, target)

    m = op.mask_for(np.asarray(y))

    if op.kind == "mask":
        yt = np.asarray(y, dtype=np.float64)

        def fn(x):
            r = (x[0].transpose(1, 2, 0) - yt) * m
            n = r.size
            if kind == "mse":
                g = 2.0 * r * m / n
                val = float(np.sum(r * r) / n)
            else:
                g = np.sign(r) * m / n
                val = float(np.sum(np.abs(r)) / n)
            return val, g.transpose(2, 0, 1)[None]

        return ops.external_loss(out, fn, name=f"masked_{kind}")

    if kind != "mse":
        raise ConfigError("the Fourier operator supports only the mse fitting loss")
    yc = np.asarray(y)

    def fn_fourier(x):
        img = x[0].transpose(1, 2, 0)
        r = m * fft2(img) - yc
        n = r.size
        g = 2.0 * np.real(adjoint_fft2(m * r)) / n
        return float(np.sum(np.abs(r) ** 2) / n), g.transpose(2, 0, 1)[None]

    return ops.external_loss(out, fn_fourier, name="fourier_mse")


# ---------------------------------------------------------------- outer loop


class DivergenceError(NumericalError):
    """The fitting loss became non-finite; the trace so far is attached."""

    def __init__(self, where, message, trace, decision):
        super().__init__(where, message)
        self.trace = trace
        self.decision = decision


@dataclass
class RunResult:
    decision: StopDecision
    trace: RunTrace
    final_image: np.ndarray
    peak_image: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def run_with_es(
    gen: Generator,
    y,
    op: ForwardOp,
    fit_kind: str = "mse",
    stop: StopConfig | None = None,
    ae_config: AutoencoderConfig | None = None,
    lr: float = 1e-3,
    ground_truth=None,
    on_row=None,
    timing: bool = False,
) -> RunResult:
    """Fit ``gen`` to ``y`` under ``op`` with autoencoder early stopping.

    Row ``k`` of the trace describes iterate ``k``: the generator output that
    the ``k``-th optimizer step differentiates, its fitting loss, its AE
    score and (with ``ground_truth``) its PSNR/SSIM. ``on_row`` receives each
    row as soon as it exists.
    """
    stop = stop or StopConfig()
    c = gen.config
    if ae_config is None:
        ae_config = AutoencoderConfig(height=c.height, width=c.width, channels=c.channels)
    ae = build_autoencoder(ae_config)
    ctrl = StopController(stop, ae)
    opt = Adam(gen.params, lr=lr)
    trace = RunTrace()
    gt = None if ground_truth is None else np.asarray(ground_truth, dtype=np.float64)
    best_psnr, peak_image = -np.inf, None
    x = None
    for k in range(1, stop.max_iters + 1):
        t0 = time.perf_counter()
        opt.zero_grad()
        try:
            out = gen()
            x = to_image(out).astype(np.float32)
            loss = fit_loss(out, y, op, fit_kind)
            fit = loss.item()
            if not np.isfinite(fit):
                raise NumericalError("fit_loss")
            backward(loss, gen.params)
            opt.step()
        except NumericalError as exc:
            raise DivergenceError(f"iteration {k}", str(exc), trace, ctrl.finish(x)) from exc
        score, decision = es_step(ctrl, x)
        p = s = None
        if gt is not None:
            ev = np.clip(x, 0.0, 1.0)
            p, s = psnr(ev, gt), ssim(ev, gt)
            if p > best_psnr:
                best_psnr, peak_image = p, ev
        wall = (time.perf_counter() - t0) * 1e3 if timing else None
        trace.append(k, fit, score, p, s, ctrl.stale, wall)
        if on_row is not None:
            on_row(trace.rows[-1])
        if decision is not None and not stop.trace_after_stop:
            break
    decision = ctrl.finish(x)
    return RunResult(decision=decision, trace=trace, final_image=x, peak_image=peak_image, extras={"ae": ae})


def run_running_average(gen, y, op, fit_kind="mse", stop: StopConfig | None = None, span: int = 100, **kw):
    """:func:`run_with_es` with the running-average rule of span ``span``."""
    base = stop or StopConfig()
    cfg = StopConfig(**{**base.__dict__, "variant": "running_average", "span": span})
    return run_with_es(gen, y, op, fit_kind, cfg, **kw)


def replay(scores, config: StopConfig) -> StopDecision:
    """Apply the stopping rule to a recorded score sequence (no images)."""
    ctrl = StopController(config)
    for s in scores:
        d = ctrl.observe(float(s))
        if d is not None and not config.trace_after_stop:
            return d
    return ctrl.finish()
