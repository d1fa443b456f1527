"""Online autoencoder used as a self-validation score.

The encoder halves the resolution ``num_stages`` times down to a single
channel, a stack of bias-free linear layers acts on the flattened code and a
mirrored decoder maps back to the image. It is trained by one optimizer step
per outer iteration on recent reconstructions; its reconstruction error on
the newest iterate is the score the stopper watches.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError
from .rng import stream
from .tensor import Adam, BatchNormState, Tensor, backward, no_grad, ops

# hidden widths of the full-size encoder (the decoder mirrors them)
REFERENCE_WIDTHS = (32, 64, 128, 128, 128, 128)
REFERENCE_STAGES = 7
# spatial side of the code the reference layout ends at (512 / 2**7)
REFERENCE_CODE_SIDE = 4


def auto_stages(height: int, width: int) -> int:
    """Stage count that keeps a 4x4 code where possible, never below 2x2."""

    def fits(d, side):
        f = 2 ** d
        return height % f == 0 and width % f == 0 and min(height, width) // f >= side

    for side in (REFERENCE_CODE_SIDE, 2):
        d = 0
        while d < REFERENCE_STAGES and fits(d + 1, side):
            d += 1
        if d:
            return d
    return 0


@dataclass(frozen=True)
class AutoencoderConfig:
    height: int = 128
    width: int = 128
    channels: int = 3
    # None picks auto_stages(height, width)
    num_stages: int | None = None
    # encoder hidden widths, one per stage except the last (which emits 1 channel);
    # None truncates REFERENCE_WIDTHS
    widths: tuple[int, ...] | None = None
    linear_layers: int = 4
    loss: str = "mse"
    lr: float = 1e-3
    # mini-batch drawn from the window per step; 0 means the whole window
    batch_size: int = 32
    # normalisation statistics while scoring: "eval" (running) or "train" (batch)
    score_norm: str = "eval"
    seed: int = 0
    dtype: str = "float32"

    @property
    def stages(self) -> int:
        return self.num_stages if self.num_stages is not None else auto_stages(self.height, self.width)

    @property
    def hidden(self) -> tuple[int, ...]:
        if self.widths is not None:
            return tuple(self.widths)
        extra = max(0, self.stages - 1 - len(REFERENCE_WIDTHS))
        return (REFERENCE_WIDTHS + (REFERENCE_WIDTHS[-1],) * extra)[: self.stages - 1]

    @property
    def code_shape(self) -> tuple[int, int]:
        f = 2 ** self.stages
        return self.height // f, self.width // f

    @property
    def features(self) -> int:
        h, w = self.code_shape
        return h * w

    def validate(self) -> None:
        d = self.stages
        if d < 1:
            raise ConfigError(f"autoencoder needs at least one stage for {self.height}x{self.width} inputs")
        f = 2 ** d
        if self.height % f or self.width % f:
            raise ConfigError(f"input {self.height}x{self.width} is not divisible by 2**{d}")
        if self.height // f < 2 or self.width // f < 2:
            raise ConfigError(
                f"{d} stages shrink {self.height}x{self.width} to a code below 2x2; reduce num_stages"
            )
        if len(self.hidden) != d - 1 or any(c < 1 for c in self.hidden):
            raise ConfigError(f"widths must list {d - 1} positive channel counts, got {self.hidden}")
        if self.linear_layers < 0:
            raise ConfigError(f"linear_layers must be >= 0, got {self.linear_layers}")
        if self.loss not in ("mse", "l1"):
            raise ConfigError(f"unknown autoencoder loss {self.loss!r}")
        if self.score_norm not in ("eval", "train"):
            raise ConfigError(f"score_norm must be 'eval' or 'train', got {self.score_norm!r}")
        if self.batch_size < 0 or not self.lr > 0:
            raise ConfigError("batch_size must be >= 0 and lr positive")


def reference_config(**overrides) -> AutoencoderConfig:
    """The full-size layout: 512x512x3, seven stages, 16-feature code."""
    base = dict(height=512, width=512, channels=3, num_stages=REFERENCE_STAGES, widths=REFERENCE_WIDTHS)
    base.update(overrides)
    return AutoencoderConfig(**base)


@dataclass
class AEState:
    config: AutoencoderConfig
    params: dict[str, Tensor]
    norms: dict[str, BatchNormState]
    optimizer: Adam
    minibatch_rng: np.random.Generator
    steps: int = 0
    layout: dict = field(default_factory=dict)


def build_autoencoder(config: AutoencoderConfig) -> AEState:
    config.validate()
    dtype = np.dtype(config.dtype)
    rng = stream(config.seed, "ae.init")
    params: dict[str, Tensor] = {}
    norms: dict[str, BatchNormState] = {}

    def conv(name, cin, cout):
        bound = 1.0 / np.sqrt(cin * 9)
        params[name] = Tensor(rng.uniform(-bound, bound, (cout, cin, 3, 3)), requires_grad=True, name=name, dtype=dtype)

    def norm(name, c):
        st = BatchNormState.create(c, dtype=dtype, name=name)
        norms[name] = st
        params[f"{name}.weight"] = st.gamma
        params[f"{name}.bias"] = st.beta

    enc = (config.channels, *config.hidden, 1)
    for i in range(config.stages):
        conv(f"enc{i}.conv", enc[i], enc[i + 1])
        norm(f"enc{i}.bn", enc[i + 1])
    f = config.features
    for i in range(config.linear_layers):
        bound = 1.0 / np.sqrt(f)
        params[f"lin{i}.weight"] = Tensor(rng.uniform(-bound, bound, (f, f)), requires_grad=True, name=f"lin{i}", dtype=dtype)
    dec = enc[::-1]
    for i in range(config.stages):
        conv(f"dec{i}.conv", dec[i], dec[i + 1])
        norm(f"dec{i}.bn", dec[i + 1])
    opt = Adam(params, lr=config.lr)
    return AEState(
        config=config,
        params=params,
        norms=norms,
        optimizer=opt,
        minibatch_rng=stream(config.seed, "ae.minibatch"),
        layout={"encoder": enc, "decoder": dec, "features": f},
    )


def encode(state: AEState, x: Tensor, training: bool) -> Tensor:
    p = state.params
    h = x
    for i in range(state.config.stages):
        h = ops.conv2d(h, p[f"enc{i}.conv"], stride=2, padding=1)
        h = ops.relu(ops.batch_norm(h, state.norms[f"enc{i}.bn"], training=training))
    return h


def latent(state: AEState, code: Tensor) -> Tensor:
    n = code.shape[0]
    hc, wc = state.config.code_shape
    z = ops.reshape(code, (n, hc * wc))
    for i in range(state.config.linear_layers):
        z = ops.linear(z, state.params[f"lin{i}.weight"])
    return ops.reshape(z, (n, 1, hc, wc))


def decode(state: AEState, z: Tensor, training: bool) -> Tensor:
    p = state.params
    d = state.config.stages
    h = z
    for i in range(d):
        h = ops.upsample2x(h)
        h = ops.conv2d(h, p[f"dec{i}.conv"], padding=1)
        h = ops.batch_norm(h, state.norms[f"dec{i}.bn"], training=training)
        h = ops.sigmoid(h) if i == d - 1 else ops.relu(h)
    return h


def reconstruct(state: AEState, batch: np.ndarray, training: bool) -> tuple[Tensor, Tensor]:
    """``batch`` is (N, C, H, W); returns (input tensor, reconstruction)."""
    x = Tensor(batch, dtype=np.dtype(state.config.dtype))
    return x, decode(state, latent(state, encode(state, x, training)), training)


def _loss(kind, recon, target):
    return ops.mse(recon, target) if kind == "mse" else ops.l1(recon, target)


def _as_batch(state: AEState, images) -> np.ndarray:
    c = state.config
    arr = np.stack([np.asarray(im) for im in images])
    if arr.shape[1:] != (c.height, c.width, c.channels):
        raise ShapeError("autoencoder", "image shape does not match the configuration", arr.shape[1:],
                         (c.height, c.width, c.channels))
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype=np.dtype(c.dtype))


def sample_batch(state: AEState, window) -> list:
    """Seeded uniform mini-batch (without replacement) from ``window``."""
    size = len(window)
    b = state.config.batch_size
    if b == 0 or b >= size:
        return list(window)
    idx = np.sort(state.minibatch_rng.choice(size, size=b, replace=False))
    return [window[i] for i in idx]


def ae_train_step(state: AEState, window) -> float:
    """One optimizer step on a mini-batch of ``window``; returns the pre-step loss."""
    if len(window) == 0:
        raise ConfigError("ae_train_step needs a non-empty window")
    batch = _as_batch(state, sample_batch(state, window))
    state.optimizer.zero_grad()
    _, recon = reconstruct(state, batch, training=True)
    loss = _loss(state.config.loss, recon, batch)
    value = loss.item()
    backward(loss, state.params)
    state.optimizer.step()
    state.steps += 1
    return value


def ae_score(state: AEState, image) -> float:
    """Reconstruction loss of one image, no parameter or statistics update."""
    batch = _as_batch(state, [image])
    with no_grad():
        _, recon = reconstruct(state, batch, training=state.config.score_norm == "train")
        value = _loss(state.config.loss, recon, batch).item()
    if not np.isfinite(value):
        raise NumericalError("ae_score")
    return value


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(state: AEState, path) -> None:
    arrays = {f"param/{k}": v.data for k, v in state.params.items()}
    for k, st in state.norms.items():
        arrays[f"running_mean/{k}"] = st.running_mean
        arrays[f"running_var/{k}"] = st.running_var
    cfg = asdict(state.config)
    meta = {"config": cfg, "steps": state.steps, "adam_t": state.optimizer.t}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> AEState:
    """Restore parameters and running statistics (optimizer moments restart)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        cfg = meta["config"]
        if cfg.get("widths") is not None:
            cfg["widths"] = tuple(cfg["widths"])
        state = build_autoencoder(AutoencoderConfig(**cfg))
        for k, t in state.params.items():
            t.data[...] = data[f"param/{k}"]
        for k, st in state.norms.items():
            st.running_mean = data[f"running_mean/{k}"].copy()
            st.running_var = data[f"running_var/{k}"].copy()
        state.steps = int(meta["steps"])
    return state
