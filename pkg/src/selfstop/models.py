"""Single-instance generators: Deep Decoder, SIREN and an hourglass DIP surrogate.

Every generator maps a frozen input (seed tensor or coordinate grid) to a
``(1, C, H, W)`` tensor through trainable parameters held in ``params``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .rng import stream
from .tensor import BatchNormState, Tensor, no_grad, ops

KINDS = ("deep_decoder", "siren", "hourglass")


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "deep_decoder"
    height: int = 128
    width: int = 128
    channels: int = 3
    # channels for deep_decoder/hourglass, hidden units for siren
    features: int = 128
    # upsampling stages (deep_decoder), scales (hourglass), hidden layers (siren)
    depth: int = 5
    omega0: float = 30.0
    skip_channels: int = 4
    input_channels: int = 32
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        if self.features < 1 or self.depth < 1:
            raise ConfigError(f"features and depth must be >= 1, got {self.features}, {self.depth}")
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ConfigError(f"invalid output shape {(self.height, self.width, self.channels)}")
        if self.kind in ("deep_decoder", "hourglass"):
            f = 2 ** self.depth
            if self.height % f or self.width % f:
                raise ConfigError(
                    f"{self.kind} with depth {self.depth} needs H and W divisible by {f}, "
                    f"got {self.height}x{self.width}"
                )
        if self.omega0 <= 0:
            raise ConfigError(f"omega0 must be positive, got {self.omega0}")


def coordinate_grid(height: int, width: int, dtype=np.float32) -> np.ndarray:
    """Pixel-centre coordinates as an ``(H*W, 2)`` array of (row, col) in [-1, 1].

    Rows are in raster order. A singleton axis maps to coordinate 0.
    """
    if height < 1 or width < 1:
        raise ConfigError(f"grid dims must be >= 1, got {height}x{width}")

    def axis(n):
        return np.zeros(1) if n == 1 else np.linspace(-1.0, 1.0, n)

    r, c = np.meshgrid(axis(height), axis(width), indexing="ij")
    return np.stack([r.ravel(), c.ravel()], axis=1).astype(dtype)


def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Generator:
    """A generator network with frozen input and named parameters."""

    def __init__(self, config: GeneratorConfig):
        config.validate()
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self.norms: dict[str, BatchNormState] = {}
        init = stream(config.seed, "generator.init")
        fixed = stream(config.seed, "generator.input")
        builder = {
            "deep_decoder": self._build_deep_decoder,
            "siren": self._build_siren,
            "hourglass": self._build_hourglass,
        }[config.kind]
        self.fixed_input = builder(init, fixed)
        self.fixed_input.setflags(write=False)

    # ------------------------------------------------------------ construction

    def _param(self, name, array):
        t = Tensor(array, requires_grad=True, name=name, dtype=self.dtype)
        self.params[name] = t
        return t

    def _norm(self, name, channels):
        st = BatchNormState.create(channels, dtype=self.dtype, name=name)
        self.norms[name] = st
        self.params[f"{name}.weight"] = st.gamma
        self.params[f"{name}.bias"] = st.beta
        return st

    def _conv(self, rng, name, cin, cout, k):
        bound = 1.0 / np.sqrt(cin * k * k)
        return self._param(name, _uniform(rng, bound, (cout, cin, k, k), self.dtype))

    def _build_deep_decoder(self, rng, fixed):
        c = self.config
        k = c.features
        for i in range(c.depth):
            self._conv(rng, f"stage{i}.conv", k, k, 1)
        self._conv(rng, "out.conv", k, c.channels, 1)
        f = 2 ** c.depth
        return fixed.uniform(0.0, 0.1, size=(1, k, c.height // f, c.width // f)).astype(self.dtype)

    def _build_siren(self, rng, fixed):
        c = self.config
        k, w0 = c.features, c.omega0
        self._param("layer0.weight", _uniform(rng, 1.0 / 2, (k, 2), self.dtype))
        self._param("layer0.bias", np.zeros(k))
        bound = np.sqrt(6.0 / k) / w0
        for i in range(1, c.depth):
            self._param(f"layer{i}.weight", _uniform(rng, bound, (k, k), self.dtype))
            self._param(f"layer{i}.bias", np.zeros(k))
        self._param("out.weight", _uniform(rng, bound, (c.channels, k), self.dtype))
        self._param("out.bias", np.zeros(c.channels))
        return coordinate_grid(c.height, c.width, self.dtype)

    def _build_hourglass(self, rng, fixed):
        c = self.config
        k, s = c.features, c.skip_channels
        cin = c.input_channels
        for i in range(c.depth):
            self._conv(rng, f"down{i}.conv1", cin, k, 3)
            self._norm(f"down{i}.bn1", k)
            self._conv(rng, f"down{i}.conv2", k, k, 3)
            self._norm(f"down{i}.bn2", k)
            self._conv(rng, f"skip{i}.conv", cin, s, 1)
            self._norm(f"skip{i}.bn", s)
            cin = k
        for i in reversed(range(c.depth)):
            self._norm(f"up{i}.bn0", s + k)
            self._conv(rng, f"up{i}.conv1", s + k, k, 3)
            self._norm(f"up{i}.bn1", k)
            self._conv(rng, f"up{i}.conv2", k, k, 1)
            self._norm(f"up{i}.bn2", k)
        self._conv(rng, "out.conv", k, c.channels, 1)
        return fixed.uniform(0.0, 0.1, size=(1, c.input_channels, c.height, c.width)).astype(self.dtype)

    # ------------------------------------------------------------ forward

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self) -> Tensor:
        """Current reconstruction as a ``(1, C, H, W)`` tensor."""
        kind = self.config.kind
        if kind == "deep_decoder":
            return self._forward_deep_decoder()
        if kind == "siren":
            return self._forward_siren()
        return self._forward_hourglass()

    __call__ = forward

    def _layer(self, name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except NumericalError as exc:
            raise NumericalError(f"{self.config.kind}.{name}", str(exc)) from exc

    def _forward_deep_decoder(self):
        p = self.params
        h = Tensor(self.fixed_input, dtype=self.dtype)
        for i in range(self.config.depth):
            h = self._layer(f"stage{i}.conv", ops.conv2d, h, p[f"stage{i}.conv"])
            # upsample -> relu -> channel norm, fused
            h = self._layer(f"stage{i}.up_relu_norm", ops.up_relu_norm, h)
        h = self._layer("out.conv", ops.conv2d, h, p["out.conv"])
        return self._layer("out.sigmoid", ops.sigmoid, h)

    def _forward_siren(self):
        c = self.config
        p = self.params
        h = Tensor(self.fixed_input, dtype=self.dtype)
        for i in range(c.depth):
            h = self._layer(f"layer{i}", ops.linear, h, p[f"layer{i}.weight"], p[f"layer{i}.bias"])
            h = self._layer(f"layer{i}.sine", ops.sine, h, omega=c.omega0)
        h = self._layer("out", ops.linear, h, p["out.weight"], p["out.bias"])
        h = self._layer("out.sigmoid", ops.sigmoid, h)
        h = ops.reshape(h, (1, c.height, c.width, c.channels))
        return ops.permute(h, (0, 3, 1, 2))

    def _bn_relu(self, name, h):
        h = self._layer(name, ops.batch_norm, h, self.norms[name], training=True)
        return self._layer(f"{name}.relu", ops.relu, h)

    def _forward_hourglass(self):
        p = self.params
        d = self.config.depth
        h = Tensor(self.fixed_input, dtype=self.dtype)
        skips = []
        for i in range(d):
            skips.append(self._bn_relu(f"skip{i}.bn", self._layer(f"skip{i}.conv", ops.conv2d, h, p[f"skip{i}.conv"])))
            h = self._layer(f"down{i}.conv1", ops.conv2d, h, p[f"down{i}.conv1"], stride=2, padding=1)
            h = self._bn_relu(f"down{i}.bn1", h)
            h = self._layer(f"down{i}.conv2", ops.conv2d, h, p[f"down{i}.conv2"], padding=1)
            h = self._bn_relu(f"down{i}.bn2", h)
        for i in reversed(range(d)):
            h = self._layer(f"up{i}.up", ops.upsample2x, h)
            h = ops.concat([skips[i], h], axis=1)
            h = self._layer(f"up{i}.bn0", ops.batch_norm, h, self.norms[f"up{i}.bn0"], training=True)
            h = self._layer(f"up{i}.conv1", ops.conv2d, h, p[f"up{i}.conv1"], padding=1)
            h = self._bn_relu(f"up{i}.bn1", h)
            h = self._layer(f"up{i}.conv2", ops.conv2d, h, p[f"up{i}.conv2"])
            h = self._bn_relu(f"up{i}.bn2", h)
        h = self._layer("out.conv", ops.conv2d, h, p["out.conv"])
        return self._layer("out.sigmoid", ops.sigmoid, h)


def build_generator(config: GeneratorConfig) -> Generator:
    return Generator(config)


def generate(gen: Generator) -> Tensor:
    """Differentiable reconstruction ``(1, C, H, W)``."""
    return gen.forward()


def to_image(t) -> np.ndarray:
    """``(1, C, H, W)`` tensor or array -> ``(H, W, C)`` float array."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    return np.ascontiguousarray(data[0].transpose(1, 2, 0))


def render(gen: Generator) -> np.ndarray:
    """Current reconstruction as an ``(H, W, C)`` image without graph recording."""
    with no_grad():
        return to_image(gen.forward())
