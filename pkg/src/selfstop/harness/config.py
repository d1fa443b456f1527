"""Flat ``key = value`` experiment configuration.

Keys are dotted (``stop.patience``); every key has a typed default listed in
``DEFAULTS``. Sources are applied in order: defaults, config file,
``SELFSTOP_SEED``, command-line ``--set`` overrides.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..degradation import NoiseSpec
from ..errors import ConfigError
from ..models import GeneratorConfig
from ..stopper import StopConfig
from ..validator import AutoencoderConfig

TASKS = ("denoise", "inpaint", "mri", "regress")
TASK_PATIENCE = {"denoise": 500, "inpaint": 500, "mri": 200, "regress": 200}
SEED_ENV = "SELFSTOP_SEED"

# key -> (type, default); type "ints" is a comma-separated tuple of ints, a
# default of None marks the key optional (``none`` in a file)
DEFAULTS: dict[str, tuple[str, object]] = {
    "task": ("str", "denoise"),
    "seed": ("int", 0),
    "output": ("str", "runs/default"),
    # phantom name or an image path; none needs `measurement`
    "image": ("str", "piecewise_smooth"),
    "image.seed": ("int", 0),
    "measurement": ("str", None),
    "height": ("int", 128),
    "width": ("int", 128),
    # None: 1 for mri, 3 otherwise (ignored when the image is a file)
    "channels": ("int", None),
    # None: siren for regress, deep_decoder otherwise
    "generator.kind": ("str", None),
    "generator.features": ("int", 128),
    "generator.depth": ("int", 5),
    "generator.lr": ("float", 0.001),
    "generator.omega0": ("float", 30.0),
    "noise.kind": ("str", "gaussian"),
    "noise.level": ("str", "medium"),
    "noise.param": ("float", None),
    "noise.scale": ("str", "std"),
    "inpaint.rate": ("float", 0.5),
    "mri.acceleration": ("int", 8),
    "mri.sigma": ("float", 0.01),
    "regress.noise": ("float", 0.196),
    "regress.scale": ("str", "variance"),
    # None: l1 for impulse noise, mse otherwise
    "fit_loss": ("str", None),
    "stop.window": ("int", 256),
    "stop.patience": ("int", None),
    "stop.max_iters": ("int", 20_000),
    "stop.variant": ("str", "patience"),
    "stop.span": ("int", 100),
    "stop.warmup": ("int", None),
    "stop.rel_tol": ("float", 0.0),
    "stop.quantize": ("bool", False),
    "stop.trace_after_stop": ("bool", False),
    "ae.widths": ("ints", None),
    "ae.num_stages": ("int", None),
    "ae.linear_layers": ("int", 4),
    "ae.batch_size": ("int", 32),
    "ae.lr": ("float", 1e-3),
    "ae.loss": ("str", "mse"),
    "ae.score_norm": ("str", "eval"),
    "timing": ("bool", False),
    "save.checkpoint": ("bool", True),
    "save.images": ("bool", True),
}


def parse_value(key: str, text: str):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind, default = DEFAULTS[key]
    text = text.strip()
    if text.lower() in ("none", ""):
        if default is not None and kind != "str":
            raise ConfigError(f"{key} may not be empty")
        return None
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "ints":
            return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None
    return text


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key = value, got {raw.strip()!r}")
            k, v = line.split("=", 1)
            k = k.strip()
            out[k] = parse_value(k, v)
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(k.strip(), v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def build(cls, path=None, overrides=None, env=None) -> "ExperimentConfig":
        vals = {k: d for k, (_, d) in DEFAULTS.items()}
        if path is not None:
            vals.update(read_config_file(path))
        env = os.environ if env is None else env
        if env.get(SEED_ENV, "").strip():
            vals["seed"] = parse_value("seed", env[SEED_ENV])
        if isinstance(overrides, dict):
            for k, v in overrides.items():
                vals[k] = parse_value(k, v) if isinstance(v, str) else v
        else:
            vals.update(parse_overrides(overrides))
        unknown = set(vals) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, updates: dict) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(updates)
        cfg = ExperimentConfig(vals)
        cfg.validate()
        return cfg

    # ---------------------------------------------------------- derived

    @property
    def task(self) -> str:
        return self["task"]

    @property
    def channels(self) -> int:
        c = self["channels"]
        return c if c is not None else (1 if self.task == "mri" else 3)

    @property
    def generator_kind(self) -> str:
        k = self["generator.kind"]
        return k if k is not None else ("siren" if self.task == "regress" else "deep_decoder")

    @property
    def fit_kind(self) -> str:
        k = self["fit_loss"]
        auto = "l1" if self.task in ("denoise", "inpaint") and self["noise.kind"] == "impulse" else "mse"
        return k if k is not None else auto

    @property
    def patience(self) -> int:
        p = self["stop.patience"]
        return p if p is not None else TASK_PATIENCE[self.task]

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.task == "regress" and self.generator_kind != "siren":
            raise ConfigError("the regress task fits a siren generator; drop generator.kind or set it to siren")
        if self.task != "regress" and self.generator_kind == "siren":
            raise ConfigError("siren is only used for the regress task")
        imp = self["noise.kind"] == "impulse"
        if self.task in ("denoise", "inpaint") and self["fit_loss"] is not None and (self.fit_kind == "l1") != imp:
            raise ConfigError(f"fit_loss {self.fit_kind} does not match noise {self['noise.kind']} (impulse pairs with l1)")
        if self.task == "mri" and self.fit_kind != "mse":
            raise ConfigError("mri fits with the mse loss")
        if self.task == "mri" and self.channels != 1:
            raise ConfigError("mri works on single-channel images")
        if self["image"] is None and self["measurement"] is None:
            raise ConfigError("image = none needs a measurement path")
        if self["measurement"] is not None and self.task not in ("denoise", "regress"):
            raise ConfigError("a measurement file is only accepted for the denoise and regress tasks")
        if self["regress.scale"] not in ("std", "variance"):
            raise ConfigError("regress.scale must be std or variance")
        self.noise_spec().validate()
        self.stop_config().validate()
        self.generator_config().validate()

    # ---------------------------------------------------------- components

    def generator_config(self, height=None, width=None, channels=None) -> GeneratorConfig:
        return GeneratorConfig(
            kind=self.generator_kind,
            height=height or self["height"],
            width=width or self["width"],
            channels=channels or self.channels,
            features=self["generator.features"],
            depth=self["generator.depth"],
            omega0=self["generator.omega0"],
            seed=self["seed"],
        )

    def noise_spec(self) -> NoiseSpec:
        if self.task == "regress":
            return NoiseSpec("gaussian", None, param=self["regress.noise"], scale=self["regress.scale"], seed=self["seed"])
        return NoiseSpec(
            self["noise.kind"], self["noise.level"], param=self["noise.param"], scale=self["noise.scale"],
            seed=self["seed"],
        )

    def stop_config(self) -> StopConfig:
        return StopConfig(
            window=self["stop.window"],
            patience=self.patience,
            max_iters=self["stop.max_iters"],
            variant=self["stop.variant"],
            span=self["stop.span"],
            warmup=self["stop.warmup"],
            rel_tol=self["stop.rel_tol"],
            quantize=self["stop.quantize"],
            trace_after_stop=self["stop.trace_after_stop"],
        )

    def ae_config(self, height, width, channels) -> AutoencoderConfig:
        return AutoencoderConfig(
            height=height,
            width=width,
            channels=channels,
            num_stages=self["ae.num_stages"],
            widths=self["ae.widths"],
            linear_layers=self["ae.linear_layers"],
            loss=self["ae.loss"],
            lr=self["ae.lr"],
            batch_size=self["ae.batch_size"],
            score_norm=self["ae.score_norm"],
            seed=self["seed"],
        )

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in DEFAULTS)
