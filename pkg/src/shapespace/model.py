"""Encoder, decoder and task heads assembled from configuration.

The encoder is a convolutional stack followed by two fully connected layers;
the second one (``fc2``) is linear and never uses dropout, so its leading
units can be read directly as target-space coordinates.  The classifier is
a softmax layer on ``fc2`` and the decoder reconstructs the image from the
full ``fc2`` vector through fully connected and upconvolutional layers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError
from .layers import ConvSpec, conv2d, conv_output_extent, dense, dropout, max_pool, upconv
from .tensor import Tensor, as_tensor, parameter

TASKS = ("classify", "reconstruct", "map")


@dataclass(frozen=True)
class LayerSpec:
    type: str
    filters: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    width: int = 0


@dataclass(frozen=True)
class UpconvSpec:
    filters: int
    kernel: int
    scale: int


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int
    layers: Tuple[LayerSpec, ...]
    fc1_size: int
    fc2_size: int
    fc1_dropout: bool = True
    dropout_rate: float = 0.5
    weight_decay: float = 0.0
    noise_level: float = 0.0


@dataclass(frozen=True)
class DecoderConfig:
    fc_sizes: Tuple[int, ...]
    reshape: Tuple[int, int, int]
    upconvs: Tuple[UpconvSpec, ...]
    weight_decay: float = 0.0
    dropout: bool = False
    dropout_rate: float = 0.5


@dataclass(frozen=True)
class NamedConfig:
    """Hyperparameters of one named training configuration.

    ``decoder_weight_decay`` and ``decoder_dropout`` are ``None`` for
    configurations without a decoder.
    """

    name: str
    weight_decay: float
    dropout: bool
    noise_level: float
    rep_size: int
    decoder_weight_decay: Optional[float] = None
    decoder_dropout: Optional[bool] = None


@dataclass(frozen=True)
class NetworkConfig:
    encoder: EncoderConfig
    decoder: Optional[DecoderConfig]
    name: str = "custom"


def _read_json(name: str) -> dict:
    return json.loads(resources.files("shapespace.configs").joinpath(name).read_text(encoding="utf-8"))


def named_configs() -> Dict[str, NamedConfig]:
    out = {}
    for name, entry in _read_json("presets.json").items():
        enc, dec = entry["encoder"], entry["decoder"]
        out[name] = NamedConfig(name=name, weight_decay=enc["weight_decay"], dropout=enc["dropout"],
                                noise_level=enc["noise_level"], rep_size=enc["rep_size"],
                                decoder_weight_decay=None if dec is None else dec["weight_decay"],
                                decoder_dropout=None if dec is None else dec["dropout"])
    return out


def named_config(name: str) -> NamedConfig:
    configs = named_configs()
    if name not in configs:
        raise ConfigError(f"unknown configuration {name!r}; choose from {sorted(configs)}")
    return configs[name]


def load_architecture(source) -> dict:
    """Architecture document by preset name (``desk``, ``sketchanet``) or file path."""
    if isinstance(source, dict):
        return source
    if source in ("desk", "sketchanet"):
        return _read_json(f"{source}.json")
    with open(source, encoding="utf-8") as fh:
        return json.load(fh)


def network_config(named, architecture="desk") -> NetworkConfig:
    """Combine a named hyperparameter set with an architecture document.

    The representation size is divided by the architecture's
    ``rep_size_divisor`` (8 for the desk preset, so 512 becomes 64).
    """
    if isinstance(named, str):
        named = named_config(named)
    arch = load_architecture(architecture)
    layers = tuple(LayerSpec(**{k: v for k, v in layer.items()}) for layer in arch["encoder"])
    divisor = arch.get("rep_size_divisor", 1)
    rate = arch.get("dropout_rate", 0.5)
    encoder = EncoderConfig(input_size=arch["input_size"], layers=layers, fc1_size=arch["fc1_size"],
                            fc2_size=max(1, named.rep_size // divisor), fc1_dropout=named.dropout,
                            dropout_rate=rate, weight_decay=named.weight_decay, noise_level=named.noise_level)
    dec = arch.get("decoder")
    decoder = None
    if dec is not None and named.decoder_weight_decay is not None:
        decoder = DecoderConfig(fc_sizes=tuple(dec["fc_sizes"]), reshape=tuple(dec["reshape"]),
                                upconvs=tuple(UpconvSpec(**u) for u in dec["upconv"]),
                                weight_decay=named.decoder_weight_decay,
                                dropout=bool(named.decoder_dropout), dropout_rate=rate)
    cfg = NetworkConfig(encoder=encoder, decoder=decoder, name=named.name)
    validate_config(cfg)
    return cfg


def encoder_shapes(enc: EncoderConfig) -> List[Tuple[int, int, int]]:
    """Static (channels, height, width) after every encoder layer."""
    c, h, w = 1, enc.input_size, enc.input_size
    shapes = []
    for i, layer in enumerate(enc.layers):
        if layer.type == "conv":
            if layer.kernel < 1 or layer.stride < 1 or layer.filters < 1:
                raise ConfigError(f"encoder layer {i}: invalid convolution {layer}")
            c = layer.filters
            h = conv_output_extent(h, layer.kernel, layer.stride, layer.padding)
            w = conv_output_extent(w, layer.kernel, layer.stride, layer.padding)
        elif layer.type == "pool":
            if layer.width < 1 or layer.stride < 1:
                raise ConfigError(f"encoder layer {i}: invalid pooling {layer}")
            h = (h - layer.width) // layer.stride + 1 if h >= layer.width else 0
            w = (w - layer.width) // layer.stride + 1 if w >= layer.width else 0
        else:
            raise ConfigError(f"encoder layer {i}: unknown type {layer.type!r}")
        if h < 1 or w < 1:
            raise ConfigError(f"encoder layer {i} ({layer.type}) yields non-positive extent {(h, w)}")
        shapes.append((c, h, w))
    return shapes


def decoder_shapes(dec: DecoderConfig) -> List[Tuple[int, int, int]]:
    c, h, w = dec.reshape
    shapes = []
    for u in dec.upconvs:
        if u.kernel % 2 == 0:
            raise ConfigError(f"upconvolution kernels must be odd to keep extents, got {u.kernel}")
        c, h, w = u.filters, h * u.scale, w * u.scale
        shapes.append((c, h, w))
    return shapes


def validate_config(cfg: NetworkConfig) -> None:
    encoder_shapes(cfg.encoder)
    if cfg.encoder.fc1_size < 1 or cfg.encoder.fc2_size < 1:
        raise ConfigError("fully connected sizes must be positive")
    if cfg.decoder is not None:
        shapes = decoder_shapes(cfg.decoder)
        size = cfg.encoder.input_size
        if not shapes or shapes[-1] != (1, size, size):
            raise ConfigError(f"decoder output {shapes[-1] if shapes else None} does not match input (1, {size}, {size})")


def _init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Network:
    """Parameters plus the forward passes of encoder, heads and decoder."""

    def __init__(self, config: NetworkConfig, tasks: Sequence[str], n_classes: int = 0, map_dim: int = 0,
                 rng=None):
        tasks = tuple(sorted(set(tasks), key=TASKS.index)) if tasks else ()
        if not tasks:
            raise ConfigError("at least one task is required")
        unknown = set(tasks) - set(TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")
        validate_config(config)
        enc = config.encoder
        if "map" in tasks and not 1 <= map_dim <= enc.fc2_size:
            raise ConfigError(f"map_dim {map_dim} must lie in [1, fc2_size={enc.fc2_size}]")
        if "classify" in tasks and n_classes < 2:
            raise ConfigError("classification needs at least 2 classes")
        if "reconstruct" in tasks and config.decoder is None:
            raise ConfigError(f"configuration {config.name} has no decoder")
        self.config = config
        self.tasks = tasks
        self.n_classes = n_classes
        self.map_dim = map_dim
        self.params: Dict[str, Tensor] = {}
        self.decay: Dict[str, float] = {}
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

        def add(name, shape, fan_in, wd):
            self.params[name + ".weight"] = parameter(_init(rng, shape, fan_in), name + ".weight")
            self.params[name + ".bias"] = parameter(np.zeros(shape[0] if len(shape) == 4 else shape[1]), name + ".bias")
            self.decay[name + ".weight"] = wd
            self.decay[name + ".bias"] = 0.0

        c = 1
        shapes = encoder_shapes(enc)
        for i, layer in enumerate(enc.layers):
            if layer.type == "conv":
                add(f"enc.conv{i}", (layer.filters, c, layer.kernel, layer.kernel), c * layer.kernel ** 2,
                    enc.weight_decay)
            c = shapes[i][0]
        flat = int(np.prod(shapes[-1]))
        add("enc.fc1", (flat, enc.fc1_size), flat, enc.weight_decay)
        add("enc.fc2", (enc.fc1_size, enc.fc2_size), enc.fc1_size, enc.weight_decay)
        if "classify" in tasks:
            add("cls", (enc.fc2_size, n_classes), enc.fc2_size, enc.weight_decay)
        if "reconstruct" in tasks:
            dec = config.decoder
            prev = enc.fc2_size
            sizes = list(dec.fc_sizes) + [int(np.prod(dec.reshape))]
            for j, size in enumerate(sizes):
                add(f"dec.fc{j}", (prev, size), prev, dec.weight_decay)
                prev = size
            c = dec.reshape[0]
            for j, u in enumerate(dec.upconvs):
                add(f"dec.upconv{j}", (u.filters, c, u.kernel, u.kernel), c * u.kernel ** 2, dec.weight_decay)
                c = u.filters

    # -- forward passes ---------------------------------------------------
    def _conv(self, name, x, stride, padding):
        spec = ConvSpec(self.params[name + ".weight"], stride=stride, padding=padding,
                        bias=self.params[name + ".bias"])
        return conv2d(x, spec)

    def _dense(self, name, x, activation):
        return dense(x, self.params[name + ".weight"], self.params[name + ".bias"], activation)

    def encode(self, images, training: bool = False, rng=None) -> Tensor:
        """``fc2`` activations for a batch of images ``(n, h, w)`` or one image ``(h, w)``."""
        enc = self.config.encoder
        x = as_tensor(images)
        single = x.ndim == 2
        if single:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1:] != (enc.input_size, enc.input_size):
            raise ShapeError(f"encoder expects images of shape ({enc.input_size}, {enc.input_size}), got {x.shape}")
        x = x.reshape(x.shape[0], 1, enc.input_size, enc.input_size)
        for i, layer in enumerate(enc.layers):
            if layer.type == "conv":
                x = self._conv(f"enc.conv{i}", x, layer.stride, layer.padding).relu()
            else:
                x, _ = max_pool(x, layer.width, layer.stride)
        x = self._dense("enc.fc1", x.flatten(), "relu")
        if enc.fc1_dropout:
            x = dropout(x, enc.dropout_rate, training, rng)
        code = self._dense("enc.fc2", x, "linear")
        return code.reshape(-1) if single else code

    def classify(self, code: Tensor) -> Tensor:
        return self._dense("cls", code, "linear")

    def map_coords(self, code: Tensor) -> Tensor:
        """The leading ``map_dim`` units of ``fc2``."""
        if code.ndim == 1:
            return code[:self.map_dim]
        return code[:, :self.map_dim]

    def decode(self, code, training: bool = False, rng=None) -> Tensor:
        """Reconstruction logits of shape ``(n, h, w)``; apply a sigmoid for pixels."""
        dec = self.config.decoder
        if dec is None or "reconstruct" not in self.tasks:
            raise ConfigError("network was built without a decoder")
        x = as_tensor(code)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if x.shape[1] != self.config.encoder.fc2_size:
            raise ShapeError(f"code has {x.shape[1]} units, decoder expects {self.config.encoder.fc2_size}")
        for j in range(len(dec.fc_sizes) + 1):
            x = self._dense(f"dec.fc{j}", x, "relu")
            if dec.dropout:
                x = dropout(x, dec.dropout_rate, training, rng)
        x = x.reshape(x.shape[0], *dec.reshape)
        last = len(dec.upconvs) - 1
        for j, u in enumerate(dec.upconvs):
            spec = ConvSpec(self.params[f"dec.upconv{j}.weight"], stride=1, padding=u.kernel // 2,
                            bias=self.params[f"dec.upconv{j}.bias"])
            x = upconv(x, spec, u.scale)
            if j != last:
                x = x.relu()
        size = self.config.encoder.input_size
        x = x.reshape(x.shape[0], size, size)
        return x.reshape(size, size) if single else x

    def forward(self, images, training: bool = False, rng=None) -> Dict[str, Tensor]:
        code = self.encode(images, training, rng)
        out = {"code": code}
        if "classify" in self.tasks:
            out["logits"] = self.classify(code)
        if "map" in self.tasks:
            out["mapping"] = self.map_coords(code)
        if "reconstruct" in self.tasks:
            out["reconstruction"] = self.decode(code, training, rng)
        return out

    # -- parameters -------------------------------------------------------
    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def weight_decays(self) -> List[float]:
        return [self.decay[name] for name in self.params]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in state:
                raise ConfigError(f"state is missing parameter {name}")
            if state[name].shape != p.data.shape:
                raise ShapeError(f"parameter {name}: expected {p.data.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict(),
                        meta={"config": self.config.name, "tasks": list(self.tasks),
                              "n_classes": self.n_classes, "map_dim": self.map_dim})

    def load(self, path) -> None:
        state, _ = load_checkpoint(path)
        self.load_state_dict(state)


def build_network(cfg, tasks: Sequence[str], n_classes: int = 0, map_dim: int = 0, rng=None,
                  architecture="desk") -> Network:
    """Build a network from a :class:`NetworkConfig` or a named configuration."""
    if isinstance(cfg, (str, NamedConfig)):
        cfg = network_config(cfg, architecture)
    return Network(cfg, tasks, n_classes=n_classes, map_dim=map_dim, rng=rng)
