"""Architecture strings, layer stacks, and the temporal forward pass.

Arch specs are dash-separated tokens: ``128C3`` (conv, 128 outputs,
kernel 3, stride 1), ``MP2``/``AP2`` (max/avg pool), ``LIF`` (spiking
neuron), ``0.5DP`` (spiking dropout), ``512FC`` (fully connected),
``Voting`` (group-average readout), and ``TCJA`` (attention insertion
point). Every layer maps a full (T, ...) stack to a full (T, ...) stack;
spiking layers run their recurrence internally, so attention blocks that
need all time steps at once see them materialized by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import attention
from .attention import TcjaConfig, TcjaParams
from .neuron import LifConfig, lif_sequence
from .tensor import ShapeError, Tensor, conv2d, fully_connected, pool2d


class ArchParseError(ValueError):
    """Raised for malformed architecture spec strings."""


# -- layer descriptors ---------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int


@dataclass(frozen=True)
class LifSpec:
    pass


@dataclass(frozen=True)
class PoolSpec:
    kind: str  # "max" | "avg"
    k: int


@dataclass(frozen=True)
class DropoutSpec:
    p: float


@dataclass(frozen=True)
class FcSpec:
    out_features: int


@dataclass(frozen=True)
class VotingSpec:
    pass


@dataclass(frozen=True)
class TcjaSpec:
    """Insertion marker; kernel sizes and fusion resolve from run config."""

    k_t: int | None = None
    k_c: int | None = None
    fusion: str | None = None


LayerSpec = ConvSpec | LifSpec | PoolSpec | DropoutSpec | FcSpec | VotingSpec | TcjaSpec


@dataclass(frozen=True)
class ArchSpec:
    layers: tuple[LayerSpec, ...]
    input_dims: tuple[int, int, int] | None = None  # (C, H, W)
    time_steps: int | None = None


_CONV_RE = re.compile(r"^(\d+)C(\d+)$")
_POOL_RE = re.compile(r"^(MP|AP)(\d+)$")
_DP_RE = re.compile(r"^(\d+(?:\.\d+)?|\.\d+)DP$")
_FC_RE = re.compile(r"^(\d+)FC$")


def parse_arch(
    spec: str,
    input_dims: tuple[int, int, int] | None = None,
    time_steps: int | None = None,
) -> ArchSpec:
    """Parse a dash-separated token string into layer descriptors."""
    if not spec or not spec.strip():
        raise ArchParseError("empty spec")
    layers: list[LayerSpec] = []
    for pos, token in enumerate(spec.strip().split("-")):
        if m := _CONV_RE.match(token):
            layers.append(ConvSpec(out_channels=int(m.group(1)), kernel=int(m.group(2))))
        elif token == "LIF":
            layers.append(LifSpec())
        elif m := _POOL_RE.match(token):
            kind = "max" if m.group(1) == "MP" else "avg"
            layers.append(PoolSpec(kind=kind, k=int(m.group(2))))
        elif m := _DP_RE.match(token):
            p = float(m.group(1))
            if not 0.0 <= p < 1.0:
                raise ArchParseError(f"dropout ratio {p} out of [0, 1) at position {pos}")
            layers.append(DropoutSpec(p=p))
        elif m := _FC_RE.match(token):
            layers.append(FcSpec(out_features=int(m.group(1))))
        elif token == "Voting":
            layers.append(VotingSpec())
        elif token == "TCJA":
            layers.append(TcjaSpec())
        else:
            raise ArchParseError(f"unknown token {token!r} at position {pos}")
    _validate_layers(layers)
    return ArchSpec(layers=tuple(layers), input_dims=input_dims, time_steps=time_steps)


def _validate_layers(layers: list[LayerSpec]) -> None:
    for i, layer in enumerate(layers):
        if isinstance(layer, LifSpec):
            if i == 0 or not isinstance(layers[i - 1], (ConvSpec, FcSpec)):
                raise ArchParseError(
                    f"LIF at position {i} must follow a conv or FC layer"
                )


def render(spec: ArchSpec) -> str:
    """Inverse of parse_arch on the token grammar."""
    tokens = []
    for layer in spec.layers:
        if isinstance(layer, ConvSpec):
            tokens.append(f"{layer.out_channels}C{layer.kernel}")
        elif isinstance(layer, LifSpec):
            tokens.append("LIF")
        elif isinstance(layer, PoolSpec):
            tokens.append(("MP" if layer.kind == "max" else "AP") + str(layer.k))
        elif isinstance(layer, DropoutSpec):
            tokens.append(f"{layer.p:g}DP")
        elif isinstance(layer, FcSpec):
            tokens.append(f"{layer.out_features}FC")
        elif isinstance(layer, VotingSpec):
            tokens.append("Voting")
        elif isinstance(layer, TcjaSpec):
            tokens.append("TCJA")
        else:  # pragma: no cover
            raise TypeError(f"unknown layer spec {layer!r}")
    return "-".join(tokens)


# Reference architectures for common event/static benchmarks, plus a small
# default sized for laptop-scale runs.
PRESETS: dict[str, str] = {
    "dvs128": (
        "128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF"
        "-MP2-0.5DP-512FC-LIF-0.5DP-100FC-LIF-Voting"
    ),
    "cifar10dvs": (
        "64C3-LIF-128C3-LIF-AP2-256C3-LIF-256C3-LIF-AP2-512C3-LIF-512C3-LIF"
        "-AP2-512C3-LIF-512C3-LIF-AP2-10FC-LIF"
    ),
    "ncaltech101": (
        "64C3-LIF-MP2-128C3-LIF-MP2-256C3-LIF-MP2-256C3-LIF-MP2-512C3-LIF"
        "-0.8DP-1024FC-LIF-0.5DP-101FC-LIF"
    ),
    "fashion": "128C3-LIF-AP2-128C3-LIF-AP2-0.5DP-512FC-LIF-0.5DP-10FC-LIF",
    "desk": "16C3-LIF-MP2-TCJA-16C3-LIF-MP2-64FC-LIF-Voting",
}


# -- built layers ----------------------------------------------------------------


class ConvLayer:
    """Conv2D over the time-batched stack, stride 1, same-style padding."""

    def __init__(self, kernel: Tensor, padding: int):
        self.kernel = kernel
        self.padding = padding

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        return conv2d(x, self.kernel, stride=1, padding=self.padding)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("kernel", self.kernel)]


class LifLayer:
    def __init__(self, cfg: LifConfig, name: str):
        self.cfg = cfg
        self.name = name

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        spikes = lif_sequence(x, self.cfg)
        if ctx.stats is not None:
            ctx.stats.setdefault("firing_rates", {})[self.name] = float(spikes.data.mean())
        return spikes

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []


class PoolLayer:
    def __init__(self, kind: str, k: int):
        self.kind = kind
        self.k = k

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        return pool2d(x, self.kind, self.k)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []


class DropoutLayer:
    """Spiking dropout: one Bernoulli mask per forward pass shared over all T."""

    def __init__(self, p: float):
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        if not ctx.training or self.p == 0.0:
            return x
        if ctx.rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = 1.0 - self.p
        mask = (ctx.rng.random(x.shape[1:]) < keep).astype(x.dtype) / keep
        return x * Tensor(mask[None])

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []


class FcLayer:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        if x.ndim > 2:
            x = x.reshape(x.shape[0], -1)
        return fully_connected(x, self.weight, self.bias)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)]


class VotingLayer:
    def __init__(self, num_classes: int):
        self.num_classes = num_classes

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        return voting_layer(x, self.num_classes)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return []


class TcjaLayer:
    def __init__(self, params: TcjaParams):
        self.params = params

    def apply(self, x: Tensor, ctx: "ForwardContext") -> Tensor:
        if ctx.stats is not None:
            out, maps = attention.tcja_forward(x, self.params, return_maps=True)
            ctx.stats.setdefault("attention_maps", []).append(maps)
            return out
        return attention.tcja_forward(x, self.params)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("w", self.params.w), ("e", self.params.e)]


def voting_layer(spikes: Tensor, num_classes: int) -> Tensor:
    """Average spike groups into class scores: (T, L) -> (T, num_classes)."""
    if spikes.ndim != 2:
        raise ShapeError(f"voting expects (T, L), got {spikes.shape}")
    t_steps, width = spikes.shape
    if width % num_classes:
        raise ShapeError(
            f"neuron count {width} not divisible by {num_classes} classes"
        )
    window = width // num_classes
    return spikes.reshape(t_steps, num_classes, window).mean(axis=2)


def spiking_dropout(
    x: Tensor, p: float, mask: np.ndarray | None = None, training: bool = True
) -> Tensor:
    """Standalone dropout op; `mask` must already be scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if mask is None:
        raise ValueError("training-mode dropout needs a mask")
    return x * Tensor(mask.astype(x.dtype))


@dataclass
class ForwardContext:
    training: bool = False
    rng: np.random.Generator | None = None
    stats: dict | None = None


@dataclass
class Network:
    """A built layer stack with owned parameters."""

    arch: ArchSpec
    layers: list = field(default_factory=list)
    num_classes: int = 0
    lif_cfg: LifConfig = field(default_factory=LifConfig)
    tcja_cfg: TcjaConfig = field(default_factory=TcjaConfig)
    dtype: np.dtype = np.float64

    def parameters(self) -> list[tuple[str, Tensor]]:
        named = []
        for i, layer in enumerate(self.layers):
            for sub, tensor in layer.parameters():
                named.append((f"layer{i}.{sub}", tensor))
        return named

    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def zero_grads(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    def forward(
        self,
        x: Tensor,
        training: bool = False,
        rng: np.random.Generator | None = None,
        stats: dict | None = None,
    ) -> Tensor:
        expected = (self.arch.time_steps, *self.arch.input_dims)
        if x.shape != expected:
            raise ShapeError(f"input shape {x.shape} does not match spec {expected}")
        ctx = ForwardContext(training=training, rng=rng, stats=stats)
        h = x
        for i, layer in enumerate(self.layers):
            try:
                h = layer.apply(h, ctx)
            except ShapeError as err:
                raise ShapeError(f"layer {i} ({type(layer).__name__}): {err}") from err
        return h


def analytic_param_count(
    arch: ArchSpec, num_classes: int, tcja_cfg: TcjaConfig
) -> int:
    """Closed-form parameter total from layer dimensions alone."""
    total = 0
    for kind, info in _walk_dims(arch, num_classes):
        if kind == "conv":
            c_in, c_out, k = info
            total += c_out * c_in * k * k
        elif kind == "fc":
            f_in, f_out = info
            total += f_in * f_out + f_out
        elif kind == "tcja":
            c, t = info
            k_t = min(tcja_cfg.k_t, t - 1)
            k_c = min(tcja_cfg.k_c, c - 1)
            tla_n, cla_n, _ = attention.param_count(c, t, k_t, k_c)
            total += tla_n + cla_n
    return total


def _walk_dims(arch: ArchSpec, num_classes: int):
    """Yield (kind, dims) per parameterized layer while tracking shapes."""
    if arch.input_dims is None or arch.time_steps is None:
        raise ValueError("arch spec needs input_dims and time_steps to build")
    c, h, w = arch.input_dims
    t = arch.time_steps
    flat: int | None = None
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, ConvSpec):
            if flat is not None:
                raise ArchParseError(f"conv at position {i} after flatten")
            pad = layer.kernel // 2
            h = h + 2 * pad - layer.kernel + 1
            w = w + 2 * pad - layer.kernel + 1
            yield "conv", (c, layer.out_channels, layer.kernel)
            c = layer.out_channels
        elif isinstance(layer, PoolSpec):
            if h % layer.k or w % layer.k:
                raise ArchParseError(
                    f"pool at position {i}: {h}x{w} not divisible by {layer.k}"
                )
            h //= layer.k
            w //= layer.k
        elif isinstance(layer, FcSpec):
            f_in = flat if flat is not None else c * h * w
            yield "fc", (f_in, layer.out_features)
            flat = layer.out_features
        elif isinstance(layer, TcjaSpec):
            if flat is not None:
                raise ArchParseError(f"TCJA at position {i} after flatten")
            yield "tcja", (c, t)
        elif isinstance(layer, VotingSpec):
            f_in = flat if flat is not None else c * h * w
            if f_in % num_classes:
                raise ArchParseError(
                    f"voting at position {i}: width {f_in} not divisible by"
                    f" {num_classes} classes"
                )
            flat = num_classes
        # LIF and dropout leave dimensions unchanged.


def build_network(
    arch: ArchSpec,
    num_classes: int,
    lif_cfg: LifConfig | None = None,
    tcja_cfg: TcjaConfig | None = None,
    rng: np.random.Generator | None = None,
    dtype=np.float32,
) -> Network:
    """Instantiate layers with uniform +-1/sqrt(fan_in) weights."""
    lif_cfg = lif_cfg or LifConfig()
    tcja_cfg = tcja_cfg or TcjaConfig()
    rng = rng or np.random.default_rng(0)
    dtype = np.dtype(dtype)

    dims = list(_walk_dims(arch, num_classes))  # validates shapes up front
    net = Network(
        arch=arch,
        num_classes=num_classes,
        lif_cfg=lif_cfg,
        tcja_cfg=tcja_cfg,
        dtype=dtype,
    )
    dim_iter = iter(dims)
    lif_index = 0
    for layer in arch.layers:
        if isinstance(layer, ConvSpec):
            c_in, c_out, k = next(dim_iter)[1]
            bound = 1.0 / np.sqrt(c_in * k * k)
            kernel = rng.uniform(-bound, bound, size=(c_out, c_in, k, k))
            net.layers.append(
                ConvLayer(Tensor(kernel.astype(dtype), requires_grad=True), padding=k // 2)
            )
        elif isinstance(layer, LifSpec):
            net.layers.append(LifLayer(lif_cfg, name=f"lif{lif_index}"))
            lif_index += 1
        elif isinstance(layer, PoolSpec):
            net.layers.append(PoolLayer(layer.kind, layer.k))
        elif isinstance(layer, DropoutSpec):
            net.layers.append(DropoutLayer(layer.p))
        elif isinstance(layer, FcSpec):
            f_in, f_out = next(dim_iter)[1]
            bound = 1.0 / np.sqrt(f_in)
            weight = rng.uniform(-bound, bound, size=(f_in, f_out))
            bias = np.zeros(f_out)
            net.layers.append(
                FcLayer(
                    Tensor(weight.astype(dtype), requires_grad=True),
                    Tensor(bias.astype(dtype), requires_grad=True),
                )
            )
        elif isinstance(layer, VotingSpec):
            net.layers.append(VotingLayer(num_classes))
        elif isinstance(layer, TcjaSpec):
            c, t = next(dim_iter)[1]
            block_cfg = TcjaConfig(
                k_t=layer.k_t if layer.k_t is not None else tcja_cfg.k_t,
                k_c=layer.k_c if layer.k_c is not None else tcja_cfg.k_c,
                fusion=layer.fusion if layer.fusion is not None else tcja_cfg.fusion,
            )
            params = attention.init_tcja_params(c, t, block_cfg, rng, dtype=dtype)
            net.layers.append(TcjaLayer(params))
    return net


def forward_temporal(
    net: Network,
    x: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
    stats: dict | None = None,
) -> Tensor:
    """Run the spatial stack over all T steps; spiking layers carry state."""
    return net.forward(x, training=training, rng=rng, stats=stats)
