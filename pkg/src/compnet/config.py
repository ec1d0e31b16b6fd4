"""Network configuration: a small one-layer-per-line text format.

Grammar (hash comments and blank lines allowed):

    compconv  features=<int> kernel=<W>x<H> components=<W>x<H>
    denseconv features=<int> kernel=<W>x<H>
    relu
    maxpool   window=<int> stride=<int>
    fc        units=<int>
    softmax

The final layer must be `softmax` (exactly one), preceded by an `fc`.
"""

from dataclasses import dataclass

import numpy as np

from .gaussian import KernelGeometry
from .layers import CompFilterBank
from .network import (
    CompConvLayer,
    DenseConvLayer,
    FullyConnectedLayer,
    MaxPoolLayer,
    Network,
    ReluLayer,
)
from .tensor import DenseFilterBank, ShapeError


class ConfigError(ValueError):
    """Config text problem, annotated with the offending line."""

    def __init__(self, lineno, line, message):
        super().__init__(f"line {lineno}: {message}  [{line.strip()}]")
        self.lineno = lineno


@dataclass
class LayerSpec:
    kind: str
    args: dict
    lineno: int
    line: str


@dataclass
class NetworkConfig:
    layers: list  # of LayerSpec
    text: str  # canonical config text, preserved for model files

    def build(self, in_shape, seed=0) -> Network:
        return build_network(self, in_shape, seed)


_INT_KEYS = {"features", "units", "window", "stride"}
_PAIR_KEYS = {"kernel", "components"}
_REQUIRED = {
    "compconv": {"features", "kernel", "components"},
    "denseconv": {"features", "kernel"},
    "relu": set(),
    "maxpool": {"window", "stride"},
    "fc": {"units"},
    "softmax": set(),
}


def _parse_pair(value, lineno, line, key):
    parts = value.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(lineno, line, f"{key} must look like 3x3, got {value!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(lineno, line, f"{key} must be two integers, got {value!r}")


def parse_config(text: str) -> NetworkConfig:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        kind, kvs = fields[0], fields[1:]
        if kind not in _REQUIRED:
            raise ConfigError(lineno, raw, f"unknown layer kind {kind!r}")
        args = {}
        for kv in kvs:
            if "=" not in kv:
                raise ConfigError(lineno, raw, f"expected key=value, got {kv!r}")
            key, value = kv.split("=", 1)
            if key in _INT_KEYS:
                try:
                    args[key] = int(value)
                except ValueError:
                    raise ConfigError(lineno, raw, f"{key} must be an integer, got {value!r}")
                if args[key] < 1:
                    raise ConfigError(lineno, raw, f"{key} must be positive")
            elif key in _PAIR_KEYS:
                args[key] = _parse_pair(value, lineno, raw, key)
            else:
                raise ConfigError(lineno, raw, f"unknown key {key!r} for {kind}")
        missing = _REQUIRED[kind] - set(args)
        if missing:
            raise ConfigError(lineno, raw, f"{kind} missing {sorted(missing)}")
        extra = set(args) - _REQUIRED[kind]
        if extra:
            raise ConfigError(lineno, raw, f"{kind} does not take {sorted(extra)}")
        specs.append(LayerSpec(kind, args, lineno, raw))

    if not specs:
        raise ConfigError(0, "", "empty config")
    if specs[-1].kind != "softmax":
        raise ConfigError(specs[-1].lineno, specs[-1].line, "config must end with softmax")
    for sp in specs[:-1]:
        if sp.kind == "softmax":
            raise ConfigError(sp.lineno, sp.line, "softmax must appear exactly once, last")
    if len(specs) < 2 or specs[-2].kind != "fc":
        raise ConfigError(specs[-1].lineno, specs[-1].line, "softmax must follow an fc layer")
    return NetworkConfig(specs, text)


def build_network(cfg: NetworkConfig, in_shape, seed=0) -> Network:
    """Instantiate layers with seeded initialization, checking shapes as we go."""
    rng = np.random.default_rng(seed)
    stack = []
    shape = tuple(in_shape)
    for sp in cfg.layers:
        try:
            if sp.kind == "compconv":
                kw, kh = sp.args["kernel"]
                gw, gh = sp.args["components"]
                bank = CompFilterBank.init_grid(
                    sp.args["features"], shape[0], (gh, gw), KernelGeometry(kw, kh), rng
                )
                layer = CompConvLayer(bank)
            elif sp.kind == "denseconv":
                kw, kh = sp.args["kernel"]
                f = sp.args["features"]
                layer = DenseConvLayer(DenseFilterBank(
                    rng.normal(0.0, 0.1, size=(f, shape[0], kh, kw)), np.zeros(f)
                ))
            elif sp.kind == "relu":
                layer = ReluLayer()
            elif sp.kind == "maxpool":
                layer = MaxPoolLayer(sp.args["window"], sp.args["stride"])
            elif sp.kind == "fc":
                flat = int(np.prod(shape))
                layer = FullyConnectedLayer(
                    rng.normal(0.0, 0.1, size=(sp.args["units"], flat)),
                    np.zeros(sp.args["units"]),
                )
            else:  # softmax: handled by the network's loss, adds no layer
                continue
            shape = layer.out_shape(shape)
        except ShapeError as e:
            raise ConfigError(sp.lineno, sp.line, str(e))
        stack.append(layer)
    return Network(stack, in_shape)


PRESETS = {
    # the two CIFAR-10 configurations (compositional and dense baseline)
    "cifar10-comp": """\
compconv features=32 kernel=7x7 components=2x2
relu
maxpool window=3 stride=1
compconv features=32 kernel=9x9 components=3x3
relu
maxpool window=3 stride=2
fc units=10
softmax
""",
    "cifar10-dense": """\
denseconv features=32 kernel=5x5
relu
maxpool window=3 stride=1
denseconv features=32 kernel=5x5
relu
maxpool window=3 stride=2
fc units=10
softmax
""",
    # small single-channel net for the synthetic shape set
    "shapes-small": """\
compconv features=8 kernel=7x7 components=2x2
relu
maxpool window=3 stride=2
compconv features=8 kernel=7x7 components=2x2
relu
maxpool window=3 stride=2
fc units=4
softmax
""",
}


def load_config(source: str) -> NetworkConfig:
    """Parse a preset name or a config file path."""
    if source in PRESETS:
        return parse_config(PRESETS[source])
    with open(source) as fh:
        return parse_config(fh.read())
