"""Binary model files.

Layout (all little-endian, parameters as raw '<f8'/'<i8' C-order bytes):

    magic      4s   "CMPN"
    version    u32  (currently 1)
    seed       u64
    iterations u64
    in_shape   u32 ndim, then ndim x u32
    config     u32 byte length, then utf-8 text
    blocks     u32 count, then per block:
                 u32 name length + utf-8 name  ("layer<i>.<param>")
                 u32 dtype code (0 = '<f8', 1 = '<i8')
                 u32 ndim, ndim x u64 dims
                 raw data

Serialization is canonical, so the same trained network always produces the
same bytes; loading restores every parameter bit for bit.
"""

import struct

import numpy as np

from .config import NetworkConfig, parse_config
from .layers import CompFilterBank
from .network import CompConvLayer, DenseConvLayer, FullyConnectedLayer, Network
from .tensor import DenseFilterBank

MAGIC = b"CMPN"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class ModelFormatError(RuntimeError):
    pass


def _layer_blocks(net: Network):
    """Ordered (name, array) pairs covering every learnable array plus the
    live-component bookkeeping of compositional banks."""
    out = []
    for i, layer in net.param_layers():
        for pname, arr in layer.params().items():
            out.append((f"layer{i}.{pname}", arr))
        if isinstance(layer, CompConvLayer):
            out.append((f"layer{i}.counts", layer.bank.counts))
    return out


def save_model(path, net: Network, cfg: NetworkConfig, seed: int, iterations: int):
    blocks = _layer_blocks(net)
    config_bytes = cfg.text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQQ", VERSION, seed, iterations))
        fh.write(struct.pack("<I", len(net.in_shape)))
        fh.write(struct.pack(f"<{len(net.in_shape)}I", *net.in_shape))
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            nb = name.encode("utf-8")
            code = _CODES[np.dtype("<i8") if arr.dtype.kind == "i" else np.dtype("<f8")]
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<II", code, arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise ModelFormatError("model file truncated")
    return struct.unpack(fmt, buf)


def load_model(path):
    """Returns (net, cfg, seed, iterations) with parameters restored exactly."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ModelFormatError(f"{path} is not a model file (bad magic)")
        version, seed, iterations = _read(fh, "<IQQ")
        if version != VERSION:
            raise ModelFormatError(
                f"unsupported model file version {version} (reader handles {VERSION})"
            )
        (ndim,) = _read(fh, "<I")
        in_shape = _read(fh, f"<{ndim}I")
        (clen,) = _read(fh, "<I")
        cfg = parse_config(fh.read(clen).decode("utf-8"))
        (nblocks,) = _read(fh, "<I")
        blocks = {}
        for _ in range(nblocks):
            (nlen,) = _read(fh, "<I")
            name = fh.read(nlen).decode("utf-8")
            code, adim = _read(fh, "<II")
            if code not in _DTYPES:
                raise ModelFormatError(f"unknown dtype code {code} in block {name}")
            shape = _read(fh, f"<{adim}Q")
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape)) * dt.itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise ModelFormatError(f"model file truncated in block {name}")
            blocks[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    net = cfg.build(in_shape, seed=seed)
    _restore(net, blocks)
    return net, cfg, seed, iterations


def _restore(net: Network, blocks):
    for i, layer in net.param_layers():
        def get(pname):
            key = f"layer{i}.{pname}"
            if key not in blocks:
                raise ModelFormatError(f"model file missing block {key}")
            return blocks[key]

        if isinstance(layer, CompConvLayer):
            # pruning may have shrunk the component axis relative to a fresh
            # build, so replace the whole bank rather than copy in place
            layer.bank = CompFilterBank(
                geom=layer.bank.geom,
                w=get("w"),
                mux=get("mux"),
                muy=get("muy"),
                sigma=get("sigma"),
                bias=get("bias"),
                counts=get("counts"),
            )
        elif isinstance(layer, DenseConvLayer):
            layer.bank = DenseFilterBank(get("weights"), get("bias"))
        elif isinstance(layer, FullyConnectedLayer):
            layer.weights = get("weights")
            layer.bias = get("bias")
