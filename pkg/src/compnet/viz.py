"""Feature visualization: mean reconstruction, distribution maps, and a
graph-cut boundary between the positive and negative reconstructions.

Positions returned by mean_reconstruct are relative to one output unit of
the chosen feature placed at coordinate (0, 0); `shifted` moves them into
whatever pixel frame the caller renders in.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .network import CompConvLayer, MaxPoolLayer, Network


@dataclass(frozen=True)
class ReconGaussian:
    pos: tuple  # (y, x) in input-pixel coordinates
    var: float  # accumulated sigma^2 along the expansion path
    weight: float  # product of |w| along the path
    sign: int  # sign of the first-layer component


@dataclass
class DistributionMap:
    pos_map: np.ndarray
    neg_map: np.ndarray


def _conv_chain(net: Network):
    """[(conv layer, pools separating it from the previous conv)] bottom-up."""
    chain = []
    pending_pools = []
    for layer in net.stack:
        if isinstance(layer, CompConvLayer):
            chain.append((layer, pending_pools))
            pending_pools = []
        elif isinstance(layer, MaxPoolLayer):
            pending_pools.append(layer)
    return chain


def _to_previous_frame(pos, pools):
    """Map a position in a conv's input frame back through its pools."""
    y, x = pos
    for p in reversed(pools):
        y = p.stride * y + (p.window - 1) / 2.0
        x = p.stride * x + (p.window - 1) / 2.0
    return y, x


def mean_reconstruct(net: Network, layer: int, feature: int):
    """Expand feature `feature` of the `layer`-th compositional conv (1-based)
    down to input pixels.

    Deeper layers contribute only positive-weight components; the first
    layer contributes both signs and decides each path's sign.
    """
    chain = _conv_chain(net)
    if not 1 <= layer <= len(chain):
        raise IndexError(f"layer must be in [1, {len(chain)}], got {layer}")
    bank0 = chain[layer - 1][0].bank
    if not 0 <= feature < bank0.f:
        raise IndexError(f"feature must be in [0, {bank0.f}), got {feature}")

    out = []

    def expand(ci, f, pos, var, weight):
        conv, pools = chain[ci]
        bank = conv.bank
        first = ci == 0
        kc_y = (bank.geom.kh - 1) / 2.0
        kc_x = (bank.geom.kw - 1) / 2.0
        for s in range(bank.s):
            for g in range(int(bank.counts[f, s])):
                w = bank.w[f, s, g]
                if not first and w <= 0:
                    continue
                p = (pos[0] + bank.muy[f, s, g] - kc_y,
                     pos[1] + bank.mux[f, s, g] - kc_x)
                v = var + bank.sigma[f, s, g] ** 2
                wt = weight * abs(w)
                if first:
                    out.append(ReconGaussian(p, v, wt, 1 if w > 0 else -1))
                else:
                    expand(ci - 1, s, _to_previous_frame(p, pools), v, wt)

    expand(layer - 1, feature, (0.0, 0.0), 0.0, 1.0)
    return out


def receptive_extent(net: Network, layer: int):
    """Input-pixel extent (h, w) of one output unit of the given conv layer."""
    chain = _conv_chain(net)
    if not 1 <= layer <= len(chain):
        raise IndexError(f"layer must be in [1, {len(chain)}], got {layer}")
    rh = rw = 1
    for conv, pools in reversed(chain[:layer]):
        for p in reversed(pools):
            rh = (rh - 1) * p.stride + p.window
            rw = (rw - 1) * p.stride + p.window
        rh += conv.bank.geom.kh - 1
        rw += conv.bank.geom.kw - 1
    return rh, rw


def shifted(recons, offset):
    oy, ox = offset
    return [
        dataclasses.replace(r, pos=(r.pos[0] + oy, r.pos[1] + ox)) for r in recons
    ]


def render_distribution_maps(recons, dims) -> DistributionMap:
    """Sum weight * exp(-||p - pos||^2 / (2 var)) per sign over an (h, w) grid."""
    h, w = dims
    if h < 1 or w < 1:
        raise ValueError("map dims must be positive")
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    pos = np.zeros((h, w))
    neg = np.zeros((h, w))
    for r in recons:
        blob = r.weight * np.exp(
            -((ys - r.pos[0]) ** 2 + (xs - r.pos[1]) ** 2) / (2.0 * r.var)
        )
        if r.sign > 0:
            pos += blob
        else:
            neg += blob
    return DistributionMap(pos, neg)


# ------------------------------------------------------------------- max-flow


def maxflow_grid(source_cap, sink_cap, cap_h, cap_v):
    """Max flow on a 4-connected pixel grid with terminal arcs.

    source_cap/sink_cap: (h, w); cap_h: (h, w-1) undirected horizontal edges;
    cap_v: (h-1, w) vertical. Returns (flow value, source-side mask).
    Augmenting paths are found breadth-first (shortest first).
    """
    h, w = source_cap.shape
    src = np.array(source_cap, dtype=float)
    snk = np.array(sink_cap, dtype=float)
    right = np.array(cap_h, dtype=float)  # arc (y,x) -> (y,x+1)
    left = np.array(cap_h, dtype=float)  # arc (y,x+1) -> (y,x)
    down = np.array(cap_v, dtype=float)  # arc (y,x) -> (y+1,x)
    up = np.array(cap_v, dtype=float)  # arc (y+1,x) -> (y,x)
    for name, arr in (("source", src), ("sink", snk), ("pair", right), ("pair", down)):
        if arr.size and arr.min() < 0:
            raise ValueError(f"negative {name} capacity")

    FROM_SRC, FROM_LEFT, FROM_RIGHT, FROM_UP, FROM_DOWN = range(5)
    flow = 0.0
    while True:
        parent = np.full((h, w), -1, dtype=np.int8)
        frontier = src > 0
        parent[frontier] = FROM_SRC
        visited = frontier.copy()
        while frontier.any() and not (visited & (snk > 0)).any():
            new = np.zeros_like(frontier)
            step = frontier[:, :-1] & (right > 0) & ~visited[:, 1:]
            parent[:, 1:][step] = FROM_LEFT
            new[:, 1:] |= step
            step = frontier[:, 1:] & (left > 0) & ~visited[:, :-1]
            parent[:, :-1][step & ~new[:, :-1]] = FROM_RIGHT
            new[:, :-1] |= step
            step = frontier[:-1, :] & (down > 0) & ~visited[1:, :]
            parent[1:, :][step & ~new[1:, :]] = FROM_UP
            new[1:, :] |= step
            step = frontier[1:, :] & (up > 0) & ~visited[:-1, :]
            parent[:-1, :][step & ~new[:-1, :]] = FROM_DOWN
            new[:-1, :] |= step
            frontier = new & ~visited
            visited |= frontier
        reach_sink = visited & (snk > 0)
        if not reach_sink.any():
            return flow, visited
        # deterministic pick: first reachable sink pixel in row-major order
        flat = int(np.argmax(reach_sink.ravel()))
        y, x = divmod(flat, w)

        # walk parents back to the source, collecting the path
        path = []  # (arc kind, y, x) of forward arcs pixel-to-pixel
        py, px = y, x
        bottleneck = snk[py, px]
        while parent[py, px] != FROM_SRC:
            d = parent[py, px]
            if d == FROM_LEFT:
                bottleneck = min(bottleneck, right[py, px - 1])
                path.append(("r", py, px - 1))
                px -= 1
            elif d == FROM_RIGHT:
                bottleneck = min(bottleneck, left[py, px])
                path.append(("l", py, px))
                px += 1
            elif d == FROM_UP:
                bottleneck = min(bottleneck, down[py - 1, px])
                path.append(("d", py - 1, px))
                py -= 1
            else:
                bottleneck = min(bottleneck, up[py, px])
                path.append(("u", py, px))
                py += 1
        bottleneck = min(bottleneck, src[py, px])

        src[py, px] -= bottleneck
        snk[y, x] -= bottleneck
        for kind, ay, ax in path:
            if kind == "r":
                right[ay, ax] -= bottleneck
                left[ay, ax] += bottleneck
            elif kind == "l":
                left[ay, ax] -= bottleneck
                right[ay, ax] += bottleneck
            elif kind == "d":
                down[ay, ax] -= bottleneck
                up[ay, ax] += bottleneck
            else:
                up[ay, ax] -= bottleneck
                down[ay, ax] += bottleneck
        flow += bottleneck


def graphcut_boundary(maps: DistributionMap, upscale=4):
    """Boundary image of the min cut between positive and negative regions.

    Terminal capacities: sink = pos_map, source = neg_map; neighbor capacity
    (D(p) - D(q))^2 with D = pos - neg. Each cut edge adds |D(p) - D(q)| to
    both endpoint pixels; the result is nearest-neighbor upscaled.
    """
    pos, neg = maps.pos_map, maps.neg_map
    if pos.shape != neg.shape:
        raise ValueError("pos/neg maps must be congruent")
    d = pos - neg
    cap_h = (d[:, :-1] - d[:, 1:]) ** 2
    cap_v = (d[:-1, :] - d[1:, :]) ** 2
    _, source_side = maxflow_grid(neg, pos, cap_h, cap_v)

    boundary = np.zeros_like(d)
    cut_h = source_side[:, :-1] != source_side[:, 1:]
    dh = np.abs(d[:, :-1] - d[:, 1:])
    boundary[:, :-1] += np.where(cut_h, dh, 0.0)
    boundary[:, 1:] += np.where(cut_h, dh, 0.0)
    cut_v = source_side[:-1, :] != source_side[1:, :]
    dv = np.abs(d[:-1, :] - d[1:, :])
    boundary[:-1, :] += np.where(cut_v, dv, 0.0)
    boundary[1:, :] += np.where(cut_v, dv, 0.0)
    return np.repeat(np.repeat(boundary, upscale, axis=0), upscale, axis=1)


# ----------------------------------------------------------------- image files


def emit_image(grid, path):
    """Write a P5 graymap after min-max scaling; constant grids map to 128."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("emit_image wants a 2-d grid")
    if not np.isfinite(grid).all():
        raise ValueError("grid has non-finite values")
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        scaled = np.round((grid - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full_like(grid, 128.0)
    payload = scaled.astype(np.uint8)
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


write_pgm = emit_image


def read_pgm(path):
    """Read back a binary P5 file written by emit_image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path} is not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit graymaps supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos)
    return pixels.reshape(h, w).copy()


def feature_images(net: Network, layer: int, feature: int):
    """(blobs grid, boundary grid, distribution maps) for one feature,
    rendered over its receptive field with the reconstruction centered."""
    recons = mean_reconstruct(net, layer, feature)
    rh, rw = receptive_extent(net, layer)
    maps = render_distribution_maps(
        shifted(recons, ((rh - 1) / 2.0, (rw - 1) / 2.0)), (rh, rw)
    )
    blobs = maps.pos_map - maps.neg_map
    return blobs, graphcut_boundary(maps), maps
