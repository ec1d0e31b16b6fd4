"""Post-training simplification of component banks.

Both transforms are pure: they return a new bank built from the survivors.
Merging happens within each (feature, channel) group; the discard threshold
is taken over the whole layer.
"""

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import GaussianComponent
from .layers import CompFilterBank


@dataclass
class PruneReport:
    components_before: int
    merged: int
    discarded: int
    components_after: int
    loss_before: float = math.nan
    loss_after: float = math.nan

    def text(self):
        lines = [
            f"components before : {self.components_before}",
            f"merged away       : {self.merged}",
            f"discarded         : {self.discarded}",
            f"components after  : {self.components_after}",
        ]
        if not math.isnan(self.loss_before):
            rel = (self.loss_after - self.loss_before) / self.loss_before
            lines += [
                f"loss before       : {self.loss_before:.6f}",
                f"loss after        : {self.loss_after:.6f} ({rel:+.3%})",
            ]
        return "\n".join(lines)

    def csv_row(self):
        return (
            f"{self.components_before},{self.merged},{self.discarded},"
            f"{self.components_after},{self.loss_before:.17g},{self.loss_after:.17g}"
        )


def _merge_group(comps, tau):
    """Greedy closest-first merging inside one component group."""
    comps = list(comps)
    removed = 0
    while True:
        best = None
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                a, b = comps[i], comps[j]
                d = math.hypot(a.mu[0] - b.mu[0], a.mu[1] - b.mu[1])
                if d < tau * max(a.sigma, b.sigma) and (best is None or d < best[0]):
                    best = (d, i, j)
        if best is None:
            return comps, removed
        _, i, j = best
        a, b = comps[i], comps[j]
        wa, wb = abs(a.w), abs(b.w)
        del comps[j]
        if wa + wb == 0.0:
            del comps[i]
            removed += 2
            continue
        comps[i] = GaussianComponent(
            w=a.w + b.w,
            mu=(
                (wa * a.mu[0] + wb * b.mu[0]) / (wa + wb),
                (wa * a.mu[1] + wb * b.mu[1]) / (wa + wb),
            ),
            sigma=(wa * a.sigma + wb * b.sigma) / (wa + wb),
        )
        removed += 1


def merge_overlapping(bank: CompFilterBank, tau=0.5):
    """Merge components whose means sit within tau * max(sigma_i, sigma_j)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    groups = bank.to_components()
    removed = 0
    for row in groups:
        for si in range(len(row)):
            row[si], r = _merge_group(row[si], tau)
            removed += r
    return CompFilterBank.from_components(groups, bank.geom, bank.bias.copy()), removed


def discard_small(bank: CompFilterBank, fraction=0.02):
    """Drop components with |w| below fraction of the layer's max |w|.

    A group is never emptied: if every member falls below the threshold the
    largest-|w| one stays.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must be in [0, 1)")
    groups = bank.to_components()
    top = max(
        (abs(c.w) for row in groups for cell in row for c in cell), default=0.0
    )
    cut = fraction * top
    removed = 0
    for row in groups:
        for si in range(len(row)):
            keep = [c for c in row[si] if abs(c.w) >= cut]
            if not keep and row[si]:
                # never empty a group by discarding (merging may have already)
                keep = [max(row[si], key=lambda c: abs(c.w))]
            removed += len(row[si]) - len(keep)
            row[si] = keep
    return CompFilterBank.from_components(groups, bank.geom, bank.bias.copy()), removed


def prune_bank(bank: CompFilterBank, tau=0.5, fraction=0.02):
    """Merge, then discard; returns (new bank, PruneReport without losses)."""
    before = bank.live_component_count()
    merged_bank, merged = merge_overlapping(bank, tau)
    final_bank, discarded = discard_small(merged_bank, fraction)
    return final_bank, PruneReport(
        components_before=before,
        merged=merged,
        discarded=discarded,
        components_after=final_bank.live_component_count(),
    )
