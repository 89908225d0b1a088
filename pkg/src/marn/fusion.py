"""Common-width projection, specific/invariant decomposition, and attention
fusion of modality-specific features into the item representation."""

from __future__ import annotations

from . import autodiff as ad
from .config import RunConfig
from .params import ParamStore


class DecomposeFuse:
    """Per-modality common projections and S_m heads plus one shared invariant
    head; vector attention weights each dimension of each specific feature."""

    def __init__(self, cfg: RunConfig, store: ParamStore, raw_widths: dict,
                 with_decomposition: bool = True):
        self.cfg = cfg
        self.store = store
        self.with_decomposition = with_decomposition
        d = cfg.d
        for m, width in raw_widths.items():
            store.create(f"fuse/common/{m}/w", (width, d), init="xavier")
            store.create(f"fuse/common/{m}/b", (d,), init="zeros")
        if with_decomposition:
            for m in raw_widths:
                store.create(f"fuse/specific/{m}/w", (d, d), init="xavier")
                store.create(f"fuse/specific/{m}/b", (d,), init="zeros")
                store.create(f"fuse/atten/{m}/w", (d, d), init="xavier")
                store.create(f"fuse/atten/{m}/b", (d,), init="zeros")
            # One shared invariant projection across modalities.
            for k in range(cfg.invariant_depth):
                store.create(f"fuse/invariant/l{k}/w", (d, d), init="xavier")
                store.create(f"fuse/invariant/l{k}/b", (d,), init="zeros")

    def _affine(self, prefix: str, x: ad.Node) -> ad.Node:
        return ad.add(ad.matmul(x, self.store.leaf(prefix + "/w")),
                      self.store.leaf(prefix + "/b"))

    def project_common(self, modality: str, raw: ad.Node) -> ad.Node:
        """Linear map of the raw modality embedding to width d."""
        return self._affine(f"fuse/common/{modality}", raw)

    def specific(self, modality: str, e: ad.Node) -> ad.Node:
        return ad.tanh(self._affine(f"fuse/specific/{modality}", e))

    def invariant(self, e: ad.Node) -> ad.Node:
        out = e
        for k in range(self.cfg.invariant_depth):
            out = ad.tanh(self._affine(f"fuse/invariant/l{k}", out))
        return out

    def decompose(self, modality: str, e: ad.Node) -> tuple:
        """(specific, invariant) features; the invariant head is shared."""
        return self.specific(modality, e), self.invariant(e)

    def attention_weights(self, modality: str, s: ad.Node) -> ad.Node:
        """Per-dimension weights in (-1, 1) conditioned on the modality's own
        specific feature."""
        return ad.tanh(self._affine(f"fuse/atten/{modality}", s))

    @staticmethod
    def fuse_specific(weighted: list) -> ad.Node:
        """Sum over modalities of atten_m (element-wise) * s_m."""
        if not weighted:
            raise ValueError("fuse_specific: empty modality list")
        total = None
        for s, atten in weighted:
            term = ad.mul(atten, s)
            total = term if total is None else ad.add(total, term)
        return total

    @staticmethod
    def fuse_item(s: ad.Node, c: ad.Node) -> ad.Node:
        """Item representation: element-wise sum of specific and invariant."""
        return ad.add(s, c)
