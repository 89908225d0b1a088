"""Modality embedding layer: IDs lookup, title n-gram CNN, statistic
discretization, image pass-through, and behavior-property embedding."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .params import ParamStore

CONV_WINDOWS = (2, 3, 4)

# Two discretization granularities per numeric feature, each embedded at
# width 8 and concatenated.
COARSE_BUCKETS = 10
FINE_BUCKETS = 100
BUCKET_DIM = 8


class EmbeddingError(ValueError):
    pass


def discretize_statistic(value):
    """Map values in [0,1) to (coarse 0-9, fine 0-99) buckets; >=1 clamps."""
    arr = np.asarray(value, dtype=np.float64)
    if np.any(arr < 0):
        raise EmbeddingError("statistic value must be nonnegative")
    coarse = np.minimum(np.floor(arr * COARSE_BUCKETS), COARSE_BUCKETS - 1).astype(np.int64)
    fine = np.minimum(np.floor(arr * FINE_BUCKETS), FINE_BUCKETS - 1).astype(np.int64)
    if arr.ndim == 0:
        return int(coarse), int(fine)
    return coarse, fine


class ModalityEmbedder:
    """Owns the embedding tables and builds per-modality embedding nodes."""

    def __init__(self, cfg: RunConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store
        if cfg.title_len < max(CONV_WINDOWS):
            raise EmbeddingError(
                f"title_len {cfg.title_len} too short for window {max(CONV_WINDOWS)}"
            )
        active = set(cfg.active_modalities)
        if "ids" in active:
            for i, (vocab, dim) in enumerate(zip(cfg.id_vocabs, cfg.id_dims)):
                store.create(f"embed/ids/{i}", (vocab, dim))
        if "title" in active:
            store.create("embed/title/words", (cfg.word_vocab, cfg.d_term))
            for n in CONV_WINDOWS:
                store.create(f"embed/title/conv{n}/w", (n * cfg.d_term, cfg.title_filters),
                             init="xavier")
                store.create(f"embed/title/conv{n}/b", (cfg.title_filters,), init="zeros")
        if "statistic" in active:
            for i in range(cfg.n_statistics):
                store.create(f"embed/stat/{i}/coarse", (COARSE_BUCKETS, BUCKET_DIM))
                store.create(f"embed/stat/{i}/fine", (FINE_BUCKETS, BUCKET_DIM))
        store.create("embed/prop/type", (3, cfg.d_p))
        store.create("embed/prop/time_coarse", (COARSE_BUCKETS, BUCKET_DIM))
        store.create("embed/prop/time_fine", (FINE_BUCKETS, BUCKET_DIM))

    # Raw (pre-projection) width of each modality embedding.
    def width(self, modality: str) -> int:
        cfg = self.cfg
        if modality == "ids":
            return sum(cfg.id_dims)
        if modality == "image":
            return cfg.d_img
        if modality == "title":
            return len(CONV_WINDOWS) * cfg.title_filters
        if modality == "statistic":
            return 2 * BUCKET_DIM * cfg.n_statistics
        raise EmbeddingError(f"unknown modality '{modality}'")

    @property
    def property_width(self) -> int:
        return self.cfg.d_p + 2 * BUCKET_DIM

    def embed_ids(self, ids) -> ad.Node:
        """ids: (n, F) integer indices -> (n, sum(id_dims))."""
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != len(self.cfg.id_vocabs):
            raise EmbeddingError(f"ids shape {ids.shape} != (n, {len(self.cfg.id_vocabs)})")
        parts = []
        for i, vocab in enumerate(self.cfg.id_vocabs):
            col = ids[:, i]
            if col.min() < 0 or col.max() >= vocab:
                raise EmbeddingError(f"ids field {i}: index out of range (vocab {vocab})")
            parts.append(ad.gather_rows(self.store.leaf(f"embed/ids/{i}"), col))
        return ad.concat(parts, axis=1)

    def embed_image(self, image) -> ad.Node:
        """Precomputed vectors pass through unchanged; width must match."""
        arr = np.asarray(image, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != self.cfg.d_img:
            raise EmbeddingError(
                f"image width {arr.shape[-1] if arr.ndim else '?'} != configured {self.cfg.d_img}"
            )
        return ad.constant(arr)

    def embed_title(self, titles) -> ad.Node:
        """titles: (n, h) word indices -> (n, 3 * title_filters).

        For each window size, a 1-D convolution over the word-vector rows,
        ReLU, then max-over-time pooling; window outputs are concatenated.
        """
        titles = np.asarray(titles)
        h = self.cfg.title_len
        if titles.ndim != 2 or titles.shape[1] != h:
            raise EmbeddingError(f"title shape {titles.shape} != (n, {h})")
        words = self.store.leaf("embed/title/words")
        positions = [ad.gather_rows(words, titles[:, j]) for j in range(h)]
        pooled = []
        for n in CONV_WINDOWS:
            w = self.store.leaf(f"embed/title/conv{n}/w")
            b = self.store.leaf(f"embed/title/conv{n}/b")
            best = None
            for j in range(h - n + 1):
                window = ad.concat(positions[j:j + n], axis=1)
                act = ad.relu(ad.add(ad.matmul(window, w), b))
                best = act if best is None else ad.max_elementwise(best, act)
            pooled.append(best)
        return ad.concat(pooled, axis=1)

    def embed_statistic(self, stats) -> ad.Node:
        """stats: (n, n_statistics) values in [0,1) -> (n, 16 * n_statistics)."""
        stats = np.asarray(stats)
        if stats.ndim != 2 or stats.shape[1] != self.cfg.n_statistics:
            raise EmbeddingError(
                f"statistic shape {stats.shape} != (n, {self.cfg.n_statistics})"
            )
        coarse, fine = discretize_statistic(stats)
        parts = []
        for i in range(self.cfg.n_statistics):
            parts.append(ad.gather_rows(self.store.leaf(f"embed/stat/{i}/coarse"), coarse[:, i]))
            parts.append(ad.gather_rows(self.store.leaf(f"embed/stat/{i}/fine"), fine[:, i]))
        return ad.concat(parts, axis=1)

    def embed_property(self, btype, btime) -> ad.Node:
        """Behavior type + multi-granularity time -> (n, d_p + 16)."""
        btype = np.asarray(btype)
        if btype.min() < 0 or btype.max() > 2:
            raise EmbeddingError("behavior type index must be in {0,1,2}")
        coarse, fine = discretize_statistic(btime)
        return ad.concat(
            [
                ad.gather_rows(self.store.leaf("embed/prop/type"), btype),
                ad.gather_rows(self.store.leaf("embed/prop/time_coarse"), coarse),
                ad.gather_rows(self.store.leaf("embed/prop/time_fine"), fine),
            ],
            axis=1,
        )

    def embed_item(self, ids, image, titles, stats) -> dict:
        """All active modality embeddings for a batch of items."""
        out = {}
        for m in self.cfg.active_modalities:
            if m == "ids":
                out[m] = self.embed_ids(ids)
            elif m == "image":
                out[m] = self.embed_image(image)
            elif m == "title":
                out[m] = self.embed_title(titles)
            elif m == "statistic":
                out[m] = self.embed_statistic(stats)
        return out
