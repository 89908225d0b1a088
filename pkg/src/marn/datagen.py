"""Synthetic multimodal behavior-dataset generator.

Every item gets a shared latent (expressed, with noise, in all modalities) and
per-modality private latents (expressed only in their own modality). The item
category decides which modality's private latent carries click-relevant
signal, so dynamic modality weighting has ground truth to find; the ids
modality's private signal is observable only through item-ID co-occurrence,
which is what makes rare and held-out items hard for an IDs-only model.
Users are drawn around a small set of personas; purchases track a user's
taste more reliably than clicks, giving the behavior property real signal.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import MODALITIES

QUANT_LEVELS = 8
TITLE_SLOTS = 5  # 3 shared dims + 2 title-private dims, then a category word


class DatagenError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    users: int = 500
    items: int = 2000
    categories: int = 4
    interactions: int = 50000
    shops: int = 50
    brands: int = 30

    shared_dim: int = 3
    private_dim: int = 2
    image_dim: int = 16
    title_len: int = 6

    image_noise: float = 0.4
    title_noise: float = 0.3
    title_token_noise: float = 0.05
    stat_noise: float = 0.5

    # Per-category weights over (ids, image, title, statistic) private latents
    # in the click signal; default is round-robin one-hot.
    modality_importance: list = field(default_factory=list)

    unseen_fraction: float = 0.1
    zipf_exponent: float = 0.9

    personas: int = 6
    persona_jitter: float = 0.25

    max_history: int = 8
    test_candidates: int = 3
    train_fraction: float = 0.8
    val_fraction: float = 0.1

    # behavior types: (click, add-to-cart, purchase)
    type_probs: list = field(default_factory=lambda: [0.7, 0.15, 0.15])
    taste_prob_by_type: list = field(default_factory=lambda: [0.55, 0.80, 0.95])
    taste_temperature: float = 1.5

    z_scale: float = 0.8
    private_scale: float = 1.0
    pop_scale: float = 1.0
    bias: float = -0.3

    # candidate exposure mix: (taste-biased, popularity, uniform)
    exposure_mix: list = field(default_factory=lambda: [0.35, 0.5, 0.15])

    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        for name in ("users", "items", "categories", "interactions"):
            if getattr(self, name) < 1:
                raise DatagenError(f"{name} must be >= 1")
        for name in ("unseen_fraction", "train_fraction", "val_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DatagenError(f"{name} must be in [0,1]")
        if self.train_fraction + self.val_fraction >= 1.0:
            raise DatagenError("train_fraction + val_fraction must leave room for test")
        if self.shared_dim != 3 or self.private_dim != 2:
            # Title slot layout and statistic fields are tied to 3 shared +
            # 2 private dims; widths below would silently drift otherwise.
            raise DatagenError("this generator supports shared_dim=3, private_dim=2")
        return self

    @property
    def word_vocab(self) -> int:
        return 1 + TITLE_SLOTS * QUANT_LEVELS + self.categories

    def importance_matrix(self) -> np.ndarray:
        m = len(MODALITIES)
        if self.modality_importance:
            arr = np.asarray(self.modality_importance, dtype=np.float64)
            if arr.shape != (self.categories, m):
                raise DatagenError(
                    f"modality_importance must be {self.categories}x{m}"
                )
            return arr
        arr = np.zeros((self.categories, m))
        for k in range(self.categories):
            arr[k, k % m] = 1.0
        return arr


_SPEC_LIST_FIELDS = {"modality_importance", "type_probs", "taste_prob_by_type",
                     "exposure_mix"}


def parse_spec_text(text: str) -> SyntheticSpec:
    spec = SyntheticSpec()
    known = {f.name for f in fields(SyntheticSpec)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DatagenError(f"line {lineno}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise DatagenError(f"line {lineno}: unknown key '{key}'")
        current = getattr(spec, key)
        if key in _SPEC_LIST_FIELDS:
            updates[key] = [float(s) for s in raw.split(",") if s.strip()]
        elif isinstance(current, bool):
            updates[key] = raw.lower() in ("true", "1", "yes")
        elif isinstance(current, int):
            updates[key] = int(raw)
        elif isinstance(current, float):
            updates[key] = float(raw)
        else:
            updates[key] = raw
    return replace(spec, **updates).validate()


def load_spec(path) -> SyntheticSpec:
    return parse_spec_text(Path(path).read_text(encoding="utf-8"))


def popularity_buckets(counts, n_buckets: int = 10) -> np.ndarray:
    """Equal-frequency buckets by interaction count, ties broken by item id.

    Bucket sizes differ by at most one; with fewer items than buckets each
    item gets its own bucket (with a warning)."""
    counts = np.asarray(counts)
    n = counts.shape[0]
    if n < n_buckets:
        warnings.warn(f"only {n} items; using {n} popularity buckets")
        n_buckets = max(n, 1)
    order = np.lexsort((np.arange(n), counts))
    buckets = np.empty(n, dtype=np.int64)
    for rank, item in enumerate(order):
        buckets[item] = rank * n_buckets // n
    return buckets


def _percentile(values: np.ndarray) -> np.ndarray:
    """Rank transform to [0, 1), ties broken by index."""
    n = values.shape[0]
    order = np.lexsort((np.arange(n), values))
    pct = np.empty(n, dtype=np.float64)
    pct[order] = np.arange(n) / n
    return pct


def _round6(x) -> float:
    return round(float(x), 6)


class _ItemTable:
    """Materialized per-item features shared by every sample that touches the
    item."""

    def __init__(self, spec: SyntheticSpec, rng: np.random.Generator):
        self.spec = spec
        n, dz, dp = spec.items, spec.shared_dim, spec.private_dim
        self.category = rng.integers(0, spec.categories, n)
        self.z = rng.normal(0.0, 1.0, (n, dz))
        self.private = {m: rng.normal(0.0, 1.0, (n, dp)) for m in MODALITIES}

        # Shops and brands cluster on the shared latent, so the IDs modality
        # carries coarse shared signal even for rare items.
        shop_centers = rng.normal(0.0, 1.0, (spec.shops, dz))
        brand_centers = rng.normal(0.0, 1.0, (spec.brands, dz))
        self.shop = self._assign(self.z, shop_centers, rng)
        self.brand = self._assign(self.z, brand_centers, rng)

        imp = spec.importance_matrix()
        stacked = np.stack([self.private[m] for m in MODALITIES], axis=1)  # (n, M, dp)
        weights = imp[self.category]  # (n, M)
        self.click_private = np.einsum("nmp,nm->np", stacked, weights)

        # Image: linear mix of shared and private latents plus item noise.
        a = rng.normal(0.0, 1.0, (dz, spec.image_dim)) / np.sqrt(dz)
        b = rng.normal(0.0, 1.0, (dp, spec.image_dim)) / np.sqrt(dp)
        img = self.z @ a + self.private["image"] @ b
        img += spec.image_noise * rng.normal(0.0, 1.0, img.shape)
        self.image = np.round(img, 6)

        # Title: one token per latent slot (quantized with jitter), plus a
        # category word; occasional tokens are replaced by random ones.
        slots = np.concatenate(
            [self.z + spec.title_noise * rng.normal(0.0, 1.0, (n, dz)),
             self.private["title"] + spec.title_noise * rng.normal(0.0, 1.0, (n, dp))],
            axis=1,
        )
        tokens = np.empty((n, TITLE_SLOTS + 1), dtype=np.int64)
        for j in range(TITLE_SLOTS):
            level = np.floor(_percentile(slots[:, j]) * QUANT_LEVELS).astype(np.int64)
            tokens[:, j] = 1 + j * QUANT_LEVELS + level
        tokens[:, TITLE_SLOTS] = 1 + TITLE_SLOTS * QUANT_LEVELS + self.category
        if spec.title_token_noise > 0:
            flip = rng.random(tokens.shape) < spec.title_token_noise
            random_tokens = rng.integers(1, spec.word_vocab, tokens.shape)
            tokens = np.where(flip, random_tokens, tokens)
        if spec.title_len < TITLE_SLOTS + 1:
            raise DatagenError("title_len too short for the token layout")
        self.title = np.zeros((n, spec.title_len), dtype=np.int64)
        self.title[:, :TITLE_SLOTS + 1] = tokens

        # Statistic percentiles other than popularity can be fixed now.
        sn = spec.stat_noise
        self.stat_shared = np.stack(
            [_percentile(self.z[:, j] + sn * rng.normal(0.0, 1.0, n)) for j in range(dz)],
            axis=1,
        )
        self.stat_private = np.stack(
            [_percentile(self.private["statistic"][:, j] + sn * rng.normal(0.0, 1.0, n))
             for j in range(dp)],
            axis=1,
        )
        self.pop_pct = np.zeros(n)  # filled once interactions are drawn
        self.buckets = np.zeros(n, dtype=np.int64)
        self._features: list = [None] * n

    @staticmethod
    def _assign(z: np.ndarray, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        d2 += 0.25 * rng.gumbel(0.0, 1.0, d2.shape)
        return d2.argmin(axis=1)

    def set_popularity(self, counts: np.ndarray) -> None:
        self.pop_pct = _percentile(counts.astype(np.float64))
        self.buckets = popularity_buckets(counts)

    def features(self, i: int) -> dict:
        cached = self._features[i]
        if cached is None:
            stats = [self.pop_pct[i]]
            stats.extend(self.stat_shared[i])
            stats.extend(self.stat_private[i])
            cached = {
                "ids": [int(i), int(self.shop[i]), int(self.brand[i]),
                        int(self.category[i])],
                "image": [_round6(v) for v in self.image[i]],
                "title": [int(t) for t in self.title[i]],
                "statistic": [_round6(v) for v in stats],
            }
            self._features[i] = cached
        return cached


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate(spec: SyntheticSpec, out_dir) -> dict:
    """Write train/val/test JSONL splits plus an item catalog and a meta file.

    Returns summary statistics (counts per split, label rates, unseen rate).
    """
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    table = _ItemTable(spec, rng)

    n_items = spec.items
    n_unseen = int(round(spec.unseen_fraction * n_items))
    unseen_pool = rng.permutation(n_items)[:n_unseen]
    is_unseen = np.zeros(n_items, dtype=bool)
    is_unseen[unseen_pool] = True
    seen_items = np.flatnonzero(~is_unseen)

    # Zipf popularity over the seen pool.
    ranks = rng.permutation(seen_items.shape[0])
    zipf = (1.0 + ranks) ** (-spec.zipf_exponent)
    zipf /= zipf.sum()

    # User taste vectors around persona centers.
    dz, dp = spec.shared_dim, spec.private_dim
    persona_centers = rng.normal(0.0, 1.0, (spec.personas, dz + dp))
    persona_of = rng.integers(0, spec.personas, spec.users)
    user_vec = persona_centers[persona_of] + spec.persona_jitter * rng.normal(
        0.0, 1.0, (spec.users, dz + dp))

    # Static part of the affinity (popularity term joins at label time).
    affinity = (spec.z_scale * (table.z @ user_vec[:, :dz].T)
                + spec.private_scale * (table.click_private @ user_vec[:, dz:].T)).T

    taste_probs = np.empty((spec.users, seen_items.shape[0]))
    for u in range(spec.users):
        logits = affinity[u, seen_items] / spec.taste_temperature
        logits -= logits.max()
        e = np.exp(logits)
        taste_probs[u] = e / e.sum()
    taste_cum = np.cumsum(taste_probs, axis=1)
    zipf_cum = np.cumsum(zipf)

    def sample_seen(cum: np.ndarray, size: int | None = None):
        draws = rng.random(size if size is not None else 1)
        idx = np.searchsorted(cum, draws, side="right").clip(max=cum.shape[0] - 1)
        picked = seen_items[idx]
        return picked if size is not None else int(picked[0])

    # Draw behavior events per user.
    events_per_user = rng.multinomial(spec.interactions, np.full(spec.users, 1.0 / spec.users))
    user_events = []
    for u in range(spec.users):
        n_ev = max(int(events_per_user[u]), 3)  # every user needs a usable history
        types = rng.choice(3, size=n_ev, p=spec.type_probs)
        on_taste = rng.random(n_ev) < np.asarray(spec.taste_prob_by_type)[types]
        items = np.where(
            on_taste,
            sample_seen(taste_cum[u], n_ev),
            sample_seen(zipf_cum, n_ev),
        )
        user_events.append((items, types))

    counts = np.zeros(n_items, dtype=np.int64)
    for items, _ in user_events:
        np.add.at(counts, items, 1)
    table.set_popularity(counts)

    def draw_candidate(u: int, allow_unseen: bool) -> int:
        if allow_unseen and n_unseen > 0 and rng.random() < spec.unseen_fraction:
            return int(unseen_pool[rng.integers(n_unseen)])
        mode = rng.random()
        if mode < spec.exposure_mix[0]:
            return sample_seen(taste_cum[u])
        if mode < spec.exposure_mix[0] + spec.exposure_mix[1]:
            return sample_seen(zipf_cum)
        return int(seen_items[rng.integers(seen_items.shape[0])])

    def label_for(u: int, item: int) -> int:
        logit = (spec.bias + affinity[u, item]
                 + spec.pop_scale * (table.pop_pct[item] - 0.5))
        return int(rng.random() < _sigmoid(logit))

    paths = {split: out / f"{split}.jsonl" for split in ("train", "val", "test")}
    handles = {split: path.open("w", encoding="utf-8") for split, path in paths.items()}
    stats = {split: [0, 0] for split in paths}  # [n, positives]
    n_unseen_candidates = 0
    n_test = 0

    try:
        for u in range(spec.users):
            items, types = user_events[u]
            n_ev = items.shape[0]
            train_end = int(spec.train_fraction * n_ev)
            val_end = int((spec.train_fraction + spec.val_fraction) * n_ev)
            for k in range(1, n_ev):
                start = max(0, k - spec.max_history)
                behaviors = []
                for j in range(start, k):
                    gap = k - j
                    behaviors.append([
                        table.features(int(items[j])),
                        {"behavior_type": int(types[j]),
                         "behavior_time": _round6(gap / (gap + 5.0))},
                    ])
                if k < train_end:
                    split, n_cands = "train", 1
                elif k < val_end:
                    split, n_cands = "val", 1
                else:
                    split, n_cands = "test", spec.test_candidates
                for _ in range(n_cands):
                    cand = draw_candidate(u, allow_unseen=(split == "test"))
                    y = label_for(u, cand)
                    record = {
                        "user": u,
                        "behaviors": behaviors,
                        "candidate": table.features(cand),
                        "label": y,
                        "bucket": int(table.buckets[cand]),
                        "unseen": bool(is_unseen[cand]),
                    }
                    handles[split].write(json.dumps(record, separators=(",", ":")))
                    handles[split].write("\n")
                    stats[split][0] += 1
                    stats[split][1] += y
                    if split == "test":
                        n_test += 1
                        n_unseen_candidates += int(is_unseen[cand])
    finally:
        for fh in handles.values():
            fh.close()

    with (out / "items.jsonl").open("w", encoding="utf-8") as fh:
        for i in range(n_items):
            obj = {"id": i}
            obj.update(table.features(i))
            fh.write(json.dumps(obj, separators=(",", ":")))
            fh.write("\n")

    meta = {
        "users": spec.users,
        "items": n_items,
        "categories": spec.categories,
        "word_vocab": spec.word_vocab,
        "shops": spec.shops,
        "brands": spec.brands,
        "image_dim": spec.image_dim,
        "title_len": spec.title_len,
        "n_statistics": 1 + spec.shared_dim + spec.private_dim,
        "splits": {k: v[0] for k, v in stats.items()},
        "positive_rate": {k: (v[1] / v[0] if v[0] else 0.0) for k, v in stats.items()},
        "unseen_candidate_rate": (n_unseen_candidates / n_test) if n_test else 0.0,
        "seed": spec.seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return meta
