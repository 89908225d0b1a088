"""Dataset records, streaming JSONL loading with validation, and batch
collation (front-padded histories with masks)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig


class DataError(ValueError):
    pass


@dataclass
class ItemFeatures:
    ids: list          # categorical indices: item, shop, brand, category
    image: list        # precomputed dense vector
    title: list        # word indices, padded with 0
    statistic: list    # percentile-normalized values in [0, 1)


@dataclass
class BehaviorProperty:
    behavior_type: int     # 0 click, 1 add-to-cart, 2 purchase
    behavior_time: float   # recency percentile in [0, 1)


@dataclass
class SampleRecord:
    user: int
    behaviors: list        # [(ItemFeatures, BehaviorProperty), ...] oldest first
    candidate: ItemFeatures
    label: int
    bucket: int            # candidate popularity decile
    unseen: bool           # candidate absent from training interactions


def _item_from_json(obj, where: str) -> ItemFeatures:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: item features must be an object")
    for key in ("ids", "image", "title", "statistic"):
        if key not in obj or not isinstance(obj[key], list):
            raise DataError(f"{where}: missing or non-list field '{key}'")
    return ItemFeatures(obj["ids"], obj["image"], obj["title"], obj["statistic"])


def record_from_json(obj, where: str = "record") -> SampleRecord:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: expected an object")
    try:
        user = int(obj["user"])
        label = int(obj["label"])
        bucket = int(obj["bucket"])
        unseen = bool(obj["unseen"])
        raw_behaviors = obj["behaviors"]
    except KeyError as exc:
        raise DataError(f"{where}: missing field {exc}") from exc
    if label not in (0, 1):
        raise DataError(f"{where}: label must be 0 or 1")
    if not isinstance(raw_behaviors, list) or len(raw_behaviors) < 1:
        raise DataError(f"{where}: behaviors must be a non-empty list")
    behaviors = []
    for i, pair in enumerate(raw_behaviors):
        if not isinstance(pair, list) or len(pair) != 2:
            raise DataError(f"{where}: behavior {i} must be [item, property]")
        item = _item_from_json(pair[0], f"{where} behavior {i}")
        prop = pair[1]
        if not isinstance(prop, dict) or "behavior_type" not in prop or "behavior_time" not in prop:
            raise DataError(f"{where}: behavior {i} property malformed")
        btype = int(prop["behavior_type"])
        if btype not in (0, 1, 2):
            raise DataError(f"{where}: behavior {i} type index out of range")
        behaviors.append((item, BehaviorProperty(btype, float(prop["behavior_time"]))))
    candidate = _item_from_json(obj["candidate"], f"{where} candidate")
    return SampleRecord(user, behaviors, candidate, label, bucket, unseen)


def record_to_json(rec: SampleRecord) -> str:
    def item(f: ItemFeatures):
        return {"ids": f.ids, "image": f.image, "title": f.title,
                "statistic": f.statistic}

    obj = {
        "user": rec.user,
        "behaviors": [
            [item(it), {"behavior_type": p.behavior_type, "behavior_time": p.behavior_time}]
            for it, p in rec.behaviors
        ],
        "candidate": item(rec.candidate),
        "label": rec.label,
        "bucket": rec.bucket,
        "unseen": rec.unseen,
    }
    return json.dumps(obj, separators=(",", ":"))


def load(path):
    """Stream SampleRecords from a JSONL file; constant memory in file size."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            yield record_from_json(obj, where=f"{path}:{lineno}")


def load_all(path) -> list:
    return list(load(path))


@dataclass
class Batch:
    """Arrays for one mini-batch. Histories are front-padded to a common
    length; mask is 1 where the step is real."""

    hist_ids: np.ndarray      # (n, T, F) int
    hist_image: np.ndarray    # (n, T, d_img) float32
    hist_title: np.ndarray    # (n, T, h) int
    hist_stat: np.ndarray     # (n, T, S) float32
    hist_type: np.ndarray     # (n, T) int
    hist_time: np.ndarray     # (n, T) float32
    mask: np.ndarray          # (n, T) float32
    cand_ids: np.ndarray
    cand_image: np.ndarray
    cand_title: np.ndarray
    cand_stat: np.ndarray
    labels: np.ndarray        # (n,) float32
    users: np.ndarray
    buckets: np.ndarray
    unseen: np.ndarray

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def seq_len(self) -> int:
        return self.mask.shape[1]


def collate(records: list, cfg: RunConfig) -> Batch:
    n = len(records)
    if n == 0:
        raise DataError("cannot collate an empty batch")
    f_count = len(cfg.id_vocabs)
    lengths = [min(len(r.behaviors), cfg.max_seq_len) for r in records]
    t_max = max(lengths)
    hist_ids = np.zeros((n, t_max, f_count), dtype=np.int64)
    hist_image = np.zeros((n, t_max, cfg.d_img), dtype=np.float32)
    hist_title = np.zeros((n, t_max, cfg.title_len), dtype=np.int64)
    hist_stat = np.zeros((n, t_max, cfg.n_statistics), dtype=np.float32)
    hist_type = np.zeros((n, t_max), dtype=np.int64)
    hist_time = np.zeros((n, t_max), dtype=np.float32)
    mask = np.zeros((n, t_max), dtype=np.float32)
    cand_ids = np.zeros((n, f_count), dtype=np.int64)
    cand_image = np.zeros((n, cfg.d_img), dtype=np.float32)
    cand_title = np.zeros((n, cfg.title_len), dtype=np.int64)
    cand_stat = np.zeros((n, cfg.n_statistics), dtype=np.float32)

    def fill_item(ids_row, img_row, title_row, stat_row, item: ItemFeatures, where: str):
        if len(item.ids) != f_count:
            raise DataError(f"{where}: expected {f_count} id fields")
        if len(item.image) != cfg.d_img:
            raise DataError(f"{where}: image width {len(item.image)} != {cfg.d_img}")
        if len(item.title) != cfg.title_len:
            raise DataError(f"{where}: title length {len(item.title)} != {cfg.title_len}")
        if len(item.statistic) != cfg.n_statistics:
            raise DataError(f"{where}: {len(item.statistic)} statistics != {cfg.n_statistics}")
        ids_row[:] = item.ids
        img_row[:] = item.image
        title_row[:] = item.title
        stat_row[:] = item.statistic

    for i, rec in enumerate(records):
        # Keep the most recent max_seq_len behaviors, front-padded.
        recent = rec.behaviors[-lengths[i]:]
        offset = t_max - lengths[i]
        for j, (item, prop) in enumerate(recent):
            t = offset + j
            fill_item(hist_ids[i, t], hist_image[i, t], hist_title[i, t],
                      hist_stat[i, t], item, f"user {rec.user} behavior {j}")
            hist_type[i, t] = prop.behavior_type
            hist_time[i, t] = prop.behavior_time
            mask[i, t] = 1.0
        fill_item(cand_ids[i], cand_image[i], cand_title[i], cand_stat[i],
                  rec.candidate, f"user {rec.user} candidate")

    return Batch(
        hist_ids=hist_ids, hist_image=hist_image, hist_title=hist_title,
        hist_stat=hist_stat, hist_type=hist_type, hist_time=hist_time, mask=mask,
        cand_ids=cand_ids, cand_image=cand_image, cand_title=cand_title,
        cand_stat=cand_stat,
        labels=np.array([r.label for r in records], dtype=np.float32),
        users=np.array([r.user for r in records], dtype=np.int64),
        buckets=np.array([r.bucket for r in records], dtype=np.int64),
        unseen=np.array([r.unseen for r in records], dtype=bool),
    )
