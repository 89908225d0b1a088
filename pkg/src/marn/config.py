"""Run configuration: desk-scale defaults, full-scale presets, flat-file I/O.

The on-disk format is UTF-8 text, one `key = value` per line, `#` comments
allowed. Keys are exactly the RunConfig field names; anything else is an
error. List values are comma-separated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

VARIANTS = (
    "IDS_ONLY",
    "IMAGE_ONLY",
    "CONC",
    "MAF",
    "MAF_ADV",
    "MAF_DDMA",
    "FULL_MARN",
)

ADVERSARIAL_VARIANTS = ("MAF_ADV", "MAF_DDMA", "FULL_MARN")

MODALITIES = ("ids", "image", "title", "statistic")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variant: str = "FULL_MARN"
    seed: int = 0

    # widths
    d: int = 32                 # common feature width for s/c/rep
    d_h: int = 32               # GRU hidden width
    id_dims: list = field(default_factory=lambda: [8, 6, 6, 4])
    id_vocabs: list = field(default_factory=lambda: [2000, 50, 30, 4])
    d_img: int = 16
    d_term: int = 8             # word vector width
    title_len: int = 6
    title_filters: int = 4      # filters per conv window size (2, 3, 4)
    word_vocab: int = 48
    n_statistics: int = 6
    d_p: int = 8                # behavior-type embedding width
    modalities: list = field(default_factory=lambda: list(MODALITIES))
    prediction_hidden: list = field(default_factory=lambda: [32, 16])
    attention_hidden: int = 32
    invariant_depth: int = 1    # layers in the shared invariant projection

    # optimization
    learning_rate: float = 0.1
    batch_size: int = 128
    epochs: int = 3
    lambda0: float = 0.05
    gamma: float = 10.0
    max_seq_len: int = 50
    eval_every: int = 1         # epochs between validation rows
    nan_check: bool = True

    # paths
    train_path: str = ""
    val_path: str = ""
    test_path: str = ""
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'")
        if len(self.id_dims) != len(self.id_vocabs):
            raise ConfigError("id_dims and id_vocabs must have equal length")
        for m in self.modalities:
            if m not in MODALITIES:
                raise ConfigError(f"unknown modality '{m}'")
        if self.variant in ADVERSARIAL_VARIANTS and self.lambda0 <= 0:
            raise ConfigError("lambda0 must be positive for adversarial variants")
        if self.title_len < 4:
            raise ConfigError("title_len must be at least 4 (largest conv window)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        return self

    @property
    def n_modalities(self) -> int:
        return len(self.active_modalities)

    @property
    def active_modalities(self) -> list:
        if self.variant == "IDS_ONLY":
            return ["ids"]
        if self.variant == "IMAGE_ONLY":
            return ["image"]
        return list(self.modalities)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def full_scale_config(dataset: str = "amazon") -> RunConfig:
    """Production-size hyperparameters (kept as a preset; not runnable at desk scale)."""
    cfg = RunConfig(
        d=256,
        d_h=256,
        id_dims=[32, 24, 24, 16],
        d_img=4096,
        d_term=300,
        title_len=20,
        title_filters=64,
        learning_rate=0.1,
        lambda0=0.05,
        gamma=10.0,
    )
    if dataset == "amazon":
        cfg.prediction_hidden = [128, 64]
        cfg.batch_size = 32
    elif dataset == "taobao":
        cfg.prediction_hidden = [512, 256]
        cfg.batch_size = 1024
    else:
        raise ConfigError(f"unknown full-scale preset '{dataset}'")
    return cfg


_LIST_FIELDS = {"id_dims", "id_vocabs", "prediction_hidden", "modalities"}
_BOOL_FIELDS = {"nan_check"}


def _parse_value(name: str, raw: str, target_type):
    raw = raw.strip()
    if name in _LIST_FIELDS:
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if name == "modalities":
            return items
        return [int(s) for s in items]
    if name in _BOOL_FIELDS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got '{raw}'")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    known = {f.name: f for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{stripped}'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        target_type = type(getattr(cfg, key))
        try:
            updates[key] = _parse_value(key, raw, target_type)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
    return replace(cfg, **updates).validate()


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
