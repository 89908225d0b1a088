"""Training loop: the four objectives applied in one combined step per batch,
the ramp-up schedule for the adversarial tradeoff, metrics/diagnostic CSV
emission, checkpointing, and resume."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import Batch, collate, load_all
from .metrics import ScoredExample, compute_auc
from .model import Model
from .optim import AdaGrad

METRICS_HEADER = ["step", "epoch", "l_ctr", "l_ds", "l_d0", "l_adv",
                  "lambda", "auc", "d1_acc", "ds_acc"]
ADV_DIAG_HEADER = ["epoch", "d0_acc", "d1_acc", "ds_acc"]

LOSS_KEYS = ("ctr", "ds", "d0", "adv")


class DivergenceError(RuntimeError):
    pass


def lambda_schedule(progress: float, lambda0: float, gamma: float) -> float:
    """Ramp from 0 at progress 0 toward lambda0; monotone in progress."""
    if progress < 0.0 or progress > 1.0:
        warnings.warn(f"training progress {progress} outside [0,1]; clamping")
        progress = min(max(progress, 0.0), 1.0)
    return lambda0 * (2.0 / (1.0 + np.exp(-gamma * progress)) - 1.0)


def train_step(model: Model, batch: Batch, optimizer: AdaGrad, lam: float,
               active_losses=None) -> dict:
    """One combined forward/backward/AdaGrad update; returns the four loss
    values (zero when a loss is not part of the variant or is gated off)."""
    try:
        result = model.forward(batch, lam=lam, with_losses=True)
    except ad.NumericsError as exc:
        raise DivergenceError(f"non-finite value in forward pass: {exc}") from exc
    losses = result.losses
    if active_losses is not None:
        losses = {k: v for k, v in losses.items() if k in active_losses}
    if not losses:
        raise ValueError("no active losses for this step")
    total = None
    for node in losses.values():
        total = node if total is None else ad.add(total, node)
    values = {k: float(v.value) for k, v in result.losses.items()}
    for k in LOSS_KEYS:
        values.setdefault(k, 0.0)
    if not all(np.isfinite(v) for v in values.values()):
        raise DivergenceError(f"non-finite loss values: {values}")
    ad.backward(total)
    optimizer.step(model.store.values, model.store.collect_grads())
    return values


def score_dataset(model: Model, records: list, cfg: RunConfig,
                  batch_size: int = 256) -> list:
    """Forward-only scoring into ScoredExamples (no parameter mutation)."""
    scored = []
    for start in range(0, len(records), batch_size):
        chunk = records[start:start + batch_size]
        batch = collate(chunk, cfg)
        probs = model.predict(batch)
        for rec, p in zip(chunk, probs):
            scored.append(ScoredExample(
                user=rec.user, item=rec.candidate.ids[0], probability=float(p),
                label=rec.label, bucket=rec.bucket, unseen=rec.unseen))
    return scored


def _adversarial_diagnostics(model: Model, batch: Batch) -> dict:
    """Accuracies of the trained discriminators on this batch's features,
    plus the mean invariance weight per modality."""
    out = {"d0_acc": "", "d1_acc": "", "ds_acc": ""}
    if model.adv is None:
        return out
    with ad.no_grad():
        res = model.forward(batch, with_losses=False, collect_features=True)
    feats = res.adv_features
    mods = model.cfg.active_modalities
    c = np.concatenate([feats["invariant"][m] for m in sorted(mods)])
    s = np.concatenate([feats["specific"][m] for m in sorted(mods)])
    labels = np.concatenate([
        np.full(feats["invariant"][m].shape[0], i)
        for i, m in enumerate(sorted(mods))
    ])
    out["d1_acc"] = float(np.mean(model.adv.d1_probs_np(c).argmax(axis=1) == labels))
    if model.adv.use_weighting:
        out["d0_acc"] = float(np.mean(model.adv.d0_probs_np(c).argmax(axis=1) == labels))
        for m in mods:
            out[f"w_{m}"] = float(feats["weights"][m].mean())
    if model.adv.use_specific:
        out["ds_acc"] = float(np.mean(model.adv.ds_probs_np(s).argmax(axis=1) == labels))
    return out


@dataclass
class TrainResult:
    model: Model
    checkpoint_path: str
    metrics_path: str
    final_step: int
    val_auc: float | None = None
    history: list = field(default_factory=list)


def train(cfg: RunConfig, train_records: list | None = None,
          val_records: list | None = None, resume_from: str | None = None,
          quiet: bool = True) -> TrainResult:
    """Run (or resume) training; writes metrics CSV, adversarial diagnostics
    CSV, and a checkpoint per epoch under cfg.out_dir."""
    cfg.validate()
    if train_records is None:
        train_records = load_all(cfg.train_path)
    if val_records is None and cfg.val_path:
        val_records = load_all(cfg.val_path)
    if not train_records:
        raise ValueError("empty training dataset")

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.ckpt"
    metrics_path = out_dir / "metrics.csv"
    adv_diag_path = out_dir / "adv_diagnostics.csv"

    ad.set_nan_guard(cfg.nan_check)
    model = Model(cfg)
    optimizer = AdaGrad(cfg.learning_rate)
    n = len(train_records)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs

    start_epoch = 0
    step = 0
    mode = "w"
    if resume_from is not None:
        params, accs, step, saved_total, _ = load_checkpoint(resume_from)
        if saved_total != total_steps:
            raise ValueError(
                f"checkpoint was scheduled for {saved_total} steps, "
                f"config implies {total_steps}")
        if set(params) != set(model.store.values):
            raise ValueError("checkpoint parameters do not match this config")
        for name, value in params.items():
            model.store.values[name][...] = value
        optimizer.accumulators = {k: v.copy() for k, v in accs.items()}
        start_epoch = step // steps_per_epoch
        mode = "a"

    diag_mods = [f"w_{m}" for m in cfg.active_modalities] if model.adv is not None \
        and model.adv.use_weighting else []
    metrics_file = open(metrics_path, mode, newline="", encoding="utf-8")
    metrics = csv.writer(metrics_file)
    adv_file = open(adv_diag_path, mode, newline="", encoding="utf-8")
    adv_csv = csv.writer(adv_file)
    if mode == "w":
        metrics.writerow(METRICS_HEADER)
        adv_csv.writerow(ADV_DIAG_HEADER + diag_mods)

    history = []
    val_auc = None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            order = np.random.default_rng(cfg.seed * 100003 + epoch).permutation(n)
            losses = {k: 0.0 for k in LOSS_KEYS}
            for start in range(0, n, cfg.batch_size):
                batch = collate([train_records[i] for i in order[start:start + cfg.batch_size]], cfg)
                progress = step / max(total_steps - 1, 1)
                lam = lambda_schedule(progress, cfg.lambda0, cfg.gamma)
                try:
                    step_losses = train_step(model, batch, optimizer, lam)
                except DivergenceError:
                    save_checkpoint(ckpt_path.with_suffix(".diverged"),
                                    model.store.values, optimizer.accumulators,
                                    step, total_steps, cfg.to_text())
                    raise
                for k in LOSS_KEYS:
                    losses[k] += step_losses[k]
                step += 1
            for k in LOSS_KEYS:
                losses[k] /= steps_per_epoch

            row_auc = ""
            if val_records and ((epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
                scored = score_dataset(model, val_records, cfg)
                val_auc = compute_auc(scored).auc
                row_auc = f"{val_auc:.6f}"
            diag = _adversarial_diagnostics(
                model, collate([train_records[i] for i in order[:min(256, n)]], cfg))
            lam_now = lambda_schedule((step - 1) / max(total_steps - 1, 1),
                                      cfg.lambda0, cfg.gamma)
            metrics.writerow([step, epoch, f"{losses['ctr']:.6f}", f"{losses['ds']:.6f}",
                              f"{losses['d0']:.6f}", f"{losses['adv']:.6f}",
                              f"{lam_now:.6f}", row_auc,
                              diag["d1_acc"], diag["ds_acc"]])
            metrics_file.flush()
            adv_csv.writerow([epoch, diag["d0_acc"], diag["d1_acc"], diag["ds_acc"]]
                             + [diag.get(k, "") for k in diag_mods])
            adv_file.flush()
            history.append({"epoch": epoch, **losses, "auc": val_auc})
            save_checkpoint(ckpt_path, model.store.values, optimizer.accumulators,
                            step, total_steps, cfg.to_text())
            if not quiet:
                print(f"epoch {epoch}: " + " ".join(
                    f"{k}={losses[k]:.4f}" for k in LOSS_KEYS)
                    + (f" val_auc={row_auc}" if row_auc else ""))
    finally:
        metrics_file.close()
        adv_file.close()

    return TrainResult(model=model, checkpoint_path=str(ckpt_path),
                       metrics_path=str(metrics_path), final_step=step,
                       val_auc=val_auc, history=history)


def load_model(checkpoint_path) -> tuple:
    """Rebuild a model from a checkpoint (config echo included)."""
    from .config import parse_config_text

    params, accs, step, total_steps, config_text = load_checkpoint(checkpoint_path)
    if not config_text:
        raise ValueError("checkpoint carries no config echo; cannot rebuild model")
    cfg = parse_config_text(config_text)
    model = Model(cfg)
    if set(params) != set(model.store.values):
        raise ValueError("checkpoint parameters do not match rebuilt model")
    for name, value in params.items():
        model.store.values[name][...] = value
    return model, cfg, accs, step, total_steps
