"""Wires embedding, decomposition/fusion, the adversarial stack, sequence
integration, and the prediction head into one trainable model per variant.

Gradient routing (enforced with stop-gradient and gradient-reversal nodes):
  - the CTR loss reaches every layer;
  - the specific-discriminator loss reaches Ds and the S_m projections but
    never the embedding layer or common projections;
  - the D0 loss reaches only D0;
  - the weighted adversarial loss reaches D1 normally and the shared
    invariant projection with reversed sign, and nothing below it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import AdversarialNet, invariance_weight, pool_invariant
from .config import RunConfig
from .data import Batch
from .embedding import ModalityEmbedder
from .fusion import DecomposeFuse
from .params import ParamStore
from .sequence import SequenceModel

DECOMPOSED_VARIANTS = ("MAF", "MAF_ADV", "MAF_DDMA", "FULL_MARN")


@dataclass
class ItemNodes:
    """Per-item-batch graph nodes from the representation pipeline."""

    rep: ad.Node
    embeddings: dict = field(default_factory=dict)   # modality -> e_m
    specific: dict = field(default_factory=dict)     # modality -> s_m (CTR path)
    invariant: dict = field(default_factory=dict)    # modality -> c_m (CTR path)
    specific_ds: dict = field(default_factory=dict)  # S_m(stop(e_m)) for the Ds loss
    invariant_adv: dict = field(default_factory=dict)  # I(stop(e_m)) for the D1 game
    weights: dict = field(default_factory=dict)      # modality -> w per sample (numpy)


@dataclass
class ForwardResult:
    prediction: ad.Node                  # (n, 1) click probability
    losses: dict                         # name -> scalar Node (only active ones)
    items: list = field(default_factory=list)  # position ItemNodes + candidate last
    adv_features: dict = field(default_factory=dict)  # diagnostics arrays


class Model:
    def __init__(self, cfg: RunConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.store = ParamStore(rng)
        self.embedder = ModalityEmbedder(cfg, self.store)
        raw_widths = {m: self.embedder.width(m) for m in cfg.active_modalities}
        self.decomposed = cfg.variant in DECOMPOSED_VARIANTS
        self.fuse = DecomposeFuse(cfg, self.store, raw_widths,
                                  with_decomposition=self.decomposed)
        self.adv: AdversarialNet | None = None
        if cfg.variant in ("MAF_ADV", "MAF_DDMA", "FULL_MARN"):
            baseline = cfg.variant == "MAF_ADV"
            self.adv = AdversarialNet(cfg, self.store,
                                      use_weighting=not baseline,
                                      use_specific=not baseline)
        apgru = cfg.variant == "FULL_MARN"
        self.seq = SequenceModel(cfg, self.store, rep_width=cfg.d,
                                 prop_width=self.embedder.property_width,
                                 property_gate=apgru, candidate_attention=apgru)
        widths = [cfg.d_h + cfg.d] + list(cfg.prediction_hidden)
        for i in range(len(widths) - 1):
            self.store.create(f"pred/l{i}/w", (widths[i], widths[i + 1]), init="xavier")
            self.store.create(f"pred/l{i}/b", (widths[i + 1],), init="zeros")
        self.store.create("pred/out/w", (widths[-1], 1), init="xavier")
        self.store.create("pred/out/b", (1,), init="zeros")

    # ----- item representation pipeline -----

    def item_nodes(self, ids, image, title, stat) -> ItemNodes:
        cfg = self.cfg
        raw = self.embedder.embed_item(ids, image, title, stat)
        e = {m: self.fuse.project_common(m, raw[m]) for m in cfg.active_modalities}

        if not self.decomposed:
            # Single-modality variants use the projected embedding directly;
            # CONC sums the projections across modalities.
            rep = None
            for m in cfg.active_modalities:
                rep = e[m] if rep is None else ad.add(rep, e[m])
            return ItemNodes(rep=rep, embeddings=e)

        out = ItemNodes(rep=None, embeddings=e)  # type: ignore[arg-type]
        weighted_specific = []
        pool_inputs = []
        for idx, m in enumerate(cfg.active_modalities):
            s_m, c_m = self.fuse.decompose(m, e[m])
            out.specific[m] = s_m
            out.invariant[m] = c_m
            atten = self.fuse.attention_weights(m, s_m)
            weighted_specific.append((s_m, atten))
            if self.adv is not None and self.adv.use_weighting:
                probs = self.adv.d0_probs_np(c_m.value)
                w = invariance_weight(probs, idx).astype(np.float32)
            else:
                w = np.ones((c_m.value.shape[0], 1), dtype=np.float32)
            out.weights[m] = w
            pool_inputs.append((w, c_m))
            if self.adv is not None:
                stopped = ad.stop_gradient(e[m])
                out.invariant_adv[m] = self.fuse.invariant(stopped)
                if self.adv.use_specific:
                    out.specific_ds[m] = self.fuse.specific(m, stopped)
        s = self.fuse.fuse_specific(weighted_specific)
        c = pool_invariant(pool_inputs)
        out.rep = self.fuse.fuse_item(s, c)
        return out

    # ----- full forward -----

    def _predict_from(self, user_emb: ad.Node, rep_cand: ad.Node) -> ad.Node:
        x = ad.concat([user_emb, rep_cand], axis=1)
        for i in range(len(self.cfg.prediction_hidden)):
            x = ad.relu(ad.add(ad.matmul(x, self.store.leaf(f"pred/l{i}/w")),
                               self.store.leaf(f"pred/l{i}/b")))
        logit = ad.add(ad.matmul(x, self.store.leaf("pred/out/w")),
                       self.store.leaf("pred/out/b"))
        return ad.sigmoid(logit)

    def _ctr_loss(self, prediction: ad.Node, labels: np.ndarray) -> ad.Node:
        y = labels.reshape(-1, 1).astype(np.float32)
        pos = ad.mul(ad.log(prediction), ad.constant(y))
        from .sequence import one_minus
        neg = ad.mul(ad.log(one_minus(prediction)), ad.constant(1.0 - y))
        return ad.scale(ad.tmean(ad.add(pos, neg)), -1.0)

    @staticmethod
    def _real_rows(mask: np.ndarray, n_positions: int, batch_size: int) -> np.ndarray:
        """Indices of non-padded rows in a position-major stack of the
        history blocks followed by the candidate block."""
        rows = [np.flatnonzero(mask[:, t]) + t * batch_size for t in range(n_positions)]
        rows.append(np.arange(batch_size) + n_positions * batch_size)
        return np.concatenate(rows)

    @staticmethod
    def _stack_positions(hist: np.ndarray, cand: np.ndarray) -> np.ndarray:
        """(n, T, ...) history plus (n, ...) candidate -> position-major rows:
        T blocks of n history rows, then the n candidate rows."""
        t_len = hist.shape[1]
        flat = np.ascontiguousarray(hist.transpose(1, 0, *range(2, hist.ndim)))
        flat = flat.reshape(t_len * hist.shape[0], *hist.shape[2:])
        return np.concatenate([flat, cand], axis=0)

    def forward(self, batch: Batch, lam: float = 0.0,
                with_losses: bool = True, collect_features: bool = False) -> ForwardResult:
        cfg = self.cfg
        self.store.begin_graph()
        n = batch.size
        t_len = batch.seq_len

        # One item pipeline over all positions and the candidate; padded rows
        # are masked out of the sequence, attention, and adversarial paths, so
        # no gradient flows through them.
        items = self.item_nodes(
            self._stack_positions(batch.hist_ids, batch.cand_ids),
            self._stack_positions(batch.hist_image, batch.cand_image),
            self._stack_positions(batch.hist_title, batch.cand_title),
            self._stack_positions(batch.hist_stat, batch.cand_stat),
        )
        reps = [ad.gather_rows(items.rep, np.arange(t * n, (t + 1) * n))
                for t in range(t_len)]
        rep_cand = ad.gather_rows(items.rep, np.arange(t_len * n, (t_len + 1) * n))

        props = None
        if self.seq.property_gate:
            prop_all = self.embedder.embed_property(
                batch.hist_type.T.reshape(-1), batch.hist_time.T.reshape(-1))
            props = [ad.gather_rows(prop_all, np.arange(t * n, (t + 1) * n))
                     for t in range(t_len)]
        user_emb = self.seq.integrate(reps, props, batch.mask, rep_cand)
        prediction = self._predict_from(user_emb, rep_cand)

        result = ForwardResult(prediction=prediction, losses={}, items=[items])
        rows = self._real_rows(batch.mask, t_len, n)
        if with_losses:
            result.losses["ctr"] = self._ctr_loss(prediction, batch.labels)
            if self.adv is not None:
                c_adv = {m: ad.gather_rows(items.invariant_adv[m], rows)
                         for m in cfg.active_modalities}
                w_rows = {m: items.weights[m][rows] for m in cfg.active_modalities}
                result.losses["adv"] = self.adv.adversarial_loss(c_adv, w_rows, lam)
                if self.adv.use_weighting:
                    c_rows = {m: ad.gather_rows(items.invariant[m], rows)
                              for m in cfg.active_modalities}
                    result.losses["d0"] = self.adv.d0_loss(c_rows)
                if self.adv.use_specific:
                    s_rows = {m: ad.gather_rows(items.specific_ds[m], rows)
                              for m in cfg.active_modalities}
                    result.losses["ds"] = self.adv.ds_loss(s_rows, lam)

        if collect_features and self.decomposed:
            feats = {"specific": {}, "invariant": {}, "weights": {}}
            for m in cfg.active_modalities:
                feats["invariant"][m] = items.invariant[m].value[rows]
                feats["specific"][m] = items.specific[m].value[rows]
                feats["weights"][m] = items.weights[m][rows]
            result.adv_features = feats
        return result

    # ----- inference helpers -----

    def predict(self, batch: Batch) -> np.ndarray:
        with ad.no_grad():
            res = self.forward(batch, with_losses=False)
            return res.prediction.value.reshape(-1).copy()

    def item_representations(self, ids, image, title, stat) -> np.ndarray:
        with ad.no_grad():
            self.store.begin_graph()
            return self.item_nodes(ids, image, title, stat).rep.value.copy()
