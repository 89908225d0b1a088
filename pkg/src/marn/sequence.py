"""Behavior-sequence integration: a GRU whose update gate can condition on the
behavior property, plus candidate-conditioned attention over hidden states.

Batches are padded at the front (oldest positions); per-step masks keep the
hidden state frozen through the padding, so the final state is always the
newest real step.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .params import ParamStore

MASKED_SCORE = -1.0e4  # additive score for padded steps; exp underflows to 0


def one_minus(x: ad.Node) -> ad.Node:
    return ad.add_const(ad.scale(x, -1.0), 1.0)


class SequenceModel:
    def __init__(self, cfg: RunConfig, store: ParamStore, rep_width: int,
                 prop_width: int, property_gate: bool, candidate_attention: bool):
        self.cfg = cfg
        self.store = store
        self.rep_width = rep_width
        self.property_gate = property_gate
        self.candidate_attention = candidate_attention
        dh = cfg.d_h
        for gate in ("update", "reset", "state"):
            store.create(f"gru/{gate}/w", (rep_width, dh), init="xavier")
            store.create(f"gru/{gate}/u", (dh, dh), init="xavier")
            store.create(f"gru/{gate}/b", (dh,), init="zeros")
        if property_gate:
            # Only the update gate sees the behavior property.
            store.create("gru/update/p", (prop_width, dh), init="xavier")
        if candidate_attention:
            store.create("attn/l1/w", (dh + rep_width, cfg.attention_hidden), init="xavier")
            store.create("attn/l1/b", (cfg.attention_hidden,), init="zeros")
            store.create("attn/out/w", (cfg.attention_hidden, 1), init="xavier")
            store.create("attn/out/b", (1,), init="zeros")

    def _gate(self, name: str, rep: ad.Node, h_prev: ad.Node,
              extra: ad.Node | None = None) -> ad.Node:
        pre = ad.add(ad.matmul(rep, self.store.leaf(f"gru/{name}/w")),
                     ad.matmul(h_prev, self.store.leaf(f"gru/{name}/u")))
        if extra is not None:
            pre = ad.add(pre, extra)
        return ad.add(pre, self.store.leaf(f"gru/{name}/b"))

    def cell(self, rep_t: ad.Node, prop_t: ad.Node | None, h_prev: ad.Node) -> ad.Node:
        """One step: property-modified update gate, standard reset/state."""
        extra = None
        if self.property_gate:
            if prop_t is None:
                raise ValueError("property gate enabled but no property embedding given")
            extra = ad.matmul(prop_t, self.store.leaf("gru/update/p"))
        u = ad.sigmoid(self._gate("update", rep_t, h_prev, extra))
        r = ad.sigmoid(self._gate("reset", rep_t, h_prev))
        h_tilde = ad.tanh(self._gate("state", rep_t, ad.mul(r, h_prev)))
        return ad.add(ad.mul(one_minus(u), h_prev), ad.mul(u, h_tilde))

    def run(self, reps: list, props: list, mask: np.ndarray) -> list:
        """Hidden states for every step. mask is (n, T) with 1 for real steps;
        padded steps carry the previous state forward."""
        n = reps[0].value.shape[0]
        h = ad.constant(np.zeros((n, self.cfg.d_h), dtype=np.float32))
        hiddens = []
        for t, rep_t in enumerate(reps):
            h_new = self.cell(rep_t, props[t] if props else None, h)
            m = mask[:, t].reshape(n, 1).astype(np.float32)
            if np.all(m == 1.0):
                h = h_new
            else:
                mnode = ad.constant(m)
                h = ad.add(ad.mul(h_new, mnode), ad.mul(h, ad.constant(1.0 - m)))
            hiddens.append(h)
        return hiddens

    def attention(self, hiddens: list, rep_cand: ad.Node, mask: np.ndarray) -> ad.Node:
        """Normalized weights over steps from an MLP on [h_t, candidate]."""
        if not hiddens:
            raise ValueError("attention over an empty sequence")
        scores = []
        for h_t in hiddens:
            x = ad.concat([h_t, rep_cand], axis=1)
            hid = ad.relu(ad.add(ad.matmul(x, self.store.leaf("attn/l1/w")),
                                 self.store.leaf("attn/l1/b")))
            scores.append(ad.add(ad.matmul(hid, self.store.leaf("attn/out/w")),
                                 self.store.leaf("attn/out/b")))
        score_mat = ad.concat(scores, axis=1)
        penalty = (1.0 - mask.astype(np.float32)) * MASKED_SCORE
        if np.any(penalty != 0.0):
            score_mat = ad.add(score_mat, ad.constant(penalty))
        return ad.softmax(score_mat)

    def user_embedding(self, hiddens: list, alpha: ad.Node) -> ad.Node:
        """Weighted sum over steps of the hidden states."""
        t_len = len(hiddens)
        out = None
        for t, h_t in enumerate(hiddens):
            onehot = np.zeros((t_len, 1), dtype=np.float32)
            onehot[t, 0] = 1.0
            w_t = ad.matmul(alpha, ad.constant(onehot))
            term = ad.mul(h_t, w_t)
            out = term if out is None else ad.add(out, term)
        return out

    def integrate(self, reps: list, props: list, mask: np.ndarray,
                  rep_cand: ad.Node) -> ad.Node:
        """User embedding: attention-weighted sum, or the last hidden state
        when candidate attention is off."""
        hiddens = self.run(reps, props, mask)
        if self.candidate_attention:
            alpha = self.attention(hiddens, rep_cand, mask)
            return self.user_embedding(hiddens, alpha)
        return hiddens[-1]
