"""Double-discriminators adversarial network: D0 scores how identifiable a
sample's modality is, its confidence turns into per-sample weights, and D1
plays the weighted minimax game against the shared invariant projection via
gradient reversal. A modality-specific discriminator Ds (sharing D1's final
classification matrix) keeps the specific features separable.

Also provides the exact finite-support oracles used to verify the trained
discriminators against their closed-form optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import RunConfig
from .params import ParamStore


def _softmax_np(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


class AdversarialNet:
    """Discriminator stack. `use_weighting` gates D0 (the MAF_ADV baseline
    runs D1 alone with unit weights); `use_specific` gates Ds."""

    def __init__(self, cfg: RunConfig, store: ParamStore,
                 use_weighting: bool = True, use_specific: bool = True):
        self.cfg = cfg
        self.store = store
        self.use_weighting = use_weighting
        self.use_specific = use_specific
        d = cfg.d
        hidden = max(d // 2, 4)
        self.hidden = hidden
        m = cfg.n_modalities
        self.n_classes = m
        if use_weighting:
            store.create("adv/d0/l1/w", (d, hidden), init="xavier")
            store.create("adv/d0/l1/b", (hidden,), init="zeros")
            store.create("adv/d0/out/w", (hidden, m), init="xavier")
            store.create("adv/d0/out/b", (m,), init="zeros")
        store.create("adv/d1/l1/w", (d, hidden), init="xavier")
        store.create("adv/d1/l1/b", (hidden,), init="zeros")
        # Final classification matrix shared between D1 and Ds (one storage).
        store.create("adv/shared/out_w", (hidden, m), init="xavier")
        store.create("adv/d1/out/b", (m,), init="zeros")
        if use_specific:
            store.create("adv/ds/l1/w", (d, hidden), init="xavier")
            store.create("adv/ds/l1/b", (hidden,), init="zeros")
            store.create("adv/ds/out/b", (m,), init="zeros")

    # ----- graph-building forwards -----

    def _mlp(self, prefix: str, out_w: str, out_b: str, x: ad.Node) -> ad.Node:
        h = ad.relu(ad.add(ad.matmul(x, self.store.leaf(f"{prefix}/l1/w")),
                           self.store.leaf(f"{prefix}/l1/b")))
        logits = ad.add(ad.matmul(h, self.store.leaf(out_w)), self.store.leaf(out_b))
        return ad.softmax(logits)

    def d0_forward(self, c: ad.Node) -> ad.Node:
        return self._mlp("adv/d0", "adv/d0/out/w", "adv/d0/out/b", c)

    def d1_forward(self, c: ad.Node) -> ad.Node:
        return self._mlp("adv/d1", "adv/shared/out_w", "adv/d1/out/b", c)

    def ds_forward(self, s: ad.Node) -> ad.Node:
        return self._mlp("adv/ds", "adv/shared/out_w", "adv/ds/out/b", s)

    # ----- numpy forwards (no graph; used for the detached weights and for
    # accuracy diagnostics) -----

    def _mlp_np(self, prefix: str, out_w: str, out_b: str, x: np.ndarray) -> np.ndarray:
        v = self.store.values
        h = np.maximum(x @ v[f"{prefix}/l1/w"] + v[f"{prefix}/l1/b"], 0)
        return _softmax_np(h @ v[out_w] + v[out_b])

    def d0_probs_np(self, x: np.ndarray) -> np.ndarray:
        return self._mlp_np("adv/d0", "adv/d0/out/w", "adv/d0/out/b", x)

    def d1_probs_np(self, x: np.ndarray) -> np.ndarray:
        return self._mlp_np("adv/d1", "adv/shared/out_w", "adv/d1/out/b", x)

    def ds_probs_np(self, x: np.ndarray) -> np.ndarray:
        return self._mlp_np("adv/ds", "adv/shared/out_w", "adv/ds/out/b", x)

    # ----- losses -----

    def _cross_entropy(self, probs: ad.Node, labels: np.ndarray,
                       weights: np.ndarray | None = None) -> ad.Node:
        """Mean (optionally weighted) negative log-likelihood."""
        n, m = probs.value.shape
        onehot = np.zeros((n, m), dtype=probs.value.dtype)
        onehot[np.arange(n), labels] = 1.0
        picked = ad.tsum(ad.mul(ad.log(probs), ad.constant(onehot)), axis=1)
        if weights is not None:
            picked = ad.mul(picked, ad.constant(weights.reshape(n, 1)))
        return ad.scale(ad.tmean(picked), -1.0)

    def d0_loss(self, feats_by_modality: dict) -> ad.Node:
        """M-class cross-entropy on stop-gradient'ed invariant features;
        updates only D0's own parameters."""
        rows, labels = self._stack(feats_by_modality, detach=True)
        return self._cross_entropy(self.d0_forward(rows), labels)

    def ds_loss(self, s_by_modality: dict, lam: float) -> ad.Node:
        """lambda-scaled cross-entropy on specific features (callers build the
        features from stop-gradient'ed inputs so embeddings stay untouched)."""
        rows, labels = self._stack(s_by_modality, detach=False)
        return ad.scale(self._cross_entropy(self.ds_forward(rows), labels), lam)

    def adversarial_loss(self, c_by_modality: dict, weights_by_modality: dict,
                         lam: float) -> ad.Node:
        """Weighted minimax loss. D1 minimizes the weighted cross-entropy
        (equivalently maximizes the adversarial objective); the gradient
        reversal sends the invariant projection the opposite update."""
        nodes = []
        labels = []
        weights = []
        for idx, (m, node) in enumerate(sorted(c_by_modality.items())):
            w = np.asarray(weights_by_modality[m], dtype=np.float64).reshape(-1)
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError(f"invariance weights for '{m}' outside [0,1]")
            nodes.append(ad.grad_reverse(node, 1.0))
            labels.append(np.full(node.value.shape[0], idx, dtype=np.int64))
            weights.append(w.astype(np.float32))
        rows = ad.concat(nodes, axis=0)
        labels = np.concatenate(labels)
        weights = np.concatenate(weights)
        return ad.scale(self._cross_entropy(self.d1_forward(rows), labels, weights), lam)

    def _stack(self, by_modality: dict, detach: bool):
        nodes = []
        labels = []
        for idx, (m, node) in enumerate(sorted(by_modality.items())):
            nodes.append(ad.stop_gradient(node) if detach else node)
            labels.append(np.full(node.value.shape[0], idx, dtype=np.int64))
        return ad.concat(nodes, axis=0), np.concatenate(labels)

    def modality_order(self, by_modality: dict) -> list:
        return sorted(by_modality)


def invariance_weight(d0_probs: np.ndarray, modality_index: int) -> np.ndarray:
    """w = 1 - D0's probability for the sample's true modality, per sample."""
    return (1.0 - d0_probs[:, modality_index]).reshape(-1, 1)


def pool_invariant(weighted: list) -> ad.Node:
    """Element-wise max over modalities of weight * invariant feature."""
    if not weighted:
        raise ValueError("pool_invariant: empty modality list")
    pooled = None
    for w, c in weighted:
        if not isinstance(w, ad.Node):
            w = ad.constant(np.asarray(w, dtype=np.float32).reshape(-1, 1))
        term = ad.mul(c, w)
        pooled = term if pooled is None else ad.max_elementwise(pooled, term)
    return pooled


# ---------------------------------------------------------------------------
# finite-support oracles


@dataclass
class DiscreteDistribution:
    """Finite-support distribution used only by the verification oracles."""

    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=np.float64)
        if np.any(self.mass < 0):
            raise ValueError("probability mass must be nonnegative")
        if abs(self.mass.sum() - 1.0) > 1e-9:
            raise ValueError("probability mass must sum to 1")


def optimal_d1_oracle(weighted_masses) -> tuple:
    """Closed-form optimal per-point discriminator output.

    `weighted_masses` is an (M, P) array of w^m(x) * px^m(x) values over a
    shared support of P points. Returns (D (P, M), excluded point indices);
    points where every modality has zero weighted mass are excluded.
    """
    wm = np.asarray(weighted_masses, dtype=np.float64)
    if wm.ndim != 2 or wm.shape[0] < 2:
        raise ValueError("need an (M, P) array with M >= 2")
    denom = wm.sum(axis=0)
    excluded = np.flatnonzero(denom == 0.0)
    out = np.zeros((wm.shape[1], wm.shape[0]))
    ok = denom > 0.0
    out[ok] = (wm[:, ok] / denom[ok]).T
    return out, excluded


def minimax_value_oracle(weighted_masses) -> tuple:
    """Objective value at the optimal discriminator.

    Sum over modalities and points of w*px*log(w*px / sum_m w*px); equals
    -M*log(M) when all weighted distributions coincide and grows with their
    generalized Jensen-Shannon divergence. Zero-mass terms contribute zero.
    """
    wm = np.asarray(weighted_masses, dtype=np.float64)
    optimal, excluded = optimal_d1_oracle(wm)
    value = 0.0
    for i in range(wm.shape[0]):
        mask = wm[i] > 0.0
        value += np.sum(wm[i, mask] * np.log(optimal[mask, i]))
    return value, excluded


class MLPProbe:
    """Small standalone softmax classifier (one hidden layer) trained with
    AdaGrad. Used for the fresh invariance probe and for fitting a
    discriminator to frozen features; never touches model parameters."""

    def __init__(self, in_dim: int, n_classes: int, hidden: int = 32,
                 seed: int = 0, learning_rate: float = 0.1):
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0, 1.0 / np.sqrt(in_dim), (in_dim, hidden)).astype(np.float32)
        self.b1 = np.zeros(hidden, dtype=np.float32)
        self.w2 = rng.normal(0, 1.0 / np.sqrt(hidden), (hidden, n_classes)).astype(np.float32)
        self.b2 = np.zeros(n_classes, dtype=np.float32)
        self.lr = learning_rate
        self.acc = {k: np.zeros_like(v) for k, v in self._params().items()}

    def _params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def probs(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(x @ self.w1 + self.b1, 0)
        return _softmax_np(h @ self.w2 + self.b2)

    def fit(self, x: np.ndarray, labels: np.ndarray, steps: int = 200,
            weights: np.ndarray | None = None) -> None:
        x = np.asarray(x, dtype=np.float32)
        labels = np.asarray(labels)
        n = x.shape[0]
        w = np.ones(n, dtype=np.float32) if weights is None else weights.astype(np.float32)
        for _ in range(steps):
            h_pre = x @ self.w1 + self.b1
            h = np.maximum(h_pre, 0)
            p = _softmax_np(h @ self.w2 + self.b2)
            delta = p.copy()
            delta[np.arange(n), labels] -= 1.0
            delta *= (w / n)[:, None]
            grads = {
                "w2": h.T @ delta,
                "b2": delta.sum(axis=0),
            }
            dh = (delta @ self.w2.T) * (h_pre > 0)
            grads["w1"] = x.T @ dh
            grads["b1"] = dh.sum(axis=0)
            params = self._params()
            for k, g in grads.items():
                self.acc[k] += g * g
                params[k] -= self.lr * g / np.sqrt(self.acc[k] + 1e-8)

    def accuracy(self, x: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.probs(x).argmax(axis=1) == labels))
