"""The four graph-temporal label predictors over (X_day, S_seq, A) bundles.

All variants share an LSTM branch over each participant's past-L-day sequence
and a dense head; they differ only in the branch that mixes information across
participants for the current day:

  gan_lstm   graph attention layers (the proposed model)
  gcn_lstm   spectral graph convolution layers
  conv_lstm  1-D convolution along the participant axis (order-sensitive)
  lstm_only  no cross-participant branch at all

Branch embeddings are L2-normalized per node and concatenated; lstm_only (and
ablated variants) fill the missing branch with zeros so the head has the same
shape everywhere, which keeps parameter counts comparable and makes an ablated
graph model literally identical to lstm_only under the same seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .nn.layers import (
    ConvParticipants,
    Dense,
    Dropout,
    GatLayer,
    GcnLayer,
    Lstm,
    NumericalError,
    Parameter,
    bce_loss,
    l2_prob_loss,
    normalize_adjacency,
    sigmoid,
)
from .nn.optim import AdamOptimizer, EarlyStopper, TrainConfig
from .nn.serialize import params_from_json, params_to_json
from .seeding import substream

MODEL_KINDS = ("gan_lstm", "gcn_lstm", "conv_lstm", "lstm_only")


@dataclass
class ModelGraphBundle:
    """One training sample: day-k features, L-day sequences, graph, day-k+1 labels."""

    X_day: np.ndarray          # (eta, m)
    S_seq: np.ndarray          # (eta, L, m)
    A: np.ndarray              # (eta, eta), symmetric, non-negative, zero diagonal
    y_next: np.ndarray         # (eta,), 0/1 with NaN where the label is missing
    node_ids: list
    duplicated: np.ndarray     # (eta,) bool: repeated padding slots
    cohort_id: object = None
    day: int = -1
    score_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X_day = np.asarray(self.X_day, dtype=np.float64)
        self.S_seq = np.asarray(self.S_seq, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.y_next = np.asarray(self.y_next, dtype=np.float64)
        self.duplicated = np.asarray(self.duplicated, dtype=bool)
        eta = self.X_day.shape[0]
        if self.S_seq.shape[0] != eta or self.A.shape != (eta, eta):
            raise ValueError("bundle tensors disagree on node count")
        if self.S_seq.shape[2] != self.X_day.shape[1]:
            raise ValueError("bundle tensors disagree on feature width")
        if self.y_next.shape != (eta,) or len(self.node_ids) != eta:
            raise ValueError("bundle labels/roster disagree on node count")
        if not (np.all(np.isfinite(self.X_day)) and np.all(np.isfinite(self.S_seq))):
            raise ValueError("non-finite bundle features")
        if not np.array_equal(self.A, self.A.T) or np.any(self.A < 0):
            raise ValueError("bundle adjacency must be symmetric and non-negative")
        if np.any(np.diag(self.A) != 0):
            raise ValueError("bundle adjacency must have a zero diagonal")
        if self.score_mask is None:
            self.score_mask = ~self.duplicated & ~np.isnan(self.y_next)
        self.score_mask = np.asarray(self.score_mask, dtype=bool)

    @property
    def eta(self) -> int:
        return self.X_day.shape[0]

    @property
    def seq_len(self) -> int:
        return self.S_seq.shape[1]

    @property
    def n_features(self) -> int:
        return self.X_day.shape[1]


class BundleBatch:
    """Bundles stacked into contiguous tensors for one-shot forward passes."""

    def __init__(self, bundles: list[ModelGraphBundle]):
        if not bundles:
            raise ValueError("empty bundle list")
        eta = bundles[0].eta
        seq = bundles[0].seq_len
        m = bundles[0].n_features
        for b in bundles:
            if (b.eta, b.seq_len, b.n_features) != (eta, seq, m):
                raise ValueError(
                    f"bundle shape ({b.eta}, {b.seq_len}, {b.n_features}) "
                    f"does not match ({eta}, {seq}, {m})"
                )
        self.x = np.stack([b.X_day for b in bundles])
        self.s = np.stack([b.S_seq for b in bundles])
        self.a = np.stack([b.A for b in bundles])
        self.a_hat = normalize_adjacency(self.a)
        y = np.stack([b.y_next for b in bundles])
        self.mask = np.stack([b.score_mask for b in bundles])
        self.y = np.where(np.isnan(y), 0.0, y)
        self.bundles = bundles

    def __len__(self):
        return len(self.bundles)

    def take(self, idx: np.ndarray) -> "BundleBatch":
        sub = BundleBatch.__new__(BundleBatch)
        sub.x = self.x[idx]
        sub.s = self.s[idx]
        sub.a = self.a[idx]
        sub.a_hat = self.a_hat[idx]
        sub.y = self.y[idx]
        sub.mask = self.mask[idx]
        sub.bundles = [self.bundles[i] for i in idx]
        return sub


def _l2norm_rows(v: np.ndarray, eps: float = 1e-12):
    r = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    safe = r > eps
    rr = np.where(safe, r, 1.0)
    out = np.where(safe, v / rr, 0.0)
    return out, (v, rr, safe)


def _l2norm_rows_backward(dout: np.ndarray, cache) -> np.ndarray:
    v, rr, safe = cache
    dot = (dout * v).sum(axis=-1, keepdims=True)
    dv = dout / rr - v * dot / (rr ** 3)
    return np.where(safe, dv, 0.0)


class SleepLabelModel(BaseEstimator):
    """Estimator API over bundles: fit / predict_proba / predict / score.

    `kind` selects the cross-participant branch. `ablate_graph` /
    `ablate_lstm` zero out a branch (embedding replaced by zeros and no
    gradient flows into it), which is how the temporal-module ablation and the
    lstm_only equivalence are realized.
    """

    def __init__(self, kind: str = "gan_lstm", n_features: int = 32, eta: int = 15,
                 seq_len: int = 3, hidden_graph: int = 32, hidden_lstm: int = 32,
                 head_hidden: int = 16, graph_layers: int = 2,
                 dropout_rate: float = 0.2, lr: float = 0.001, patience: int = 30,
                 min_delta: float = 0.01, max_epochs: int = 200, loss: str = "bce",
                 batch_size: int | None = None, threshold: float = 0.5,
                 seed: int = 0, ablate_graph: bool = False,
                 ablate_lstm: bool = False):
        self.kind = kind
        self.n_features = n_features
        self.eta = eta
        self.seq_len = seq_len
        self.hidden_graph = hidden_graph
        self.hidden_lstm = hidden_lstm
        self.head_hidden = head_hidden
        self.graph_layers = graph_layers
        self.dropout_rate = dropout_rate
        self.lr = lr
        self.patience = patience
        self.min_delta = min_delta
        self.max_epochs = max_epochs
        self.loss = loss
        self.batch_size = batch_size
        self.threshold = threshold
        self.seed = seed
        self.ablate_graph = ablate_graph
        self.ablate_lstm = ablate_lstm

    # -- construction -------------------------------------------------------

    def initialize(self) -> "SleepLabelModel":
        """(Re)build all layers with seed-derived parameter draws."""
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        TrainConfig(lr=self.lr, patience=self.patience, min_delta=self.min_delta,
                    max_epochs=self.max_epochs, seed=self.seed,
                    dropout_rate=self.dropout_rate, loss=self.loss,
                    batch_size=self.batch_size)  # validates ranges

        def rng(name):
            return substream(self.seed, f"init:{name}")

        self.graph_stack_ = []
        if self.kind != "lstm_only":
            width = self.n_features
            for i in range(self.graph_layers):
                name = f"graph{i}"
                if self.kind == "gan_lstm":
                    layer = GatLayer(width, self.hidden_graph, "tanh",
                                     rng=rng(name), name=name)
                elif self.kind == "gcn_lstm":
                    layer = GcnLayer(width, self.hidden_graph, "tanh",
                                     rng=rng(name), name=name)
                elif self.kind == "conv_lstm":
                    layer = ConvParticipants(width, self.hidden_graph, "tanh",
                                             rng=rng(name), name=name)
                self.graph_stack_.append(layer)
                width = self.hidden_graph
        self.lstm_ = Lstm(self.n_features, self.hidden_lstm, rng=rng("lstm"),
                          name="lstm")
        self.dropout_ = Dropout(self.dropout_rate, name="dropout")
        concat = self.hidden_graph + self.hidden_lstm
        self.head1_ = Dense(concat, self.head_hidden, "tanh", rng=rng("head1"),
                            name="head1")
        self.head2_ = Dense(self.head_hidden, 1, "identity", rng=rng("head2"),
                            name="head2")
        self.history_ = {"train_loss": [], "val_loss": []}
        self.epochs_trained_ = 0
        return self

    def _layers(self):
        return [*self.graph_stack_, self.lstm_, self.head1_, self.head2_]

    def parameters(self) -> dict[str, Parameter]:
        out = {}
        for layer in self._layers():
            for pname, p in layer.params.items():
                out[f"{layer.name}.{pname}"] = p
        return out

    def n_parameters_by_component(self) -> dict[str, int]:
        return {
            "graph": sum(l.n_parameters() for l in self.graph_stack_),
            "lstm": self.lstm_.n_parameters(),
            "head": self.head1_.n_parameters() + self.head2_.n_parameters(),
        }

    def _check_built(self):
        if not hasattr(self, "lstm_"):
            raise RuntimeError("model not initialized; call initialize() or fit()")

    # -- forward / backward -------------------------------------------------

    def _forward(self, batch: BundleBatch, train: bool = False,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        self._check_built()
        nb, eta, m = batch.x.shape
        if m != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {m}")

        graph_active = self.kind != "lstm_only" and not self.ablate_graph
        if graph_active:
            h = batch.x
            for layer in self.graph_stack_:
                if isinstance(layer, GcnLayer):
                    h = layer.forward(h, batch.a_hat)
                elif isinstance(layer, GatLayer):
                    h = layer.forward(h, batch.a)
                else:
                    h = layer.forward(h)
            graph_emb, self._graph_norm_cache = _l2norm_rows(h)
        else:
            graph_emb = np.zeros((nb, eta, self.hidden_graph))
            self._graph_norm_cache = None

        if not self.ablate_lstm:
            hl = self.lstm_.forward(batch.s.reshape(nb * eta, -1, m))
            hl = hl.reshape(nb, eta, self.hidden_lstm)
            lstm_emb, self._lstm_norm_cache = _l2norm_rows(hl)
        else:
            lstm_emb = np.zeros((nb, eta, self.hidden_lstm))
            self._lstm_norm_cache = None

        z = np.concatenate([graph_emb, lstm_emb], axis=-1)
        z = self.dropout_.forward(z, train=train, rng=rng)
        h1 = self.head1_.forward(z.reshape(nb * eta, -1))
        logits = self.head2_.forward(h1).reshape(nb, eta)
        self._graph_active = graph_active
        return sigmoid(logits)

    def _backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backprop from d(loss)/d(logits); returns d(loss)/d(X_day)."""
        nb, eta = dlogits.shape
        d1 = self.head2_.backward(dlogits.reshape(-1, 1))
        dz = self.head1_.backward(d1).reshape(nb, eta, -1)
        dz = self.dropout_.backward(dz)
        dgraph = dz[..., : self.hidden_graph]
        dlstm = dz[..., self.hidden_graph :]

        if self._lstm_norm_cache is not None:
            dhl = _l2norm_rows_backward(dlstm, self._lstm_norm_cache)
            self.lstm_.backward(dhl.reshape(nb * eta, self.hidden_lstm))

        if self._graph_active:
            dh = _l2norm_rows_backward(dgraph, self._graph_norm_cache)
            for layer in reversed(self.graph_stack_):
                dh = layer.backward(dh)
            return dh
        return np.zeros((nb, eta, self.n_features))

    # -- training -----------------------------------------------------------

    def _loss_and_dlogits(self, p, batch):
        if self.loss == "bce":
            loss, _ = bce_loss(p, batch.y, batch.mask)
            scored = int(batch.mask.sum())
            dlogits = np.where(batch.mask, (p - batch.y) / scored, 0.0)
        else:
            loss, dp = l2_prob_loss(p, batch.y, batch.mask)
            dlogits = dp * p * (1.0 - p)
        return loss, dlogits

    def fit(self, bundles: list[ModelGraphBundle],
            val_bundles: list[ModelGraphBundle] | None = None) -> "SleepLabelModel":
        self.initialize()
        train_batch = bundles if isinstance(bundles, BundleBatch) else BundleBatch(bundles)
        val_batch = None
        if val_bundles is not None and len(val_bundles) > 0:
            val_batch = (val_bundles if isinstance(val_bundles, BundleBatch)
                         else BundleBatch(val_bundles))

        opt = AdamOptimizer(list(self.parameters().values()), lr=self.lr)
        stopper = EarlyStopper(self.patience, self.min_delta) if val_batch else None
        drop_rng = substream(self.seed, "dropout")
        shuffle_rng = substream(self.seed, "shuffle")
        snapshot = None

        for epoch in range(1, self.max_epochs + 1):
            try:
                epoch_loss = self._train_epoch(train_batch, opt, drop_rng, shuffle_rng)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}: {exc}") from exc
            if not np.isfinite(epoch_loss):
                raise NumericalError(f"epoch {epoch}: non-finite training loss")
            self.history_["train_loss"].append(epoch_loss)
            self.epochs_trained_ = epoch

            if val_batch is not None:
                val_p = self._forward(val_batch, train=False)
                val_loss, _ = self._loss_and_dlogits(val_p, val_batch)
                self.history_["val_loss"].append(val_loss)
                improved, stop = stopper.update(val_loss)
                if improved:
                    snapshot = {k: p.value.copy() for k, p in self.parameters().items()}
                if stop:
                    break

        if snapshot is not None:
            for k, p in self.parameters().items():
                p.value[...] = snapshot[k]
            self.best_epoch_ = stopper.best_epoch
        return self

    def _train_epoch(self, batch, opt, drop_rng, shuffle_rng) -> float:
        if self.batch_size is None or self.batch_size >= len(batch):
            opt.zero_grad()
            p = self._forward(batch, train=True, rng=drop_rng)
            loss, dlogits = self._loss_and_dlogits(p, batch)
            self._backward(dlogits)
            opt.step()
            return loss
        order = shuffle_rng.permutation(len(batch))
        losses = []
        for start in range(0, len(order), self.batch_size):
            sub = batch.take(order[start : start + self.batch_size])
            if not sub.mask.any():
                continue
            opt.zero_grad()
            p = self._forward(sub, train=True, rng=drop_rng)
            loss, dlogits = self._loss_and_dlogits(p, sub)
            self._backward(dlogits)
            opt.step()
            losses.append(loss)
        return float(np.mean(losses)) if losses else np.nan

    # -- inference ----------------------------------------------------------

    def predict_proba(self, bundles) -> np.ndarray:
        batch = bundles if isinstance(bundles, BundleBatch) else BundleBatch(bundles)
        return self._forward(batch, train=False)

    def forward_bundle(self, bundle: ModelGraphBundle) -> np.ndarray:
        return self.predict_proba([bundle])[0]

    def predict(self, bundles) -> np.ndarray:
        return (self.predict_proba(bundles) >= self.threshold).astype(np.int64)

    def score(self, bundles) -> float:
        batch = bundles if isinstance(bundles, BundleBatch) else BundleBatch(bundles)
        preds = self.predict(batch)
        correct = (preds == batch.y) & batch.mask
        scored = int(batch.mask.sum())
        if scored == 0:
            raise ValueError("no scored nodes")
        return float(correct.sum() / scored)

    def input_gradients(self, bundles) -> np.ndarray:
        """d(mean node probability)/d(X_day) per bundle, shape (B, eta, m)."""
        batch = bundles if isinstance(bundles, BundleBatch) else BundleBatch(bundles)
        p = self._forward(batch, train=False)
        eta = p.shape[1]
        for layer in self._layers():
            layer.zero_grad()
        dx = self._backward(p * (1.0 - p) / eta)
        for layer in self._layers():
            layer.zero_grad()
        return dx

    # -- persistence --------------------------------------------------------

    def save(self, out_dir: str | Path):
        self._check_built()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "params.json").write_text(params_to_json(self.parameters()))
        (out_dir / "manifest.json").write_text(
            json.dumps(self.get_params(), sort_keys=True)
        )

    @classmethod
    def load(cls, out_dir: str | Path) -> "SleepLabelModel":
        out_dir = Path(out_dir)
        manifest = json.loads((out_dir / "manifest.json").read_text())
        model = cls(**manifest).initialize()
        loaded = params_from_json((out_dir / "params.json").read_text())
        own = model.parameters()
        if set(loaded) != set(own):
            raise ValueError("saved parameters do not match the manifest architecture")
        for name, p in own.items():
            if loaded[name].value.shape != p.value.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.value[...] = loaded[name].value
        return model


def predict_labels(model: SleepLabelModel, bundles: list[ModelGraphBundle],
                   threshold: float = 0.5):
    """Thresholded labels plus the scoring mask that hides repeated slots."""
    batch = bundles if isinstance(bundles, BundleBatch) else BundleBatch(bundles)
    probs = model.predict_proba(batch)
    labels = (probs >= threshold).astype(np.int64)
    return labels, batch.mask
