"""The three stage models and their composition into end-to-end pair
prediction.

Emotion and cause models share a backbone (embedding dropout -> optional
stacked BiLSTM -> dense head); the pairing model scores
[emotion_rep || cause_rep || distance_embedding] with a sigmoid head.  The
representations handed to pairing are the stage models' penultimate-layer
outputs: the raw fused features for the dense variant, the top BiLSTM outputs
for the recurrent variants.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import crf as crf_mod
from . import nn
from .corpus import (
    NEUTRAL,
    Conversation,
    Dataset,
    Emotion,
    EmotionCausePair,
    with_predictions,
)

EMOTION_VARIANTS = ("dense", "bilstm", "bilstm_crf")
CAUSE_VARIANTS = ("dense", "bilstm")


class ModelError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared backbone


@dataclass
class BackboneConfig:
    variant: str
    input_dim: int
    head_dim: int
    hidden_size: int = 256
    n_layers: int = 1
    embedding_dropout: float = 0.3
    inter_layer_dropout: float = 0.3

    @property
    def uses_rnn(self) -> bool:
        return self.variant != "dense"

    @property
    def rep_dim(self) -> int:
        return 2 * self.hidden_size if self.uses_rnn else self.input_dim

    def stack(self) -> nn.BiRNNStack:
        return nn.BiRNNStack(
            input_size=self.input_dim,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            inter_layer_dropout=self.inter_layer_dropout,
        )


def _backbone_init(cfg: BackboneConfig, rng: np.random.Generator) -> dict:
    params = {}
    if cfg.uses_rnn:
        for k, v in nn.birnn_init(cfg.stack(), rng).items():
            params[f"rnn.{k}"] = v
    head = nn.dense_init(cfg.rep_dim, cfg.head_dim, rng)
    params["head_W"] = head.weight
    params["head_b"] = head.bias
    return params


def _backbone_forward(cfg, params, features, training, rng):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ModelError(f"expected a (T, D) feature matrix, got shape {x.shape}")
    if x.shape[1] != cfg.input_dim:
        raise ModelError(f"feature width {x.shape[1]} != configured input_dim {cfg.input_dim}")
    cache = {"emb_mask": None, "rnn_caches": None}
    if training and cfg.embedding_dropout > 0.0:
        cache["emb_mask"] = nn.dropout_mask(x.shape, cfg.embedding_dropout, rng)
        x = x * cache["emb_mask"]
    if cfg.uses_rnn:
        rnn_params = {k[4:]: v for k, v in params.items() if k.startswith("rnn.")}
        rep, rnn_caches = nn.birnn_forward(cfg.stack(), rnn_params, x, training, rng)
        cache["rnn_caches"] = rnn_caches
    else:
        rep = x
    cache["head_in"] = rep
    scores = nn.dense_forward(nn.DenseParams(params["head_W"], params["head_b"]), rep)
    return scores, cache


def _backbone_backward(cfg, params, cache, dscores):
    head = nn.DenseParams(params["head_W"], params["head_b"])
    drep, dW, db = nn.dense_backward(head, cache["head_in"], dscores)
    grads = {"head_W": dW, "head_b": db}
    if cfg.uses_rnn:
        rnn_params = {k[4:]: v for k, v in params.items() if k.startswith("rnn.")}
        _, rnn_grads = nn.birnn_backward(cfg.stack(), rnn_params, cache["rnn_caches"], drep)
        for k, v in rnn_grads.items():
            grads[f"rnn.{k}"] = v
    return grads


def _backbone_representations(cfg, params, features):
    if cfg.uses_rnn:
        rnn_params = {k[4:]: v for k, v in params.items() if k.startswith("rnn.")}
        rep, _ = nn.birnn_forward(cfg.stack(), rnn_params, np.asarray(features, dtype=np.float64))
        return rep
    return np.asarray(features, dtype=np.float64)


# ---------------------------------------------------------------------------
# stage 1: emotion classification


@dataclass
class EmotionModelConfig:
    variant: str = "dense"
    input_dim: int = 0
    n_classes: int = 7
    hidden_size: int = 256
    n_layers: int = 4
    embedding_dropout: float = 0.3
    inter_layer_dropout: float = 0.3
    crf_decode: str = "viterbi"  # or "marginal"

    def __post_init__(self):
        if self.variant not in EMOTION_VARIANTS:
            raise ModelError(f"unknown emotion variant {self.variant!r}")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            variant="bilstm" if self.variant != "dense" else "dense",
            input_dim=self.input_dim,
            head_dim=self.n_classes,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            embedding_dropout=self.embedding_dropout,
            inter_layer_dropout=self.inter_layer_dropout,
        )


class EmotionModel:
    """7-way utterance classifier; dense, bilstm or bilstm_crf variant."""

    def __init__(self, config: EmotionModelConfig, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            params = _backbone_init(config.backbone(), rng or np.random.default_rng(0))
            if config.variant == "bilstm_crf":
                for k, v in vars(crf_mod.crf_init(config.n_classes)).items():
                    params[f"crf.{k}"] = v
        self.params = params

    @property
    def rep_dim(self) -> int:
        return self.config.backbone().rep_dim

    def crf_params(self) -> crf_mod.CRFParams:
        return crf_mod.CRFParams(
            transitions=self.params["crf.transitions"],
            start_scores=self.params["crf.start_scores"],
            end_scores=self.params["crf.end_scores"],
        )

    def forward(self, features, training=False, rng=None):
        """Per-utterance 7-way scores: logits (dense/bilstm) or CRF emissions."""
        scores, cache = _backbone_forward(
            self.config.backbone(), self.params, features, training, rng
        )
        return scores, cache

    def representations(self, features) -> np.ndarray:
        return _backbone_representations(self.config.backbone(), self.params, features)

    def loss_and_grads(self, features, labels, class_weights, training=False, rng=None):
        """Mean weighted CE (dense/bilstm) or sequence CRF NLL (bilstm_crf)."""
        scores, cache = self.forward(features, training, rng)
        labels = np.asarray(labels, dtype=np.int64)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        if self.config.variant == "bilstm_crf":
            # CRF loss is sequence-level; class weights intentionally unused
            loss = crf_mod.crf_nll(scores, self.crf_params(), labels)
            dscores, crf_grads = crf_mod.crf_gradients(scores, self.crf_params(), labels)
            for k, v in crf_grads.items():
                grads[f"crf.{k}"] = v
        else:
            loss, dscores = nn.weighted_ce_batch(scores, labels, class_weights)
        grads.update(_backbone_backward(self.config.backbone(), self.params, cache, dscores))
        return loss, grads

    def predict(self, features) -> list[int]:
        scores, _ = self.forward(features, training=False)
        if self.config.variant == "bilstm_crf":
            if self.config.crf_decode == "marginal":
                return crf_mod.marginal_argmax_decode(scores, self.crf_params())
            labels, _ = crf_mod.viterbi_decode(scores, self.crf_params())
            return labels
        return [int(k) for k in np.argmax(scores, axis=1)]


# ---------------------------------------------------------------------------
# stage 2: candidate cause detection


@dataclass
class CauseModelConfig:
    variant: str = "dense"
    input_dim: int = 0
    hidden_size: int = 256
    n_layers: int = 3
    embedding_dropout: float = 0.3
    inter_layer_dropout: float = 0.3
    threshold: float = 0.5

    def __post_init__(self):
        if self.variant not in CAUSE_VARIANTS:
            raise ModelError(f"unknown cause variant {self.variant!r}")

    def backbone(self) -> BackboneConfig:
        return BackboneConfig(
            variant=self.variant,
            input_dim=self.input_dim,
            head_dim=1,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            embedding_dropout=self.embedding_dropout,
            inter_layer_dropout=self.inter_layer_dropout,
        )


class CauseModel:
    """Binary candidate-cause classifier with a sigmoid head."""

    def __init__(self, config: CauseModelConfig, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            params = _backbone_init(config.backbone(), rng or np.random.default_rng(0))
        self.params = params

    @property
    def rep_dim(self) -> int:
        return self.config.backbone().rep_dim

    def forward(self, features, training=False, rng=None):
        scores, cache = _backbone_forward(
            self.config.backbone(), self.params, features, training, rng
        )
        return scores[:, 0], cache

    def representations(self, features) -> np.ndarray:
        return _backbone_representations(self.config.backbone(), self.params, features)

    def loss_and_grads(self, features, labels, training=False, rng=None):
        logits, cache = self.forward(features, training, rng)
        loss, dz = nn.bce_batch(logits, labels)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        grads.update(
            _backbone_backward(self.config.backbone(), self.params, cache, dz[:, None])
        )
        return loss, grads

    def probabilities(self, features) -> np.ndarray:
        logits, _ = self.forward(features, training=False)
        return nn.sigmoid(logits)

    def predict(self, features) -> np.ndarray:
        """1 iff probability strictly exceeds the threshold."""
        return (self.probabilities(features) > self.config.threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# stage 3: emotion-cause pairing


@dataclass
class PairingModelConfig:
    emotion_rep_dim: int = 0
    cause_rep_dim: int = 0
    distance_dim: int = 32
    max_distance: int = 12
    threshold: float = 0.5
    rep_dropout: float = 0.3

    @property
    def input_dim(self) -> int:
        return self.emotion_rep_dim + self.cause_rep_dim + self.distance_dim

    @property
    def n_distance_rows(self) -> int:
        return 2 * self.max_distance + 1


@dataclass(frozen=True)
class PairExample:
    conversation_id: int
    emotion_utterance_id: int
    cause_utterance_id: int
    label: int


def distance_row(distance: int, max_distance: int) -> int:
    """Clipped signed distance mapped to a table row; 0 selects the center."""
    return int(np.clip(distance, -max_distance, max_distance)) + max_distance


def pair_representation(
    emotion_rep: np.ndarray,
    cause_rep: np.ndarray,
    distance: int,
    distance_table: np.ndarray,
    max_distance: int,
) -> np.ndarray:
    """emotion_rep || cause_rep || distance_table[clip(distance)]."""
    row = distance_row(distance, max_distance)
    return np.concatenate([emotion_rep, cause_rep, distance_table[row]])


class PairingModel:
    """Sigmoid head over [emotion_rep || cause_rep || distance_embedding].

    The distance table is a learned lookup over clipped signed utterance
    offsets (cause_id - emotion_id), rows initialized from standard normal
    draws.
    """

    def __init__(self, config: PairingModelConfig, params: dict | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        if params is None:
            rng = rng or np.random.default_rng(0)
            head = nn.dense_init(config.input_dim, 1, rng)
            params = {
                "dist_table": rng.standard_normal(
                    (config.n_distance_rows, config.distance_dim)
                ),
                "head_W": head.weight,
                "head_b": head.bias,
            }
        self.params = params

    def _inputs(self, emotion_reps, cause_reps, distances):
        cfg = self.config
        e = np.atleast_2d(np.asarray(emotion_reps, dtype=np.float64))
        c = np.atleast_2d(np.asarray(cause_reps, dtype=np.float64))
        if e.shape[1] != cfg.emotion_rep_dim or c.shape[1] != cfg.cause_rep_dim:
            raise ModelError(
                f"rep widths ({e.shape[1]}, {c.shape[1]}) incompatible with pairing"
                f" config ({cfg.emotion_rep_dim}, {cfg.cause_rep_dim})"
            )
        rows = np.asarray([distance_row(d, cfg.max_distance) for d in distances])
        x = np.concatenate([e, c, self.params["dist_table"][rows]], axis=1)
        return x, rows

    def logits(self, emotion_reps, cause_reps, distances, training=False, rng=None):
        x, rows = self._inputs(emotion_reps, cause_reps, distances)
        mask = None
        rep_width = self.config.emotion_rep_dim + self.config.cause_rep_dim
        if training and self.config.rep_dropout > 0.0:
            mask = nn.dropout_mask((x.shape[0], rep_width), self.config.rep_dropout, rng)
            x[:, :rep_width] *= mask
        head = nn.DenseParams(self.params["head_W"], self.params["head_b"])
        z = nn.dense_forward(head, x)[:, 0]
        return z, {"x": x, "rows": rows, "mask": mask, "rep_width": rep_width}

    def loss_and_grads(self, emotion_reps, cause_reps, distances, labels,
                       training=False, rng=None):
        z, cache = self.logits(emotion_reps, cause_reps, distances, training, rng)
        loss, dz = nn.bce_batch(z, labels)
        head = nn.DenseParams(self.params["head_W"], self.params["head_b"])
        dx, dW, db = nn.dense_backward(head, cache["x"], dz[:, None])
        d_table = np.zeros_like(self.params["dist_table"])
        rep_width = cache["rep_width"]
        np.add.at(d_table, cache["rows"], dx[:, rep_width:])
        return loss, {"dist_table": d_table, "head_W": dW, "head_b": db}

    def probabilities(self, emotion_reps, cause_reps, distances) -> np.ndarray:
        z, _ = self.logits(emotion_reps, cause_reps, distances)
        return nn.sigmoid(z)


# ---------------------------------------------------------------------------
# pair example construction and negative sampling


def candidate_pair_space(conv: Conversation) -> list[tuple[int, int]]:
    """All (gold non-neutral emotion utterance, any utterance) id pairs minus gold."""
    gold = {(p.emotion_utterance_id, p.cause_utterance_id) for p in (conv.gold_pairs or ())}
    emotion_ids = [
        u.utterance_id
        for u in conv.utterances
        if u.gold_emotion is not None and u.gold_emotion is not NEUTRAL
    ]
    return [
        (e, c)
        for e in emotion_ids
        for c in range(1, len(conv.utterances) + 1)
        if (e, c) not in gold
    ]


def sample_negative_pairs(
    gold_pairs, candidate_space, ratio: int, seed
) -> list[tuple[int, int]]:
    """min(ratio * |gold|, |space|) negatives drawn uniformly without replacement.

    Gold pairs are excluded from the space defensively, so a sampled negative
    can never coincide with a gold pair.  ``seed`` may be an int or a seeded
    Generator.
    """
    if ratio < 1:
        raise ModelError(f"negative ratio must be >= 1, got {ratio}")
    gold_keys = {(p.emotion_utterance_id, p.cause_utterance_id) for p in gold_pairs}
    space = sorted(set(candidate_space) - gold_keys)
    n = min(ratio * len(gold_keys), len(space))
    if n == 0:
        return []
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = rng.choice(len(space), size=n, replace=False)
    return [space[i] for i in sorted(chosen)]


def build_pair_examples(conv: Conversation, ratio: int, seed: int) -> list[PairExample]:
    """Teacher-forced positives (gold pairs) plus sampled negatives, 1:ratio."""
    if conv.gold_pairs is None:
        raise ModelError(
            f"conversation {conv.conversation_id}: gold pairs required for pairing examples"
        )
    positives = sorted(
        {(p.emotion_utterance_id, p.cause_utterance_id) for p in conv.gold_pairs}
    )
    rng = np.random.default_rng((seed, conv.conversation_id))
    negatives = sample_negative_pairs(
        conv.gold_pairs, candidate_pair_space(conv), ratio, rng
    )
    cid = conv.conversation_id
    return [PairExample(cid, e, c, 1) for e, c in positives] + [
        PairExample(cid, e, c, 0) for e, c in negatives
    ]


# ---------------------------------------------------------------------------
# end-to-end composition


def check_rep_compatibility(
    emotion_model: EmotionModel, cause_model: CauseModel, pairing_model: PairingModel
) -> None:
    cfg = pairing_model.config
    if (emotion_model.rep_dim, cause_model.rep_dim) != (
        cfg.emotion_rep_dim,
        cfg.cause_rep_dim,
    ):
        raise ModelError(
            f"stage rep widths ({emotion_model.rep_dim}, {cause_model.rep_dim}) do not"
            f" match pairing config ({cfg.emotion_rep_dim}, {cfg.cause_rep_dim})"
        )


def predict_pairs(
    emotion_model: EmotionModel,
    cause_model: CauseModel,
    pairing_model: PairingModel,
    features: np.ndarray,
) -> tuple[list[Emotion], list[EmotionCausePair]]:
    """Compose the three stages on one conversation's features.

    Returns the per-utterance emotion predictions and the deduplicated pair
    list: for every predicted non-neutral utterance and every predicted
    candidate cause, the pair is emitted iff its pairing probability strictly
    exceeds the threshold.
    """
    check_rep_compatibility(emotion_model, cause_model, pairing_model)
    emotions = [Emotion(k) for k in emotion_model.predict(features)]
    cause_flags = cause_model.predict(features)
    emotion_ids = [i + 1 for i, e in enumerate(emotions) if e is not NEUTRAL]
    cause_ids = [i + 1 for i, flag in enumerate(cause_flags) if flag]
    if not emotion_ids or not cause_ids:
        return emotions, []
    e_reps = emotion_model.representations(features)
    c_reps = cause_model.representations(features)
    combos = list(itertools.product(emotion_ids, cause_ids))
    probs = pairing_model.probabilities(
        np.stack([e_reps[e - 1] for e, _ in combos]),
        np.stack([c_reps[c - 1] for _, c in combos]),
        [c - e for e, c in combos],
    )
    pairs = [
        EmotionCausePair(e, emotions[e - 1], c)
        for (e, c), p in zip(combos, probs)
        if p > pairing_model.config.threshold
    ]
    unique = sorted(
        set(pairs),
        key=lambda p: (p.emotion_utterance_id, p.cause_utterance_id, int(p.emotion)),
    )
    return emotions, unique


def predict_dataset(
    emotion_model: EmotionModel,
    cause_model: CauseModel,
    pairing_model: PairingModel,
    dataset: Dataset,
    provider,
) -> Dataset:
    """Run the full three-stage pipeline over every conversation."""
    predicted = []
    for conv in dataset.conversations:
        features = provider.conversation_features(conv)
        emotions, pairs = predict_pairs(emotion_model, cause_model, pairing_model, features)
        predicted.append(with_predictions(conv, emotions, pairs))
    return Dataset(conversations=tuple(predicted), split_tag=dataset.split_tag)
