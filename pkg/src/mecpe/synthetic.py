"""Desk-scale synthetic conversations with a known emotion/cause structure.

Gold pairs follow configurable signed cause offsets (cause_id = emotion_id +
offset); the default offset 0 (self-cause) keeps every stage learnable by
per-utterance models, which is what the end-to-end recovery checks rely on.
"""

from __future__ import annotations

import numpy as np

from .corpus import (
    NON_NEUTRAL_EMOTIONS,
    Conversation,
    Dataset,
    Emotion,
    EmotionCausePair,
    Utterance,
    validate_dataset,
)


def synthetic_conversations(
    n_conversations: int,
    seed: int,
    min_length: int = 5,
    max_length: int = 15,
    neutral_prob: float = 0.5,
    cause_offsets: tuple[int, ...] = (0,),
) -> Dataset:
    """Random labeled conversations, ~10 utterances each by default."""
    rng = np.random.default_rng(seed)
    conversations = []
    for cid in range(1, n_conversations + 1):
        length = int(rng.integers(min_length, max_length + 1))
        utterances = []
        pairs = []
        for uid in range(1, length + 1):
            if rng.random() < neutral_prob:
                emotion = Emotion.NEUTRAL
            else:
                emotion = NON_NEUTRAL_EMOTIONS[rng.integers(len(NON_NEUTRAL_EMOTIONS))]
            utterances.append(
                Utterance(
                    utterance_id=uid,
                    speaker="A" if uid % 2 else "B",
                    transcript=f"synthetic utterance {uid} of conversation {cid}",
                    gold_emotion=emotion,
                )
            )
            if emotion is not Emotion.NEUTRAL:
                for offset in cause_offsets:
                    cause_id = uid + offset
                    if 1 <= cause_id <= length:
                        pairs.append(EmotionCausePair(uid, emotion, cause_id))
        conversations.append(
            Conversation(
                conversation_id=cid,
                utterances=tuple(utterances),
                gold_pairs=tuple(pairs),
            )
        )
    dataset = Dataset(conversations=tuple(conversations), split_tag="train")
    validate_dataset(dataset)
    return dataset
