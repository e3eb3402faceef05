"""Multimodal emotion-cause pair extraction baselines.

Three independently trained stages (per-utterance emotion classification,
candidate-cause detection, and emotion-cause pairing) in dense, BiLSTM and
BiLSTM-CRF variants, operating on pluggable per-modality utterance embeddings.
"""

__version__ = "0.1.0"
