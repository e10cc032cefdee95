"""Self-supervised speaker embedding toolkit.

Trains speaker embeddings from unlabeled audio with an angular prototypical
objective plus a stop-gradient Siamese regularizer, using online waveform
augmentation, and scores verification trials with EER/minDCF.
"""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
SEGMENT_SECONDS = 1.95
