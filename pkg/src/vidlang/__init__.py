"""Desk-scale video-language transformer with discrete visual-token pretraining.

Synthetic moving-shape corpora, a trainable vector-quantized frame tokenizer,
a windowed spatio-temporal video encoder, cross-modal fusion, the three
pretraining objectives (masked language modeling, visual-text matching,
masked visual-token modeling) with blockwise/attended masking, and the
downstream retrieval / QA heads and metrics.
"""

__version__ = "0.1.0"
