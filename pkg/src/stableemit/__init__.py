"""Streaming monotonic chunkwise attention with emission-latency control.

Training-time selection-probability discounting, alignment regularizers
(quantity, path-masking, expected-latency), CTC multi-task training and
Viterbi boundary extraction, a threshold-based streaming decoder, and a
token-emission-latency measurement harness on synthetic corpora.
"""

__version__ = "0.1.0"

VERSION_STRING = f"stableemit-{__version__}"
