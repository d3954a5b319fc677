"""Self-supervised pre-training for multivariate time series.

Pipeline: window-slice raw series into sub-series, embed them with a
shared 1-D convolution, randomly mask a high fraction of positions, encode
visible positions with a self-attention stack and masked positions with a
cross-attention stack, and train against two targets — discrete codewords
from an end-to-end tokenizer and continuous representations from a
momentum-averaged target encoder. Downstream classification runs as a
frozen-encoder linear probe or full fine-tuning.
"""

__version__ = "0.1.0"
