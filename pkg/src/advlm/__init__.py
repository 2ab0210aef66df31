"""Word-level LSTM language modeling with adversarial softmax regularization."""

__version__ = "0.1.0"
