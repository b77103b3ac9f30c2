"""Toy-model fitness oracle speaking the line protocol on standard streams."""

from .model import VOCAB, ToyModel, batch_tokens
from .serve import PROTOCOL_VERSION, serve

__all__ = ["VOCAB", "ToyModel", "batch_tokens", "PROTOCOL_VERSION", "serve"]
