"""Multiple product name recognition: datagen, training and inference."""

from ._mpner import (
    Model,
    bilou_decode,
    bilou_encode,
    generate,
    log_partition,
    run,
    tokenize,
    train,
    viterbi,
)

__all__ = [
    "Model",
    "bilou_decode",
    "bilou_encode",
    "generate",
    "log_partition",
    "run",
    "tokenize",
    "train",
    "viterbi",
]
