"""Early (concatenation) and tensor (outer-product) fusion of modality embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .errors import ArgumentError, DimensionError, UnsupportedArityError

MODALITIES = ("audio", "video", "text")
MAX_ARITY = 3


@dataclass
class FusedVector:
    values: nd.Tensor
    arity: int
    source_dims: list

    def __len__(self):
        return self.values.shape[-1]


def _check_parts(embeddings):
    parts = [nd.as_tensor(e) for e in embeddings]
    if not parts:
        raise ArgumentError("fusion needs at least one embedding")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.ndim == 0 or p.shape[:-1] != lead:
            raise DimensionError(f"embedding shapes disagree: {[q.shape for q in parts]}")
    return parts, lead


def tensor_fuse(embeddings) -> FusedVector:
    """Outer product of the embeddings, each extended with a trailing 1.

    The result is flattened row-major, so the first embedding's index varies
    slowest.  A leading batch axis is allowed and shared by all inputs.

    >>> tensor_fuse([[2.0], [3.0], [5.0]]).values.data.tolist()
    [30.0, 6.0, 10.0, 2.0, 15.0, 3.0, 5.0, 1.0]
    """
    parts, lead = _check_parts(embeddings)
    k = len(parts)
    if k > MAX_ARITY:
        raise UnsupportedArityError(f"tensor fusion supports 1 to {MAX_ARITY} modalities, got {k}")
    dims = [p.shape[-1] for p in parts]
    if min(dims) < 1:
        raise DimensionError(f"tensor fusion needs non-empty embeddings, got sizes {dims}")
    one = nd.Tensor(np.ones(lead + (1,)))
    out = None
    for i, p in enumerate(parts):
        ext = nd.concat([p, one], axis=-1)
        shape = lead + (1,) * i + (dims[i] + 1,) + (1,) * (k - 1 - i)
        ext = nd.reshape(ext, shape)
        out = ext if out is None else out * ext
    values = nd.reshape(out, lead + (fused_dim(dims, "tensor"),))
    return FusedVector(values, k, dims)


def early_fuse(embeddings) -> FusedVector:
    """Concatenate the embeddings in the given (modality) order."""
    parts, _ = _check_parts(embeddings)
    dims = [p.shape[-1] for p in parts]
    return FusedVector(nd.concat(parts, axis=-1), len(parts), dims)


def fused_dim(source_dims, mode: str = "tensor") -> int:
    """Size of the fused vector: prod(d + 1) for tensor fusion, sum(d) for early."""
    if mode == "tensor":
        return math.prod(int(d) + 1 for d in source_dims)
    if mode == "early":
        return sum(int(d) for d in source_dims)
    raise ArgumentError(f"unknown fusion mode {mode!r}")


def all_segment_fused_dim(source_dims, n_segments: int) -> int:
    """Size of a single tensor fusion taken over every modality of every segment.

    This is the alternative to per-segment fusion; it grows exponentially in
    the number of segments, e.g. 8-dim embeddings for 3 modalities over
    10 segments give 9**30 coordinates.
    """
    return fused_dim(list(source_dims) * n_segments, "tensor")
