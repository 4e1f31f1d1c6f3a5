"""Codebook attention module.

Multi-head scaled dot-product attention with learnable Keys and Codes: the
Keys capture patterns in phoneme queries, the Codes form a shared embedding
basis, and the per-language embedding table is the concatenation of head
outputs. Queries are projected without bias, so an all-zero query row (an
absent phoneme) yields exactly uniform attention and lands on the head-wise
mean code, a neutral but well-defined embedding.

Includes exact analytic gradients (with the full softmax Jacobian term) for
the scalar objective <upstream, embedding>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, NumericError
from .queries import QueryMatrix
from .tensorio import (
    read_header,
    read_tensor,
    read_u32s,
    write_header,
    write_tensor,
    write_u32s,
)

CODEBOOK_MAGIC = b"XPCB"
CODEBOOK_VERSION = 1


@dataclass(frozen=True)
class CodebookConfig:
    n: int = 128  # codebook size
    heads: int = 4
    d_k: int = 64
    d_v: int = 64
    dim: int = 16  # input query dimensionality

    def __post_init__(self):
        for name in ("n", "heads", "d_k", "d_v", "dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"codebook config: {name} must be >= 1")

    @property
    def embed_dim(self) -> int:
        return self.heads * self.d_v


@dataclass
class CodebookParams:
    config: CodebookConfig
    w_q: np.ndarray  # (H, dim, d_k) per-head query projections, no bias
    keys: np.ndarray  # (H, n, d_k)
    codes: np.ndarray  # (H, n, d_v)

    def copy(self) -> "CodebookParams":
        return CodebookParams(self.config, self.w_q.copy(), self.keys.copy(), self.codes.copy())

    def astype(self, dtype) -> "CodebookParams":
        return CodebookParams(
            self.config,
            self.w_q.astype(dtype),
            self.keys.astype(dtype),
            self.codes.astype(dtype),
        )


@dataclass
class CodebookGrads:
    w_q: np.ndarray
    keys: np.ndarray
    codes: np.ndarray


@dataclass
class EmbeddingTable:
    matrix: np.ndarray  # (m, heads * d_v), rows in canonical phoneme order
    language: str
    phonemes: tuple[str, ...]

    def row(self, phoneme: str) -> np.ndarray:
        return self.matrix[self.phonemes.index(phoneme)]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.matrix.copy(), self.language, self.phonemes)


@dataclass
class AttentionRecord:
    weights: np.ndarray  # (H, m, n); each row is a probability distribution


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: CodebookConfig, seed, dtype=np.float32) -> CodebookParams:
    """Xavier-uniform initialization; deterministic under seed.

    seed may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    h, n, d_k, d_v, dim = config.heads, config.n, config.d_k, config.d_v, config.dim
    w_q = rng.uniform(-xavier_bound(dim, d_k), xavier_bound(dim, d_k), (h, dim, d_k))
    keys = rng.uniform(-xavier_bound(n, d_k), xavier_bound(n, d_k), (h, n, d_k))
    codes = rng.uniform(-xavier_bound(n, d_v), xavier_bound(n, d_v), (h, n, d_v))
    return CodebookParams(config, w_q.astype(dtype), keys.astype(dtype), codes.astype(dtype))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row softmax with max subtraction; softmax(x + c) == softmax(x) per row."""
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward(
    params: CodebookParams, queries: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Core forward on a raw (m, dim) query matrix.

    Returns (embedding (m, H*d_v), weights (H, m, n)). Per head:
    weights = softmax(Q W_q Keys^T / sqrt(d_k)), output = weights @ Codes.
    """
    cfg = params.config
    q = np.asarray(queries)
    if q.ndim != 2 or q.shape[1] != cfg.dim:
        raise ValueError(f"queries must be (m, {cfg.dim}), got {q.shape}")
    m = q.shape[0]
    scale = 1.0 / math.sqrt(cfg.d_k)
    out_dtype = np.result_type(q.dtype, params.w_q.dtype)
    weights = np.empty((cfg.heads, m, cfg.n), dtype=out_dtype)
    embedding = np.empty((m, cfg.embed_dim), dtype=out_dtype)
    for h in range(cfg.heads):
        projected = q @ params.w_q[h]
        logits = (projected @ params.keys[h].T) * scale
        w = softmax_rows(logits)
        weights[h] = w
        embedding[:, h * cfg.d_v : (h + 1) * cfg.d_v] = w @ params.codes[h]
    if not np.all(np.isfinite(embedding)) or not np.all(np.isfinite(weights)):
        raise NumericError("non-finite values in attention forward")
    return embedding, weights


def attention_backward(
    params: CodebookParams, queries: np.ndarray, upstream: np.ndarray
) -> tuple[CodebookGrads, np.ndarray]:
    """Exact gradients of <upstream, embedding> w.r.t. parameters and queries.

    upstream has the embedding's shape (m, H*d_v). Recomputes the forward
    intermediates per head; gradients accumulate in fixed head order.
    """
    cfg = params.config
    q = np.asarray(queries)
    if q.ndim != 2 or q.shape[1] != cfg.dim:
        raise ValueError(f"queries must be (m, {cfg.dim}), got {q.shape}")
    if upstream.shape != (q.shape[0], cfg.embed_dim):
        raise ValueError(
            f"upstream must be {(q.shape[0], cfg.embed_dim)}, got {upstream.shape}"
        )
    scale = 1.0 / math.sqrt(cfg.d_k)
    d_wq = np.zeros_like(params.w_q)
    d_keys = np.zeros_like(params.keys)
    d_codes = np.zeros_like(params.codes)
    d_q = np.zeros_like(q)
    for h in range(cfg.heads):
        projected = q @ params.w_q[h]
        logits = (projected @ params.keys[h].T) * scale
        w = softmax_rows(logits)
        g_out = upstream[:, h * cfg.d_v : (h + 1) * cfg.d_v]
        d_codes[h] = w.T @ g_out
        d_w = g_out @ params.codes[h].T
        # softmax Jacobian: dL/dz = w * (dL/dw - sum_j dL/dw_j * w_j)
        d_logits = w * (d_w - (d_w * w).sum(axis=1, keepdims=True))
        d_scores = d_logits * scale
        d_proj = d_scores @ params.keys[h]
        d_keys[h] = d_scores.T @ projected
        d_wq[h] = q.T @ d_proj
        d_q += d_proj @ params.w_q[h].T
    return CodebookGrads(d_wq, d_keys, d_codes), d_q


def forward(
    params: CodebookParams, queries: QueryMatrix
) -> tuple[EmbeddingTable, AttentionRecord]:
    """Generate the phoneme embedding table for one language's queries."""
    embedding, weights = attention_forward(params, queries.matrix)
    return (
        EmbeddingTable(embedding, queries.language, queries.phonemes),
        AttentionRecord(weights),
    )


def backward(
    params: CodebookParams, queries, upstream: np.ndarray
) -> tuple[CodebookGrads, np.ndarray]:
    """Like attention_backward; accepts a QueryMatrix or a raw matrix."""
    q = queries.matrix if isinstance(queries, QueryMatrix) else queries
    return attention_backward(params, q, upstream)


def save_codebook(params: CodebookParams, path) -> None:
    cfg = params.config
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        write_header(f, CODEBOOK_MAGIC, CODEBOOK_VERSION)
        write_u32s(f, cfg.n, cfg.heads, cfg.d_k, cfg.d_v, cfg.dim)
        for h in range(cfg.heads):
            write_tensor(f, params.w_q[h])
            write_tensor(f, params.keys[h])
            write_tensor(f, params.codes[h])
    tmp.replace(path)


def load_codebook(path) -> CodebookParams:
    with open(path, "rb") as f:
        version = read_header(f, CODEBOOK_MAGIC, str(path))
        if version != CODEBOOK_VERSION:
            raise FormatError(f"unsupported codebook checkpoint version {version} in {path}")
        n, heads, d_k, d_v, dim = read_u32s(f, 5, str(path))
        cfg = CodebookConfig(n=n, heads=heads, d_k=d_k, d_v=d_v, dim=dim)
        w_q = np.empty((heads, dim, d_k), dtype=np.float32)
        keys = np.empty((heads, n, d_k), dtype=np.float32)
        codes = np.empty((heads, n, d_v), dtype=np.float32)
        for h in range(heads):
            for name, dest, shape in (
                ("w_q", w_q, (dim, d_k)),
                ("keys", keys, (n, d_k)),
                ("codes", codes, (n, d_v)),
            ):
                t = read_tensor(f, str(path))
                if t.shape != shape:
                    raise FormatError(
                        f"{path}: tensor {name}[{h}] has shape {t.shape}, expected {shape}"
                    )
                dest[h] = t
    return CodebookParams(cfg, w_q, keys, codes)
