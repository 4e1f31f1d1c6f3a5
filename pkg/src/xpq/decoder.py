"""Linear frame reconstructor providing the training signal.

Every frame aligned to phoneme p is predicted as table.row(p) @ W + b, so the
prediction is constant within a phoneme. The loss is the mean squared error
over all covered frames and dimensions; frames outside any segment are
excluded from predictions and loss. Gradients are exact and flow back into
the embedding table (and from there into the codebook attention).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .codebook import EmbeddingTable, xavier_bound
from .datamodel import LanguagePhonemeSet, Utterance
from .errors import FormatError
from .tensorio import read_header, read_tensor, write_header, write_tensor

DECODER_MAGIC = b"XPDC"
DECODER_VERSION = 1


@dataclass
class DecoderParams:
    w_d: np.ndarray  # (embed_dim, dim)
    b_d: np.ndarray  # (dim,)

    def copy(self) -> "DecoderParams":
        return DecoderParams(self.w_d.copy(), self.b_d.copy())

    def astype(self, dtype) -> "DecoderParams":
        return DecoderParams(self.w_d.astype(dtype), self.b_d.astype(dtype))


@dataclass
class DecoderGrads:
    w_d: np.ndarray
    b_d: np.ndarray


def init_decoder(embed_dim: int, dim: int, seed, dtype=np.float32) -> DecoderParams:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = xavier_bound(embed_dim, dim)
    w_d = rng.uniform(-bound, bound, (embed_dim, dim)).astype(dtype)
    return DecoderParams(w_d, np.zeros(dim, dtype=dtype))


@dataclass
class FrameBundle:
    """Covered frames of one or more utterances, flattened for the loss kernel.

    frames[i] is a frame inside some segment; rows[i] is the embedding-table
    row of that segment's phoneme. Order is utterance order, then segment
    order, then frame order, so reductions are deterministic.
    """

    frames: np.ndarray  # (N, dim)
    rows: np.ndarray  # (N,) int64

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def build_frame_bundle(utterances, phoneme_index) -> FrameBundle:
    """Concatenate covered frames with their table-row indices.

    phoneme_index may be a LanguagePhonemeSet or an EmbeddingTable; rows follow
    its canonical phoneme order.
    """
    if isinstance(phoneme_index, EmbeddingTable):
        phoneme_index = LanguagePhonemeSet(phoneme_index.language, phoneme_index.phonemes)
    chunks = []
    rows = []
    for utt in utterances:
        for seg in utt.alignment:
            chunks.append(utt.features[seg.start_frame : seg.end_frame])
            rows.append(np.full(seg.n_frames, phoneme_index.index(seg.phoneme), dtype=np.int64))
    if not chunks:
        raise ValueError("no covered frames: utterance list is empty or has no segments")
    return FrameBundle(np.concatenate(chunks, axis=0), np.concatenate(rows))


def predict_frames(
    decoder: DecoderParams, table: EmbeddingTable, utterance: Utterance
) -> np.ndarray:
    """Predicted frames for every covered frame of the utterance, in order."""
    if utterance.language != table.language:
        raise ValueError(
            f"utterance language {utterance.language!r} != table language {table.language!r}"
        )
    bundle = build_frame_bundle([utterance], table)
    per_row = table.matrix @ decoder.w_d + decoder.b_d
    return per_row[bundle.rows]


def loss_and_grads(
    decoder: DecoderParams, table: EmbeddingTable, data
) -> tuple[float, DecoderGrads, np.ndarray]:
    """MSE over covered frames plus exact gradients.

    data may be a FrameBundle or a sequence of Utterances. Returns
    (loss, decoder grads, table-row gradient (m, embed_dim)); gradient arrays
    are in the table's dtype. The table-row gradient chains into the codebook
    backward pass.
    """
    bundle = data if isinstance(data, FrameBundle) else build_frame_bundle(data, table)
    if bundle.n_frames == 0:
        raise ValueError("loss over zero covered frames is undefined")
    per_row = table.matrix @ decoder.w_d + decoder.b_d  # (m, dim)
    sq, gsum = kernels.frame_residual_stats(bundle.frames, bundle.rows, per_row)
    denom = bundle.n_frames * bundle.frames.shape[1]
    loss = sq / denom
    d_pred = ((2.0 / denom) * gsum).astype(table.matrix.dtype)  # (m, dim)
    d_w = table.matrix.T @ d_pred
    d_b = d_pred.sum(axis=0)
    d_table = d_pred @ decoder.w_d.T
    return float(loss), DecoderGrads(d_w, d_b), d_table


def save_decoder(decoder: DecoderParams, path) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        write_header(f, DECODER_MAGIC, DECODER_VERSION)
        write_tensor(f, decoder.w_d)
        write_tensor(f, decoder.b_d)
    tmp.replace(path)


def load_decoder(path) -> DecoderParams:
    with open(path, "rb") as f:
        version = read_header(f, DECODER_MAGIC, str(path))
        if version != DECODER_VERSION:
            raise FormatError(f"unsupported decoder checkpoint version {version} in {path}")
        w_d = read_tensor(f, str(path))
        b_d = read_tensor(f, str(path)).reshape(-1)
    return DecoderParams(w_d, b_d)
