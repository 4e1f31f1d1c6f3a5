"""Few-shot task sampling and cross-lingual adaptation.

A k-shot task holds k training utterances (shots) and q held-out queries from
one language, constructed so that every phoneme occurring in the queries also
occurs in the shots. Adaptation initializes the language's embedding table
either from the trained codebook attention (generated from the shots) or at
random, then fine-tunes the table and decoder on the shots; the codebook is
not used or updated during fine-tuning. Both modes see identical shots and
queries for a given task seed, so comparisons are paired.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .codebook import CodebookParams, EmbeddingTable, forward, xavier_bound
from .datamodel import Corpus, LanguagePhonemeSet, Utterance
from .decoder import DecoderParams, build_frame_bundle, loss_and_grads
from .errors import ConfigError, TaskError, VocabularyError
from .optim import adam_step, init_adam
from .queries import aggregate_queries

MODES = ("codebook_init", "random_init")


@dataclass(frozen=True)
class TaskSpec:
    language: str
    k: int
    q: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.q < 1:
            raise ConfigError(f"task needs k >= 1 and q >= 1, got k={self.k}, q={self.q}")


@dataclass
class FewShotTask:
    shots: list[Utterance]
    queries: list[Utterance]
    language: str


@dataclass(frozen=True)
class AdaptConfig:
    finetune_steps: int = 500
    lr: float = 0.001  # constant during fine-tuning
    eval_checkpoints: tuple[int, ...] = (0, 50, 200, 500)
    mode: str = "codebook_init"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.finetune_steps < 0 or self.lr <= 0:
            raise ConfigError("finetune_steps must be >= 0 and lr > 0")
        cps = self.eval_checkpoints
        if list(cps) != sorted(cps) or (cps and cps[-1] > self.finetune_steps):
            raise ConfigError(
                f"eval_checkpoints must be sorted and <= finetune_steps, got {cps}"
            )


def sample_task(corpus: Corpus, spec: TaskSpec, limit: int = 100) -> FewShotTask:
    """Rejection-sample (shots, queries) until query phonemes are covered by shots.

    Deterministic under spec.seed. Raises TaskError naming the uncovered
    phonemes when no covering draw is found within `limit` attempts.
    """
    pool = corpus.by_language(spec.language)
    if len(pool) < spec.k + spec.q:
        raise TaskError(
            f"language {spec.language!r} has {len(pool)} utterances, "
            f"need k+q = {spec.k + spec.q}"
        )
    rng = np.random.default_rng(spec.seed)
    symbols = [u.phoneme_symbols() for u in pool]
    uncovered: set[str] = set()
    for _ in range(limit):
        idx = rng.choice(len(pool), size=spec.k + spec.q, replace=False)
        shot_idx, query_idx = idx[: spec.k], idx[spec.k :]
        shot_syms = frozenset().union(*(symbols[i] for i in shot_idx))
        query_syms = frozenset().union(*(symbols[i] for i in query_idx))
        if query_syms <= shot_syms:
            return FewShotTask(
                [pool[i] for i in shot_idx], [pool[i] for i in query_idx], spec.language
            )
        uncovered = set(query_syms - shot_syms)
    raise TaskError(
        f"no covering (shots, queries) draw for {spec.language!r} k={spec.k} within "
        f"{limit} attempts; last uncovered phonemes: {sorted(uncovered)}"
    )


def init_embedding(
    mode: str,
    params: CodebookParams | None,
    shots: list[Utterance],
    phoneme_set: LanguagePhonemeSet,
    rng: np.random.Generator,
) -> EmbeddingTable:
    """Initial embedding table for adaptation.

    codebook_init runs the shots' phoneme queries through the trained codebook
    attention; random_init draws Xavier-uniform rows. Both are deterministic
    given their inputs (rng is consumed only by random_init).
    """
    if mode == "codebook_init":
        if params is None:
            raise ValueError("codebook_init requires trained codebook parameters")
        qm = aggregate_queries(shots, phoneme_set)
        table, _ = forward(params, qm)
        return table
    if mode == "random_init":
        embed_dim = params.config.embed_dim if params is not None else 256
        m = phoneme_set.size
        bound = xavier_bound(m, embed_dim)
        matrix = rng.uniform(-bound, bound, (m, embed_dim)).astype(np.float32)
        return EmbeddingTable(matrix, phoneme_set.language, phoneme_set.phonemes)
    raise ValueError(f"unknown init mode {mode!r}")


@dataclass
class FinetunePoint:
    step: int
    table: EmbeddingTable
    decoder: DecoderParams
    train_loss: float


def finetune(
    table: EmbeddingTable,
    decoder: DecoderParams,
    shots: list[Utterance],
    config: AdaptConfig,
) -> list[FinetunePoint]:
    """Adam on (table rows, decoder) minimizing shot reconstruction error.

    Returns deep-copied snapshots at config.eval_checkpoints; the inputs are
    not mutated. train_loss at step s is the loss after s updates.
    """
    table = table.copy()
    decoder = decoder.copy()
    bundle = build_frame_bundle(shots, table)
    params = {"table": table.matrix, "w_d": decoder.w_d, "b_d": decoder.b_d}
    opt = init_adam(params)
    wanted = set(config.eval_checkpoints)
    points: list[FinetunePoint] = []
    loss, dec_grads, d_table = loss_and_grads(decoder, table, bundle)
    if 0 in wanted:
        points.append(FinetunePoint(0, table.copy(), decoder.copy(), loss))
    for step in range(1, config.finetune_steps + 1):
        adam_step(
            opt,
            params,
            {"table": d_table, "w_d": dec_grads.w_d, "b_d": dec_grads.b_d},
            config.lr,
        )
        loss, dec_grads, d_table = loss_and_grads(decoder, table, bundle)
        if step in wanted:
            points.append(FinetunePoint(step, table.copy(), decoder.copy(), loss))
    return points


@dataclass
class EvalResult:
    per_utterance: list[float]
    mean_mse: float


def evaluate(
    table: EmbeddingTable, decoder: DecoderParams, queries: list[Utterance]
) -> EvalResult:
    """Frame reconstruction MSE over query utterances.

    mean_mse averages over all covered frames of all queries; the
    per-utterance breakdown supports task-level reporting. Permutation
    invariant over query order up to float summation order.
    """
    if not queries:
        raise ValueError("evaluate requires at least one query utterance")
    per_row = table.matrix @ decoder.w_d + decoder.b_d
    per_utt = []
    total_sq = 0.0
    total_frames = 0
    dim = queries[0].features.shape[1]
    for utt in queries:
        bundle = build_frame_bundle([utt], table)
        sq, _ = kernels.frame_residual_stats(bundle.frames, bundle.rows, per_row)
        per_utt.append(sq / (bundle.n_frames * dim))
        total_sq += sq
        total_frames += bundle.n_frames
    return EvalResult(per_utt, total_sq / (total_frames * dim))


def _init_rng_for_task(task_seed: int) -> np.random.Generator:
    # Independent stream from the task-sampling one; shared across modes so the
    # comparison stays paired.
    return np.random.default_rng(np.random.SeedSequence((task_seed, 1)))


def adapt_task(
    corpus: Corpus,
    params: CodebookParams,
    decoder: DecoderParams,
    spec: TaskSpec,
    mode: str,
    config: AdaptConfig,
) -> list[dict]:
    """Run one task end to end; returns [{step, mean_mse}] per eval checkpoint."""
    task = sample_task(corpus, spec)
    phoneme_set = corpus.phoneme_set(spec.language)
    table0 = init_embedding(mode, params, task.shots, phoneme_set, _init_rng_for_task(spec.seed))
    points = finetune(table0, decoder, task.shots, config)
    return [
        {"step": p.step, "mean_mse": evaluate(p.table, p.decoder, task.queries).mean_mse}
        for p in points
    ]


def run_experiment(
    corpus: Corpus,
    params: CodebookParams,
    decoder: DecoderParams,
    language: str,
    ks: list[int],
    n_tasks: int,
    config: AdaptConfig,
    q: int = 64,
    base_seed: int = 0,
    modes: tuple[str, ...] = MODES,
) -> list[dict]:
    """Paired adaptation grid: one report cell per (k, mode).

    Task seeds are base_seed + task index, shared across modes, so both modes
    see identical shots and queries. Cell mean/std summarize the final
    checkpoint's per-task MSE (population std).
    """
    if language not in corpus.language_ids:
        raise VocabularyError(f"language {language!r} is not defined in the manifest")
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    frozen = (params.w_q.copy(), params.keys.copy(), params.codes.copy())
    cells = []
    for k in ks:
        for mode in modes:
            tasks_out = []
            for t in range(n_tasks):
                spec = TaskSpec(language, k, q, base_seed + t)
                checkpoints = adapt_task(corpus, params, decoder, spec, mode, config)
                tasks_out.append({"task_seed": spec.seed, "checkpoints": checkpoints})
            final = [t["checkpoints"][-1]["mean_mse"] for t in tasks_out]
            cells.append(
                {
                    "language": language,
                    "k": k,
                    "mode": mode,
                    "tasks": tasks_out,
                    "mean": float(np.mean(final)),
                    "std": float(np.std(final)),
                }
            )
    if not (
        np.array_equal(frozen[0], params.w_q)
        and np.array_equal(frozen[1], params.keys)
        and np.array_equal(frozen[2], params.codes)
    ):
        raise AssertionError("codebook parameters changed during adaptation")
    return cells


def write_report_json(cells: list[dict], path) -> None:
    Path(path).write_text(json.dumps(cells, indent=2) + "\n", encoding="utf-8")


def write_report_tsv(cells: list[dict], path) -> None:
    lines = ["# language\tk\tmode\tmean\tstd"]
    for cell in cells:
        lines.append(
            f"{cell['language']}\t{cell['k']}\t{cell['mode']}\t{cell['mean']!r}\t{cell['std']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
