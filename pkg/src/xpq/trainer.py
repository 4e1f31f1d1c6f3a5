"""Episodic multilingual training.

Each step draws 40 utterances from a single language, splits them into an
embedding-generation group (32) and a loss group (8) such that every phoneme
occurring on the loss side also occurs on the generation side, generates the
language's embedding table through the codebook attention, computes the frame
reconstruction loss on the loss group, and applies one Adam update to the
codebook and decoder parameters under a warmup-then-decay schedule.

Checkpoints are a directory of codebook.bin, decoder.bin, optim.bin and
meta.json; a resumed run is bitwise identical to an uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .codebook import (
    CodebookConfig,
    CodebookParams,
    forward,
    attention_backward,
    init_params,
    load_codebook,
    save_codebook,
)
from .datamodel import Corpus, Utterance
from .decoder import (
    DecoderParams,
    FrameBundle,
    init_decoder,
    load_decoder,
    loss_and_grads,
    save_decoder,
)
from .errors import ConfigError, CoverageError, FormatError
from .optim import AdamState, adam_step, init_adam, scheduled_lr
from .queries import aggregate_from_matrices, phoneme_rep_matrix

OPTIM_MAGIC = b"XPOP"
OPTIM_VERSION = 1
META_VERSION = 1
PARAM_ORDER = ("w_q", "keys", "codes", "w_d", "b_d")

# How many fresh batches to draw when a batch admits no coverage-valid split.
_BATCH_RESAMPLE_LIMIT = 20


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 40
    gen_group_size: int = 32
    loss_group_size: int = 8
    lr: float = 0.001
    warmup_steps: int = 200  # full-scale runs use 4000
    total_steps: int = 2000  # full-scale runs use 50000
    decay_rate: float = 0.999  # per step after warmup
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    seed: int = 0
    coverage_resample_limit: int = 100
    checkpoint_every: int = 0  # 0: checkpoint only at the end

    def __post_init__(self):
        if self.gen_group_size + self.loss_group_size != self.batch_size:
            raise ConfigError(
                f"gen_group_size + loss_group_size must equal batch_size "
                f"({self.gen_group_size} + {self.loss_group_size} != {self.batch_size})"
            )
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay_rate must be in (0, 1]")
        if self.total_steps < 1 or self.warmup_steps < 0:
            raise ConfigError("total_steps must be >= 1 and warmup_steps >= 0")


class CorpusCaches:
    """Per-utterance derived data reused across steps.

    Representations and bundles are pure functions of the immutable
    utterances, so caching cannot change results.
    """

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self._reps: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._bundles: dict[str, FrameBundle] = {}
        self._symbols: dict[str, frozenset[str]] = {}

    def reps(self, utt: Utterance) -> tuple[np.ndarray, np.ndarray]:
        out = self._reps.get(utt.id)
        if out is None:
            out = phoneme_rep_matrix(utt, self.corpus.phoneme_set(utt.language))
            self._reps[utt.id] = out
        return out

    def bundle(self, utt: Utterance) -> FrameBundle:
        out = self._bundles.get(utt.id)
        if out is None:
            from .decoder import build_frame_bundle

            out = build_frame_bundle([utt], self.corpus.phoneme_set(utt.language))
            self._bundles[utt.id] = out
        return out

    def symbols(self, utt: Utterance) -> frozenset[str]:
        out = self._symbols.get(utt.id)
        if out is None:
            out = utt.phoneme_symbols()
            self._symbols[utt.id] = out
        return out

    def batch_bundle(self, utterances) -> FrameBundle:
        parts = [self.bundle(u) for u in utterances]
        return FrameBundle(
            np.concatenate([p.frames for p in parts], axis=0),
            np.concatenate([p.rows for p in parts]),
        )


def sample_language_batch(
    corpus: Corpus, batch_size: int, rng: np.random.Generator
) -> list[Utterance]:
    """Uniformly pick an eligible language, then sample a batch without replacement.

    Eligible languages have at least batch_size train-split utterances.
    """
    eligible = [
        lang
        for lang in corpus.language_ids
        if len(corpus.by_language(lang, "train")) >= batch_size
    ]
    if not eligible:
        raise ConfigError(
            f"no language has {batch_size} train-split utterances; cannot form batches"
        )
    language = eligible[int(rng.integers(len(eligible)))]
    pool = corpus.by_language(language, "train")
    idx = rng.choice(len(pool), size=batch_size, replace=False)
    return [pool[i] for i in idx]


def split_with_coverage(
    batch: list[Utterance],
    rng: np.random.Generator,
    gen_size: int,
    loss_size: int,
    limit: int = 100,
    symbols_fn=None,
) -> tuple[list[Utterance], list[Utterance]]:
    """Split a batch so every loss-group phoneme occurs in the generation group.

    Rejection-samples up to `limit` splits, then falls back to a greedy split
    that forces a bearer of each phoneme (rarest first) into the generation
    group and fills the remainder randomly. Raises CoverageError when no valid
    split exists.
    """
    if len(batch) != gen_size + loss_size:
        raise ValueError(f"batch size {len(batch)} != {gen_size} + {loss_size}")
    syms = [symbols_fn(u) if symbols_fn else u.phoneme_symbols() for u in batch]

    def split_ok(gen_idx, loss_idx):
        gen_set: set[str] = set()
        for i in gen_idx:
            gen_set |= syms[i]
        return all(syms[i] <= gen_set for i in loss_idx)

    for _ in range(limit):
        perm = rng.permutation(len(batch))
        gen_idx, loss_idx = perm[:gen_size], perm[gen_size:]
        if split_ok(gen_idx, loss_idx):
            return [batch[i] for i in gen_idx], [batch[i] for i in loss_idx]

    counts: dict[str, int] = {}
    for s in syms:
        for ph in s:
            counts[ph] = counts.get(ph, 0) + 1
    forced: list[int] = []
    in_forced: set[int] = set()
    covered: set[str] = set()
    for ph in sorted(counts, key=lambda p: (counts[p], p)):
        if ph in covered or len(forced) == gen_size:
            continue
        bearer = next(i for i in range(len(batch)) if ph in syms[i] and i not in in_forced)
        forced.append(bearer)
        in_forced.add(bearer)
        covered |= syms[bearer]
    rest = [i for i in range(len(batch)) if i not in in_forced]
    fill_order = rng.permutation(len(rest))
    fill = [rest[j] for j in fill_order]
    gen_idx = forced + fill[: gen_size - len(forced)]
    loss_idx = fill[gen_size - len(forced) :]
    if split_ok(gen_idx, loss_idx):
        return [batch[i] for i in gen_idx], [batch[i] for i in loss_idx]
    gen_set: set[str] = set()
    for i in gen_idx:
        gen_set |= syms[i]
    uncovered = sorted(set().union(*(syms[i] for i in loss_idx)) - gen_set)
    raise CoverageError(
        f"no coverage-valid split exists for this batch; uncovered phonemes: {uncovered}"
    )


@dataclass
class TrainState:
    params: CodebookParams
    decoder: DecoderParams
    opt: AdamState
    rng: np.random.Generator

    @property
    def step(self) -> int:
        return self.opt.step


def param_dict(params: CodebookParams, decoder: DecoderParams) -> dict[str, np.ndarray]:
    return {
        "w_q": params.w_q,
        "keys": params.keys,
        "codes": params.codes,
        "w_d": decoder.w_d,
        "b_d": decoder.b_d,
    }


def init_train_state(
    corpus: Corpus, config: TrainConfig, cb_config: CodebookConfig
) -> TrainState:
    if cb_config.dim != corpus.feature_spec.dim:
        raise ConfigError(
            f"codebook dim {cb_config.dim} != corpus feature dim {corpus.feature_spec.dim}"
        )
    params = init_params(cb_config, config.seed)
    decoder = init_decoder(cb_config.embed_dim, cb_config.dim, config.seed + 1)
    opt = init_adam(param_dict(params, decoder))
    return TrainState(params, decoder, opt, np.random.default_rng(config.seed + 2))


def train_step(
    state: TrainState, batch: list[Utterance], caches: CorpusCaches, config: TrainConfig
) -> tuple[float, float]:
    """One update: split batch, generate table, loss on the other group, Adam.

    Returns (loss, lr). Raises CoverageError if the batch admits no valid
    split; the caller resamples the batch in that case.
    """
    language = batch[0].language
    phoneme_set = caches.corpus.phoneme_set(language)
    gen_group, loss_group = split_with_coverage(
        batch,
        state.rng,
        config.gen_group_size,
        config.loss_group_size,
        config.coverage_resample_limit,
        symbols_fn=caches.symbols,
    )
    gen_syms = frozenset().union(*(caches.symbols(u) for u in gen_group))
    loss_syms = frozenset().union(*(caches.symbols(u) for u in loss_group))
    if not loss_syms <= gen_syms:
        raise AssertionError("coverage condition violated after split")

    dtype = gen_group[0].features.dtype
    qm = aggregate_from_matrices([caches.reps(u) for u in gen_group], phoneme_set, dtype)
    table, _ = forward(state.params, qm)
    loss, dec_grads, d_table = loss_and_grads(
        state.decoder, table, caches.batch_bundle(loss_group)
    )
    cb_grads, _ = attention_backward(state.params, qm.matrix, d_table)
    lr = scheduled_lr(state.step + 1, config.lr, config.warmup_steps, config.decay_rate)
    adam_step(
        state.opt,
        param_dict(state.params, state.decoder),
        {
            "w_q": cb_grads.w_q,
            "keys": cb_grads.keys,
            "codes": cb_grads.codes,
            "w_d": dec_grads.w_d,
            "b_d": dec_grads.b_d,
        },
        lr,
        config.beta1,
        config.beta2,
        config.eps,
    )
    return loss, lr


# ---------------------------------------------------------------------------
# checkpointing


def config_hash(config: TrainConfig, cb_config: CodebookConfig) -> str:
    blob = json.dumps(
        {"train": asdict(config), "codebook": asdict(cb_config)}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": hex(st["state"]["state"]),
        "inc": hex(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_from_json(obj: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": obj["bit_generator"],
        "state": {"state": int(obj["state"], 16), "inc": int(obj["inc"], 16)},
        "has_uint32": obj["has_uint32"],
        "uinteger": obj["uinteger"],
    }
    return rng


def _save_optim(state: AdamState, params: dict[str, np.ndarray], path: Path) -> None:
    from .tensorio import write_header, write_tensor

    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as f:
        write_header(f, OPTIM_MAGIC, OPTIM_VERSION)
        f.write(struct.pack("<Q", state.step))
        for name in PARAM_ORDER:
            shape = params[name].shape
            write_tensor(f, state.m[name].reshape(-1, shape[-1]))
            write_tensor(f, state.v[name].reshape(-1, shape[-1]))
    tmp.replace(path)


def _load_optim(path: Path, params: dict[str, np.ndarray]) -> AdamState:
    from .tensorio import read_header, read_tensor

    with open(path, "rb") as f:
        version = read_header(f, OPTIM_MAGIC, str(path))
        if version != OPTIM_VERSION:
            raise FormatError(f"unsupported optimizer state version {version} in {path}")
        step = struct.unpack("<Q", f.read(8))[0]
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name in PARAM_ORDER:
            shape = params[name].shape
            m[name] = read_tensor(f, str(path)).reshape(shape)
            v[name] = read_tensor(f, str(path)).reshape(shape)
    return AdamState(m=m, v=v, step=step)


def save_checkpoint(
    state: TrainState, out_dir, config: TrainConfig, cb_config: CodebookConfig
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_codebook(state.params, out / "codebook.bin")
    save_decoder(state.decoder, out / "decoder.bin")
    _save_optim(state.opt, param_dict(state.params, state.decoder), out / "optim.bin")
    meta = {
        "version": META_VERSION,
        "step": state.step,
        "config_hash": config_hash(config, cb_config),
        "rng_state": _rng_state_to_json(state.rng),
        "train_config": asdict(config),
        "codebook_config": asdict(cb_config),
    }
    tmp = out / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out / "meta.json")


def load_checkpoint(
    ckpt_dir, config: TrainConfig, cb_config: CodebookConfig
) -> TrainState:
    out = Path(ckpt_dir)
    meta_path = out / "meta.json"
    if not meta_path.exists():
        raise FormatError(f"no checkpoint found at {out} (missing meta.json)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("version") != META_VERSION:
        raise FormatError(f"unsupported checkpoint version {meta.get('version')} in {meta_path}")
    if meta["config_hash"] != config_hash(config, cb_config):
        raise ConfigError(
            "checkpoint was written with a different configuration; refusing to resume"
        )
    params = load_codebook(out / "codebook.bin")
    decoder = load_decoder(out / "decoder.bin")
    opt = _load_optim(out / "optim.bin", param_dict(params, decoder))
    if opt.step != meta["step"]:
        raise FormatError(
            f"checkpoint step mismatch: meta says {meta['step']}, optimizer says {opt.step}"
        )
    return TrainState(params, decoder, opt, _rng_from_json(meta["rng_state"]))


def load_checkpoint_params(ckpt_dir) -> tuple[CodebookParams, DecoderParams]:
    """Model tensors only, for adaptation and mapping discovery."""
    out = Path(ckpt_dir)
    return load_codebook(out / "codebook.bin"), load_decoder(out / "decoder.bin")


# ---------------------------------------------------------------------------
# training loop


def _truncate_loss_log(path: Path, step: int) -> None:
    """Drop log lines past the checkpointed step so a resumed log matches an
    uninterrupted run byte for byte."""
    if not path.exists():
        return
    kept = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            kept.append(line)
            continue
        try:
            line_step = int(line.split("\t", 1)[0])
        except ValueError:
            continue
        if line_step <= step:
            kept.append(line)
    path.write_text("\n".join(kept) + ("\n" if kept else ""), encoding="utf-8")


def _validation_report(corpus: Corpus, caches: CorpusCaches, state: TrainState) -> list[str]:
    """Per-language loss on the held-out val split; reported, never acted on."""
    lines = ["# language\tn_val\tloss"]
    for language in corpus.language_ids:
        val = corpus.by_language(language, "val")
        train = corpus.by_language(language, "train")
        if not val or not train:
            continue
        phoneme_set = corpus.phoneme_set(language)
        dtype = train[0].features.dtype
        qm = aggregate_from_matrices([caches.reps(u) for u in train], phoneme_set, dtype)
        table, _ = forward(state.params, qm)
        loss, _, _ = loss_and_grads(state.decoder, table, caches.batch_bundle(val))
        lines.append(f"{language}\t{len(val)}\t{loss!r}")
    return lines


def run_training(
    corpus: Corpus,
    config: TrainConfig,
    cb_config: CodebookConfig,
    out_dir,
    resume: bool = False,
    stop_after: int | None = None,
) -> TrainState:
    """Train to config.total_steps (or stop_after), checkpointing into out_dir.

    The run is a pure function of (corpus, config, seed): loss logs and
    checkpoints are bitwise reproducible, and a resumed run matches an
    uninterrupted one exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    caches = CorpusCaches(corpus)
    if resume:
        state = load_checkpoint(out, config, cb_config)
        _truncate_loss_log(out / "loss_log.tsv", state.step)
        log_mode = "a"
    else:
        state = init_train_state(corpus, config, cb_config)
        log_mode = "w"
    target = config.total_steps if stop_after is None else min(stop_after, config.total_steps)
    with open(out / "loss_log.tsv", log_mode, encoding="utf-8") as log:
        if log_mode == "w":
            log.write("# step\tlr\tloss\n")
        while state.step < target:
            loss = lr = None
            for _ in range(_BATCH_RESAMPLE_LIMIT):
                batch = sample_language_batch(corpus, config.batch_size, state.rng)
                try:
                    loss, lr = train_step(state, batch, caches, config)
                    break
                except CoverageError:
                    continue
            if loss is None:
                raise CoverageError(
                    f"no coverage-valid batch found in {_BATCH_RESAMPLE_LIMIT} resamples"
                )
            log.write(f"{state.step}\t{lr!r}\t{loss!r}\n")
            log.flush()
            if (
                config.checkpoint_every
                and state.step % config.checkpoint_every == 0
                and state.step < target
            ):
                save_checkpoint(state, out, config, cb_config)
    save_checkpoint(state, out, config, cb_config)
    (out / "val_loss.tsv").write_text(
        "\n".join(_validation_report(corpus, caches, state)) + "\n", encoding="utf-8"
    )
    return state
