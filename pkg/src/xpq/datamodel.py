"""Core domain types and file formats.

Covers frame-level feature matrices, phoneme alignments, per-language phoneme
sets, and the corpus manifest tying them together. All loaders validate; all
formats round-trip bit-exactly.

File formats:
  - feature file (.xpqf): magic "XPQF", version u32=1, rows u32, cols u32,
    then rows*cols IEEE-754 binary32 values, row-major, little-endian.
  - alignment file: UTF-8 TSV, one `phoneme<TAB>start_frame<TAB>end_frame`
    per line; lines starting with `#` are ignored.
  - phoneme-set file: UTF-8, one symbol per line, order significant.
  - manifest: UTF-8 JSON with keys `feature_spec`, `languages`, `entries`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    TruncationError,
    ValidationError,
    VocabularyError,
)

FEATURE_MAGIC = b"XPQF"
FEATURE_VERSION = 1
SPLITS = ("train", "val", "test")


def namespaced(language: str, phoneme: str) -> str:
    """Cross-language phoneme key, e.g. ("en", "AA0") -> "en-AA0"."""
    return f"{language}-{phoneme}"


@dataclass(frozen=True)
class FeatureSpec:
    dim: int
    frame_rate_hz: float = 100.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError(f"feature dim must be >= 1, got {self.dim}")
        if self.frame_rate_hz <= 0:
            raise ValidationError(f"frame_rate_hz must be > 0, got {self.frame_rate_hz}")


@dataclass(frozen=True)
class PhonemeSegment:
    phoneme: str
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame < 0:
            raise ValidationError(f"segment start must be >= 0, got {self.start_frame}")
        if self.start_frame >= self.end_frame:
            raise ValidationError(
                f"segment [{self.start_frame}, {self.end_frame}) for {self.phoneme!r} is empty or reversed"
            )

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True)
class LanguagePhonemeSet:
    """Ordered phoneme inventory; file order is the canonical row order."""

    language: str
    phonemes: tuple[str, ...]

    def __post_init__(self):
        if len(self.phonemes) < 1:
            raise ValidationError(f"phoneme set for {self.language!r} is empty")
        if len(set(self.phonemes)) != len(self.phonemes):
            raise ValidationError(f"duplicate phoneme symbols in {self.language!r}")
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(self.phonemes)})

    @property
    def size(self) -> int:
        return len(self.phonemes)

    def __contains__(self, phoneme: str) -> bool:
        return phoneme in self._index

    def index(self, phoneme: str) -> int:
        try:
            return self._index[phoneme]
        except KeyError:
            raise VocabularyError(
                f"phoneme {phoneme!r} is not in the {self.language!r} phoneme set"
            ) from None

    def namespaced(self, phoneme: str) -> str:
        self.index(phoneme)
        return namespaced(self.language, phoneme)


@dataclass
class Utterance:
    id: str
    language: str
    features: np.ndarray  # (T, dim)
    alignment: tuple[PhonemeSegment, ...]
    speaker: str | None = None

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def phoneme_symbols(self) -> frozenset[str]:
        return frozenset(seg.phoneme for seg in self.alignment)


# ---------------------------------------------------------------------------
# feature files


def save_feature_file(matrix: np.ndarray, path) -> None:
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"feature matrix must be non-empty 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature matrix contains non-finite values")
    rows, cols = arr.shape
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, rows, cols)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise OSError(f"cannot write feature file {path}: {e}") from e


def load_feature_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FEATURE_MAGIC:
        raise FormatError(f"bad magic in {path}: expected {FEATURE_MAGIC!r}, got {data[:4]!r}")
    version, rows, cols = struct.unpack("<III", data[4:16])
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version} in {path}")
    if rows < 1 or cols < 1:
        raise ValidationError(f"feature file {path} declares empty shape {rows}x{cols}")
    expected = 16 + 4 * rows * cols
    if len(data) != expected:
        raise TruncationError(
            f"feature file {path} declares {rows}x{cols} ({expected} bytes) but has {len(data)} bytes"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).copy()
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"feature file {path} contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# alignment files


def load_alignment(path, phoneme_set) -> tuple[PhonemeSegment, ...]:
    """Parse a TSV alignment; segments must be sorted, non-overlapping, in-vocabulary.

    phoneme_set may be a LanguagePhonemeSet or any container of symbols.
    """
    symbols = phoneme_set.phonemes if isinstance(phoneme_set, LanguagePhonemeSet) else phoneme_set
    symbols = frozenset(symbols)
    segments: list[PhonemeSegment] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValidationError(f"{path}:{lineno}: expected 3 tab-separated fields")
        sym, start_s, end_s = fields
        try:
            start, end = int(start_s), int(end_s)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: frame indices must be integers") from None
        if sym not in symbols:
            raise VocabularyError(f"{path}:{lineno}: unknown phoneme {sym!r}")
        segments.append(PhonemeSegment(sym, start, end))
    for prev, cur in zip(segments, segments[1:]):
        if cur.start_frame < prev.end_frame:
            raise ValidationError(
                f"{path}: segments overlap or are unsorted at frame {cur.start_frame}"
            )
    return tuple(segments)


def save_alignment(segments, path) -> None:
    lines = [f"{s.phoneme}\t{s.start_frame}\t{s.end_frame}" for s in segments]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# phoneme-set files


def load_phoneme_set(path, language: str) -> LanguagePhonemeSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    symbols = tuple(line.strip() for line in lines if line.strip())
    return LanguagePhonemeSet(language, symbols)


def save_phoneme_set(phoneme_set: LanguagePhonemeSet, path) -> None:
    Path(path).write_text("\n".join(phoneme_set.phonemes) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    language: str
    feature_path: str
    alignment_path: str
    split: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(
                f"entry {self.id!r}: split {self.split!r} not in {SPLITS}"
            )


@dataclass
class CorpusManifest:
    feature_spec: FeatureSpec
    languages: tuple[LanguagePhonemeSet, ...]
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default_factory=Path)  # directory paths are relative to

    def __post_init__(self):
        ids = [ps.language for ps in self.languages]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate language ids in manifest")

    def phoneme_set(self, language: str) -> LanguagePhonemeSet:
        for ps in self.languages:
            if ps.language == language:
                return ps
        raise VocabularyError(f"language {language!r} is not defined in the manifest")

    @property
    def language_ids(self) -> tuple[str, ...]:
        return tuple(ps.language for ps in self.languages)


_MANIFEST_KEYS = {"feature_spec", "languages", "entries"}
_ENTRY_KEYS = {"id", "language", "feature_path", "alignment_path", "split"}


def _check_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{context}: unknown keys {sorted(unknown)}")
    missing = allowed - set(obj)
    if missing:
        raise ValidationError(f"{context}: missing keys {sorted(missing)}")


def load_manifest(path) -> CorpusManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path} is not valid JSON: {e}") from e
    _check_keys(obj, _MANIFEST_KEYS, f"manifest {path}")
    fs = obj["feature_spec"]
    _check_keys(fs, {"dim", "frame_rate_hz"}, f"manifest {path}: feature_spec")
    spec = FeatureSpec(dim=int(fs["dim"]), frame_rate_hz=float(fs["frame_rate_hz"]))
    languages = []
    for lang in obj["languages"]:
        _check_keys(lang, {"language", "phonemes"}, f"manifest {path}: languages")
        languages.append(LanguagePhonemeSet(lang["language"], tuple(lang["phonemes"])))
    entries = []
    for ent in obj["entries"]:
        _check_keys(ent, _ENTRY_KEYS, f"manifest {path}: entry")
        entries.append(ManifestEntry(**ent))
    return CorpusManifest(spec, tuple(languages), tuple(entries), root=path.parent)


def save_manifest(manifest: CorpusManifest, path) -> None:
    obj = {
        "feature_spec": {
            "dim": manifest.feature_spec.dim,
            "frame_rate_hz": manifest.feature_spec.frame_rate_hz,
        },
        "languages": [
            {"language": ps.language, "phonemes": list(ps.phonemes)}
            for ps in manifest.languages
        ],
        "entries": [
            {
                "id": e.id,
                "language": e.language,
                "feature_path": e.feature_path,
                "alignment_path": e.alignment_path,
                "split": e.split,
            }
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class ValidationIssue:
    utterance_id: str | None
    message: str

    def __str__(self) -> str:
        prefix = self.utterance_id if self.utterance_id else "<corpus>"
        return f"{prefix}: {self.message}"


@dataclass
class CorpusValidationReport:
    issues: list[ValidationIssue]

    @property
    def ok(self) -> bool:
        return not self.issues

    def __str__(self) -> str:
        if self.ok:
            return "corpus OK"
        return "\n".join(str(i) for i in self.issues)


def validate_corpus(manifest: CorpusManifest) -> CorpusValidationReport:
    """Check every entry against the corpus invariants; never raises.

    Issues are reported in manifest entry order, so the report is stable.
    """
    issues: list[ValidationIssue] = []
    known = set(manifest.language_ids)
    seen_ids: set[str] = set()
    for entry in manifest.entries:
        if entry.id in seen_ids:
            issues.append(ValidationIssue(entry.id, "duplicate utterance id"))
            continue
        seen_ids.add(entry.id)
        if entry.language not in known:
            issues.append(ValidationIssue(entry.id, f"undefined language {entry.language!r}"))
            continue
        try:
            features = load_feature_file(manifest.root / entry.feature_path)
        except (OSError, FormatError, ValidationError) as e:
            issues.append(ValidationIssue(entry.id, f"feature file: {e}"))
            continue
        if features.shape[1] != manifest.feature_spec.dim:
            issues.append(
                ValidationIssue(
                    entry.id,
                    f"feature dim {features.shape[1]} != corpus dim {manifest.feature_spec.dim}",
                )
            )
        try:
            alignment = load_alignment(
                manifest.root / entry.alignment_path, manifest.phoneme_set(entry.language)
            )
        except (OSError, ValidationError, VocabularyError) as e:
            issues.append(ValidationIssue(entry.id, f"alignment: {e}"))
            continue
        if alignment and alignment[-1].end_frame > features.shape[0]:
            issues.append(
                ValidationIssue(
                    entry.id,
                    f"alignment ends at frame {alignment[-1].end_frame} but utterance has "
                    f"{features.shape[0]} frames",
                )
            )
    return CorpusValidationReport(issues)


# ---------------------------------------------------------------------------
# loaded corpus


@dataclass
class Corpus:
    """In-memory corpus: manifest plus fully loaded utterances.

    Utterances keep manifest order; values are immutable after load and safe
    to share across threads.
    """

    manifest: CorpusManifest
    utterances: tuple[Utterance, ...]
    splits: tuple[str, ...]  # split tag per utterance, parallel to `utterances`

    def __post_init__(self):
        self._by_lang: dict[str, list[int]] = {}
        self._by_lang_split: dict[tuple[str, str], list[int]] = {}
        for i, (utt, split) in enumerate(zip(self.utterances, self.splits)):
            self._by_lang.setdefault(utt.language, []).append(i)
            self._by_lang_split.setdefault((utt.language, split), []).append(i)

    @property
    def feature_spec(self) -> FeatureSpec:
        return self.manifest.feature_spec

    @property
    def language_ids(self) -> tuple[str, ...]:
        return self.manifest.language_ids

    def phoneme_set(self, language: str) -> LanguagePhonemeSet:
        return self.manifest.phoneme_set(language)

    def by_language(self, language: str, split: str | None = None) -> list[Utterance]:
        if language not in self.manifest.language_ids:
            raise VocabularyError(f"language {language!r} is not defined in the manifest")
        if split is None:
            idx = self._by_lang.get(language, [])
        else:
            idx = self._by_lang_split.get((language, split), [])
        return [self.utterances[i] for i in idx]


def load_corpus(manifest_or_path) -> Corpus:
    """Load all features and alignments referenced by a manifest.

    Raises on the first invalid entry; use validate_corpus for a full report.
    """
    manifest = (
        manifest_or_path
        if isinstance(manifest_or_path, CorpusManifest)
        else load_manifest(manifest_or_path)
    )
    utterances = []
    splits = []
    for entry in manifest.entries:
        features = load_feature_file(manifest.root / entry.feature_path)
        if features.shape[1] != manifest.feature_spec.dim:
            raise ValidationError(
                f"utterance {entry.id!r}: feature dim {features.shape[1]} != "
                f"corpus dim {manifest.feature_spec.dim}"
            )
        alignment = load_alignment(
            manifest.root / entry.alignment_path, manifest.phoneme_set(entry.language)
        )
        if alignment and alignment[-1].end_frame > features.shape[0]:
            raise ValidationError(
                f"utterance {entry.id!r}: alignment exceeds frame count {features.shape[0]}"
            )
        utterances.append(Utterance(entry.id, entry.language, features, alignment))
        splits.append(entry.split)
    return Corpus(manifest, tuple(utterances), tuple(splits))
