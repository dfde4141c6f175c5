"""Trial parsing, enrollment models, and batched deterministic cosine scoring.

Scoring parallelizes over disjoint trial blocks; each trial's score is a
pure function of its two vectors, so worker count and block size never
change a single output bit.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError
from .store import EmbeddingSet

_LABELS = {"target": True, "nontarget": False}


@dataclass
class TrialList:
    """Ordered (enroll, test) pairs, optionally labeled target/nontarget."""

    pairs: list[tuple[str, str]]
    labels: np.ndarray | None = None  # bool per pair, True = target

    def __post_init__(self):
        if len(set(self.pairs)) != len(self.pairs):
            raise ContractError("duplicate (enroll, test) pair")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=bool)
            if self.labels.shape != (len(self.pairs),):
                raise ContractError("labels must align one-to-one with pairs")

    def __len__(self) -> int:
        return len(self.pairs)


def parse_trials(path) -> TrialList:
    """Parse whitespace-separated `enroll test [label]` lines.

    `#` starts a comment; labels are matched case-insensitively against
    target/nontarget and must be present on all lines or none.
    """
    pairs: list[tuple[str, str]] = []
    labels: list[bool] = []
    seen: set[tuple[str, str]] = set()
    labeled: bool | None = None
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) not in (2, 3):
                raise FormatError(f"{path}:{ln}: expected 'enroll test [label]'")
            pair = (fields[0], fields[1])
            if pair in seen:
                raise FormatError(f"{path}:{ln}: duplicate pair {pair[0]} {pair[1]}")
            seen.add(pair)
            has_label = len(fields) == 3
            if labeled is None:
                labeled = has_label
            elif labeled != has_label:
                raise FormatError(f"{path}:{ln}: mixed labeled and unlabeled lines")
            if has_label:
                key = fields[2].lower()
                if key not in _LABELS:
                    raise FormatError(f"{path}:{ln}: unknown label {fields[2]!r}")
                labels.append(_LABELS[key])
            pairs.append(pair)
    return TrialList(pairs, np.asarray(labels, dtype=bool) if labeled else None)


def write_trials(trials: TrialList, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, (e, t) in enumerate(trials.pairs):
            if trials.labels is not None:
                f.write(f"{e} {t} {'target' if trials.labels[k] else 'nontarget'}\n")
            else:
                f.write(f"{e} {t}\n")


@dataclass(frozen=True)
class EnrollmentModel:
    """A speaker model: unit-norm vector aggregated from member segments."""

    model_id: str
    vector: np.ndarray
    member_ids: tuple[str, ...] = field(default_factory=tuple)


def build_enrollment(segments) -> list[EnrollmentModel]:
    """Aggregate per-model segment embeddings into unit-norm model vectors.

    `segments` maps model_id -> list of embedding vectors.  Each member is
    length-normalized, members are averaged, and the average is normalized
    again; a zero average (e.g. antipodal members) is an error.
    """
    models = []
    for model_id, vecs in segments.items():
        if len(vecs) == 0:
            raise ContractError(f"model {model_id!r} has no member segments")
        members = []
        for v in vecs:
            v = np.asarray(v, dtype=np.float64)
            n = np.linalg.norm(v)
            if n == 0:
                raise ContractError(f"model {model_id!r} has a zero-norm member")
            members.append(v / n)
        mean = np.mean(members, axis=0)
        n = np.linalg.norm(mean)
        if n == 0:
            raise ContractError(f"model {model_id!r}: member mean is the zero vector")
        models.append(EnrollmentModel(model_id, mean / n))
    return models


def models_to_set(models: list[EnrollmentModel]) -> EmbeddingSet:
    if not models:
        raise ContractError("no enrollment models")
    return EmbeddingSet(
        [m.model_id for m in models], np.stack([m.vector for m in models]).astype(np.float32)
    )


def parse_enroll_map(path) -> dict[str, list[str]]:
    """Parse `model seg1 seg2 ...` lines (one model per line)."""
    out: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) < 2:
                raise FormatError(f"{path}:{ln}: expected 'model seg1 [seg2 ...]'")
            if fields[0] in out:
                raise FormatError(f"{path}:{ln}: duplicate model {fields[0]!r}")
            out[fields[0]] = fields[1:]
    return out


def cosine_score(a, b) -> float:
    """Cosine similarity a.b / (|a||b|)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ContractError("cannot score a zero vector")
    return float(np.dot(a, b) / (na * nb))


def _score_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    na = np.sqrt(np.einsum("ij,ij->i", a, a))
    nb = np.sqrt(np.einsum("ij,ij->i", b, b))
    if np.any(na == 0) or np.any(nb == 0):
        raise ContractError("cannot score a zero vector")
    return np.einsum("ij,ij->i", a, b) / (na * nb)


def score_trials(
    models: EmbeddingSet,
    tests: EmbeddingSet,
    trials: TrialList,
    workers: int = 1,
    block_size: int = 4096,
) -> np.ndarray:
    """Cosine score per trial, aligned with the trial list order.

    Deterministic: repeated runs and any (workers, block_size) combination
    produce bitwise-identical scores.
    """
    if workers < 1 or block_size < 1:
        raise ContractError("workers and block_size must be >= 1")
    n = len(trials)
    scores = np.empty(n)
    if n == 0:
        return scores
    try:
        e_rows = np.array([models._index[e] for e, _ in trials.pairs])
    except KeyError as exc:
        raise ContractError(f"unknown enrollment id {exc.args[0]!r}") from None
    try:
        t_rows = np.array([tests._index[t] for _, t in trials.pairs])
    except KeyError as exc:
        raise ContractError(f"unknown test id {exc.args[0]!r}") from None

    blocks = [(lo, min(lo + block_size, n)) for lo in range(0, n, block_size)]

    def run(span):
        lo, hi = span
        scores[lo:hi] = _score_block(
            models.vectors[e_rows[lo:hi]], tests.vectors[t_rows[lo:hi]]
        )

    if workers == 1 or len(blocks) == 1:
        for span in blocks:
            run(span)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    return scores


def write_scores(trials: TrialList, scores: np.ndarray, path) -> None:
    """Score TSV: `enroll<TAB>test<TAB>score` with 6 decimal digits."""
    scores = np.asarray(scores)
    if scores.shape != (len(trials),):
        raise ContractError(f"{scores.shape[0]} scores for {len(trials)} trials")
    with open(path, "w", encoding="utf-8") as f:
        for (e, t), s in zip(trials.pairs, scores):
            f.write(f"{e}\t{t}\t{s:.6f}\n")


def read_scores(path) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise FormatError(f"{path}:{ln}: expected 'enroll<TAB>test<TAB>score'")
            try:
                score = float(fields[2])
            except ValueError:
                raise FormatError(f"{path}:{ln}: bad score {fields[2]!r}") from None
            key = (fields[0], fields[1])
            if key in out:
                raise FormatError(f"{path}:{ln}: duplicate pair {key[0]} {key[1]}")
            out[key] = score
    return out
