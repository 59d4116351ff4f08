"""Transcript normalisation, text/label mapping, edit distance and error rates."""

from __future__ import annotations

import re
from typing import Sequence

from .errors import EmptyAfterNormalise, EmptyReference

ALPHABET = "abcdefghijklmnopqrstuvwxyz "
# label 0 is the CTC blank; a-z -> 1..26, space -> 27
CHAR_TO_LABEL = {c: i + 1 for i, c in enumerate(ALPHABET)}
LABEL_TO_CHAR = {i: c for c, i in CHAR_TO_LABEL.items()}
NUM_LABELS = len(ALPHABET) + 1

_DROP = re.compile(r"[^a-z\s]")
_SPACES = re.compile(r"\s+")


def normalise(text: str) -> str:
    text = _DROP.sub("", text.lower())
    text = _SPACES.sub(" ", text).strip()
    if not text:
        raise EmptyAfterNormalise("transcript is empty after normalisation")
    return text


def text_to_labels(text: str) -> list[int]:
    return [CHAR_TO_LABEL[c] for c in normalise(text)]


def labels_to_text(labels: Sequence[int]) -> str:
    """Map labels back to text. Decoded output can be empty or carry stray spaces."""
    text = "".join(LABEL_TO_CHAR[int(k)] for k in labels)
    return _SPACES.sub(" ", text).strip()


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Edit distance with unit insert/delete/substitute costs, two-row DP."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def word_errors(reference: str, hypothesis: str) -> tuple[int, int]:
    """(edit distance, reference word count) at word level."""
    ref = reference.split()
    if not ref:
        raise EmptyReference("reference transcript has no words")
    return levenshtein(ref, hypothesis.split()), len(ref)


def word_error_rate(reference: str, hypothesis: str) -> float:
    errors, n = word_errors(reference, hypothesis)
    return errors / n


def character_error_rate(reference: str, hypothesis: str) -> float:
    if not reference:
        raise EmptyReference("reference transcript is empty")
    return levenshtein(reference, hypothesis) / len(reference)


def pooled_wer(pairs) -> float:
    """Corpus-level WER: total word edits over total reference words.

    ``pairs`` is an iterable of (reference, hypothesis).
    """
    errors = words = 0
    for ref, hyp in pairs:
        e, n = word_errors(ref, hyp)
        errors += e
        words += n
    if words == 0:
        raise EmptyReference("no reference words to score")
    return errors / words
