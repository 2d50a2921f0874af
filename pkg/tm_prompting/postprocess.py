"""Completion cleanup and scoring-side tokenization."""

import re
from collections.abc import Sequence
from enum import StrEnum
from functools import lru_cache

from sacremoses import MosesTokenizer

from .corpus import unescape_entities

EDGE_CHARACTERS = "\"\n\r[] \t"
CJK_LANGS = frozenset({"zh", "ja"})

_NEWLINE_RUN_RE = re.compile(r"\s*[\r\n]+\s*")
_HAN_RE = re.compile(r"([\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff])")


class CleanStep(StrEnum):
    STRIP_EDGES = "strip-edge-characters"
    UNESCAPE = "unescape-entities"
    COLLAPSE_NEWLINES = "collapse-internal-newlines"
    TRIM = "trim-whitespace"


DEFAULT_RULES: tuple[CleanStep, ...] = (
    CleanStep.STRIP_EDGES,
    CleanStep.UNESCAPE,
    CleanStep.COLLAPSE_NEWLINES,
    CleanStep.TRIM,
)

_STEPS = {
    CleanStep.STRIP_EDGES: lambda text: text.strip(EDGE_CHARACTERS),
    CleanStep.UNESCAPE: unescape_entities,
    CleanStep.COLLAPSE_NEWLINES: lambda text: _NEWLINE_RUN_RE.sub(" ", text),
    CleanStep.TRIM: str.strip,
}


def clean_output(raw: str, rules: Sequence[CleanStep] = DEFAULT_RULES) -> str:
    """Apply `rules` in order, repeated until the text stops changing."""
    text = raw
    while True:
        cleaned = text
        for step in rules:
            cleaned = _STEPS[CleanStep(step)](cleaned)
        if cleaned == text:
            return cleaned
        text = cleaned


@lru_cache(maxsize=None)
def _tokenizer(lang: str) -> MosesTokenizer:
    return MosesTokenizer(lang=lang)


def score_tokenize(text: str, lang_code: str) -> list[str]:
    """Moses-compatible tokens for BLEU. Han characters become single tokens."""
    if lang_code in CJK_LANGS:
        text = _HAN_RE.sub(r" \1 ", text)
        lang_code = "en"
    return _tokenizer(lang_code).tokenize(text, escape=False)
