"""Units, unit tags and the symbolic parts of joint tokenization/segmentation."""

import re
from enum import IntEnum
from typing import Literal, NamedTuple, Optional, Sequence

import torch
from pydantic import BaseModel, ConfigDict

from app.core.errors import DataError
from app.features.conllu.models import Sentence, Token, Word
from app.features.conllu.parsers import PENDING_MWT, join_misc
from app.features.conllu.services import NO_SPACE

UnitMode = Literal["char", "syllable"]

SYLLABLE = re.compile(r"\s*(?:\w+|[^\w\s])")
WHITESPACE = re.compile(r"\s+")
PARAGRAPH_BREAK = re.compile(r"\n[ \t\r\f\v]*\n")


class UnitTag(IntEnum):
    EOT = 0
    EOS = 1
    MWT = 2
    MWS = 3
    OTHER = 4

    @property
    def ends_token(self) -> bool:
        return self is not UnitTag.OTHER

    @property
    def ends_sentence(self) -> bool:
        return self in (UnitTag.EOS, UnitTag.MWS)

    @property
    def is_mwt(self) -> bool:
        return self in (UnitTag.MWT, UnitTag.MWS)

    @classmethod
    def of(cls, sentence_final: bool, mwt: bool) -> "UnitTag":
        if sentence_final:
            return cls.MWS if mwt else cls.EOS
        return cls.MWT if mwt else cls.EOT


class Unit(BaseModel):
    """One tokenizer input unit with its four binary surface features."""

    model_config = ConfigDict(frozen=True)

    text: str

    @property
    def starts_with_space(self) -> bool:
        return bool(self.text) and self.text[0].isspace()

    @property
    def starts_capitalized(self) -> bool:
        stripped = self.text.lstrip()
        return bool(stripped) and stripped[0].isupper()

    @property
    def fully_capitalized(self) -> bool:
        cased = [c for c in self.text if c.isupper() or c.islower()]
        return len(cased) >= 2 and all(c.isupper() for c in cased)

    @property
    def numeric(self) -> bool:
        chars = [c for c in self.text if not c.isspace()]
        return bool(chars) and all(c.isdecimal() for c in chars)

    @property
    def features(self) -> tuple[bool, bool, bool, bool]:
        return (
            self.starts_with_space,
            self.starts_capitalized,
            self.fully_capitalized,
            self.numeric,
        )

    @property
    def key(self) -> str:
        """Embedding lookup key: lowercased text without leading whitespace."""
        return self.text.lstrip().lower() or " "


def normalize_paragraph(text: str) -> str:
    return WHITESPACE.sub(" ", text).strip()


def split_paragraphs(raw: str) -> list[str]:
    """Split raw text on blank lines and normalize whitespace inside each paragraph."""
    paragraphs = (normalize_paragraph(p) for p in PARAGRAPH_BREAK.split(raw))
    return [p for p in paragraphs if p]


def unitize(raw: str, mode: UnitMode = "char") -> list[Unit]:
    """Turn one paragraph into tokenizer units.

    Whitespace runs (newlines included) collapse to single spaces first. In ``char``
    mode every character is a unit, spaces included; in ``syllable`` mode a unit is a
    run of word characters or a single symbol together with its leading space.
    """
    text = normalize_paragraph(raw)
    if not text:
        return []
    if mode == "char":
        return [Unit(text=c) for c in text]
    if mode == "syllable":
        return [Unit(text=m.group(0)) for m in SYLLABLE.finditer(text)]
    raise ValueError(f"unknown unit mode '{mode}'")


class TokenizerScores(NamedTuple):
    """Per-unit scores; the last axis is ordered (tok, sent, mwt)."""

    layer1: torch.Tensor
    layer2: torch.Tensor
    gated: Optional[torch.Tensor] = None

    @property
    def total(self) -> torch.Tensor:
        return self.layer1 + self.layer2

    @property
    def tok(self) -> torch.Tensor:
        return self.total[..., 0]

    @property
    def sent(self) -> torch.Tensor:
        return self.total[..., 1]

    @property
    def mwt(self) -> torch.Tensor:
        return self.total[..., 2]


def tag_distribution(
    s: torch.Tensor, t: torch.Tensor, m: torch.Tensor
) -> torch.Tensor:
    """Factorized probabilities over (EOT, EOS, MWT, MWS, OTHER) on a new last axis."""
    boundary = torch.sigmoid(s)
    sent, no_sent = torch.sigmoid(t), torch.sigmoid(-t)
    mwt, no_mwt = torch.sigmoid(m), torch.sigmoid(-m)
    return torch.stack(
        [
            boundary * no_sent * no_mwt,
            boundary * sent * no_mwt,
            boundary * no_sent * mwt,
            boundary * sent * mwt,
            torch.sigmoid(-s),
        ],
        dim=-1,
    )


def decode_segments(tags: Sequence[UnitTag], units: Sequence[Unit]) -> list[Sentence]:
    """Cut a tagged unit sequence into sentences of single-word tokens.

    Tokens ending in MWT/MWS are flagged for expansion; material after the last
    boundary is flushed as a final token and sentence.
    """
    if len(tags) != len(units):
        raise ValueError(f"{len(tags)} tags for {len(units)} units")
    sentences: list[Sentence] = []
    pending: list[tuple[str, bool, bool]] = []
    start = 0

    def flush_token(end: int, tag: UnitTag) -> None:
        raw = "".join(unit.text for unit in units[start : end + 1])
        form = raw.strip()
        if not form:
            return
        following = units[end + 1].text if end + 1 < len(units) else " "
        spaced = raw[-1].isspace() or following[0].isspace()
        pending.append((form, tag.is_mwt, spaced))

    def flush_sentence() -> None:
        if pending:
            sentences.append(_sentence(pending))
            pending.clear()

    for index, tag in enumerate(tags):
        tag = UnitTag(tag)
        if tag.ends_token:
            flush_token(index, tag)
            start = index + 1
            if tag.ends_sentence:
                flush_sentence()
    if start < len(units):
        flush_token(len(units) - 1, UnitTag.EOS)
    flush_sentence()
    return sentences


def _sentence(pending: list[tuple[str, bool, bool]]) -> Sentence:
    words, tokens, surface = [], [], []
    for index, (form, mwt, spaced) in enumerate(pending, start=1):
        items = [] if spaced else [NO_SPACE]
        misc = join_misc(items + ([PENDING_MWT] if mwt else []))
        words.append(Word(id=index, form=form, misc=misc))
        tokens.append(
            Token(start=index, end=index, form=form, misc=misc, needs_expansion=mwt)
        )
        surface.append(form + (" " if spaced else ""))
    return Sentence(
        words=tuple(words), tokens=tuple(tokens), text="".join(surface).strip()
    )


def gold_unit_tags(units: Sequence[Unit], sentences: Sequence[Sentence]) -> list[UnitTag]:
    """Align gold tokens to units and derive one tag per unit.

    Whitespace is ignored on both sides. The unit holding the last character of a
    token gets EOT/EOS/MWT/MWS; every other unit is OTHER.

    Raises:
        DataError: When characters disagree, a token ends inside a unit, or one side
            runs out first; the message names the 1-based sentence.
    """
    ends: dict[int, UnitTag] = {}
    chars: list[str] = []
    owner: list[int] = []
    for number, sentence in enumerate(sentences, start=1):
        for position, token in enumerate(sentence.tokens):
            compact = "".join(token.form.split())
            if not compact:
                continue
            chars.extend(compact)
            owner.extend([number] * len(compact))
            final = position == len(sentence.tokens) - 1
            ends[len(chars) - 1] = UnitTag.of(final, token.is_mwt or token.needs_expansion)

    tags: list[UnitTag] = []
    cursor = 0
    for unit in units:
        tag = UnitTag.OTHER
        for char in unit.text:
            if char.isspace():
                continue
            if cursor >= len(chars):
                raise DataError(
                    f"raw text continues past the last gold sentence ({len(sentences)})"
                )
            if chars[cursor] != char:
                raise DataError(
                    f"sentence {owner[cursor]}: raw text has '{char}' where the gold "
                    f"tokens have '{chars[cursor]}'"
                )
            if tag is not UnitTag.OTHER:
                raise DataError(
                    f"sentence {owner[cursor]}: a token boundary falls inside unit "
                    f"'{unit.text}'"
                )
            tag = ends.get(cursor, UnitTag.OTHER)
            cursor += 1
        tags.append(tag)
    if cursor != len(chars):
        raise DataError(
            f"sentence {owner[cursor]}: gold tokens continue past the end of the raw text"
        )
    return tags
