from collections import Counter
from enum import IntEnum
from typing import Optional

from pydantic import BaseModel, Field

from app.core.errors import DataError
from app.features.conllu.models import Document


class EditLabel(IntEnum):
    IDENTITY = 0
    LOWERCASE = 1
    SEQ2SEQ = 2


def assign_edit_label(word: str, lemma: str) -> EditLabel:
    """Greedy label: identity first, then lowercase, otherwise the decoder."""
    if lemma == word:
        return EditLabel.IDENTITY
    if lemma == word.lower():
        return EditLabel.LOWERCASE
    return EditLabel.SEQ2SEQ


def _modal(observed: dict, into: dict, counts: dict) -> None:
    for key, counter in observed.items():
        lemma, count = counter.most_common(1)[0]
        into[key] = lemma
        counts[key] = count


class LemmaLexicon(BaseModel):
    """Two case-sensitive training dictionaries: ``(word, upos) -> lemma`` and ``word -> lemma``.

    Each key keeps its most frequent lemma; ties keep the first one seen.
    """

    pairs: dict[tuple[str, str], str] = Field(default_factory=dict)
    words: dict[str, str] = Field(default_factory=dict)
    pair_counts: dict[tuple[str, str], int] = Field(default_factory=dict)
    word_counts: dict[str, int] = Field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def lookup_pair(self, word: str, upos: str) -> Optional[str]:
        return self.pairs.get((word, upos))

    def lookup_word(self, word: str) -> Optional[str]:
        return self.words.get(word)

    @classmethod
    def build(cls, doc: Document) -> "LemmaLexicon":
        by_pair: dict[tuple[str, str], Counter] = {}
        by_word: dict[str, Counter] = {}
        for word in doc.words:
            if not word.lemma:
                continue
            by_pair.setdefault((word.form, word.upos), Counter())[word.lemma] += 1
            by_word.setdefault(word.form, Counter())[word.lemma] += 1
        lexicon = cls()
        _modal(by_pair, lexicon.pairs, lexicon.pair_counts)
        _modal(by_word, lexicon.words, lexicon.word_counts)
        return lexicon

    def to_text(self) -> str:
        """Sorted ``P word upos lemma count`` lines, then ``W word lemma count`` lines."""
        lines = [
            f"P\t{word}\t{upos}\t{lemma}\t{self.pair_counts.get((word, upos), 0)}"
            for (word, upos), lemma in sorted(self.pairs.items())
        ]
        lines += [
            f"W\t{word}\t{self.words[word]}\t{self.word_counts.get(word, 0)}"
            for word in sorted(self.words)
        ]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> "LemmaLexicon":
        lexicon = cls()
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if parts[0] == "P" and len(parts) == 5:
                key = (parts[1], parts[2])
                lexicon.pairs[key] = parts[3]
                lexicon.pair_counts[key] = int(parts[4])
            elif parts[0] == "W" and len(parts) == 4:
                lexicon.words[parts[1]] = parts[2]
                lexicon.word_counts[parts[1]] = int(parts[3])
            else:
                raise DataError(f"line {number}: not a lemma lexicon entry")
        return lexicon


def build_lemma_lexicons(doc: Document) -> LemmaLexicon:
    return LemmaLexicon.build(doc)
