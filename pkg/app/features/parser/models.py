from typing import Optional, Sequence

import numpy as np

from app.features.conllu.models import EMPTY, ROOT_DEPREL, Document
from app.features.neural.vocab import Vocab
from app.features.tagger.models import split_feats

FALLBACK_DEPREL = "dep"


def is_root_label(label: str) -> bool:
    return label.split(":")[0] == ROOT_DEPREL


def feat_symbols(ufeats: str) -> list[str]:
    return [f"{key}={value}" for key, value in split_feats(ufeats).items()]


class ParserVocabs:
    """Input vocabularies and the relation label set of a parser."""

    def __init__(
        self,
        words: Vocab,
        lemmas: Vocab,
        chars: Vocab,
        upos: Vocab,
        xpos: Vocab,
        feats: Vocab,
        deprels: Vocab,
        pretrained: Optional[Vocab] = None,
    ):
        self.words = words
        self.lemmas = lemmas
        self.chars = chars
        self.upos = upos
        self.xpos = xpos
        self.feats = feats
        self.deprels = deprels
        self.pretrained = pretrained

    @classmethod
    def build(
        cls, doc: Document, min_count: int = 7, pretrained: Optional[Vocab] = None
    ) -> "ParserVocabs":
        words = doc.words
        return cls(
            words=Vocab.build((w.form.lower() for w in words), min_count),
            lemmas=Vocab.build((w.lemma.lower() for w in words), min_count),
            chars=Vocab.build(c for w in words for c in w.form),
            upos=Vocab.build(w.upos for w in words),
            xpos=Vocab.build(w.xpos for w in words),
            feats=Vocab.build(f for w in words for f in feat_symbols(w.ufeats)),
            deprels=Vocab.labels(w.deprel for w in words if w.deprel != EMPTY),
            pretrained=pretrained,
        )

    def to_dict(self) -> dict:
        data = {
            name: getattr(self, name).to_dict()
            for name in ("words", "lemmas", "chars", "upos", "xpos", "feats", "deprels")
        }
        if self.pretrained is not None:
            data["pretrained"] = self.pretrained.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ParserVocabs":
        vocabs = {name: Vocab.from_dict(value) for name, value in data.items()}
        return cls(**vocabs)


def assign_relations(scores: np.ndarray, heads: Sequence[int], deprels: Vocab) -> list[str]:
    """Pick a relation per word from its scores at the chosen head.

    The word attached to ROOT gets the best root label (``root`` when the label set
    has none); every other word gets the best non-root label.

    Args:
        scores: ``(n + 1, n + 1, labels)`` scores of dependent ``i`` (row 0 is ROOT),
            head ``j`` and label ``k``.
        heads: Head of words ``1..n``.
        deprels: The relation label set.
    """
    labels = deprels.symbols
    root_ids = [k for k, label in enumerate(labels) if is_root_label(label)]
    other_ids = [k for k, label in enumerate(labels) if not is_root_label(label)]
    relations = []
    for i, head in enumerate(heads, start=1):
        row = scores[i, head]
        candidates = root_ids if head == 0 else other_ids
        if not candidates:
            relations.append(ROOT_DEPREL if head == 0 else FALLBACK_DEPREL)
            continue
        best = max(candidates, key=lambda k: (row[k], -k))
        relations.append(labels[best])
    return relations
