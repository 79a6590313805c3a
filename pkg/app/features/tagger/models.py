from typing import Iterable, Literal

from app.features.conllu.models import EMPTY, Document, canonical_feats
from app.features.neural.vocab import Vocab

XposStrategy = Literal["biaffine", "per_char", "shared_fc"]

ABSENT = "<ABSENT>"
IGNORE = -100


def choose_xpos_strategy(
    xpos_tags: Iterable[str], override: str = "auto", max_biaffine: int = 250
) -> XposStrategy:
    """Pick how XPOS is predicted.

    Unused XPOS (only ``_``) and very large tagsets share one FC layer; tagsets whose
    tags all have the same length are classified one character at a time; every
    other tagset gets a biaffine classifier conditioned on UPOS.
    """
    if override != "auto":
        return override  # type: ignore[return-value]
    tags = set(xpos_tags)
    if not tags - {EMPTY}:
        return "shared_fc"
    if len({len(tag) for tag in tags}) == 1:
        return "per_char"
    if len(tags) > max_biaffine:
        return "shared_fc"
    return "biaffine"


def split_feats(ufeats: str) -> dict[str, str]:
    if not ufeats or ufeats == EMPTY:
        return {}
    return dict(item.split("=", 1) for item in ufeats.split("|") if "=" in item)


def _index(vocab: Vocab, label: str) -> int:
    return vocab.index(label) if label in vocab else IGNORE


class TagSpaces:
    """UPOS, XPOS and per-feature label sets learned from a training document."""

    def __init__(
        self,
        upos: Vocab,
        strategy: XposStrategy,
        xpos: list[Vocab],
        feat_keys: list[str],
        feats: list[Vocab],
    ):
        self.upos = upos
        self.strategy = strategy
        self.xpos = xpos
        self.feat_keys = feat_keys
        self.feats = feats

    @classmethod
    def build(
        cls, doc: Document, override: str = "auto", max_biaffine: int = 250
    ) -> "TagSpaces":
        words = doc.words
        upos = Vocab.labels(w.upos for w in words)
        xpos_tags = [w.xpos for w in words]
        strategy = choose_xpos_strategy(xpos_tags, override, max_biaffine)
        if strategy == "per_char":
            width = len(xpos_tags[0])
            if any(len(tag) != width for tag in xpos_tags):
                raise ValueError("per-character XPOS needs tags of identical length")
            xpos = [Vocab.labels(tag[p] for tag in xpos_tags) for p in range(width)]
        else:
            xpos = [Vocab.labels(xpos_tags)]
        values: dict[str, set[str]] = {}
        for word in words:
            for key, value in split_feats(word.ufeats).items():
                values.setdefault(key, set()).add(value)
        feat_keys = sorted(values)
        feats = [Vocab([ABSENT, *sorted(values[key])], reserved=()) for key in feat_keys]
        return cls(upos, strategy, xpos, feat_keys, feats)

    def encode_upos(self, tag: str) -> int:
        return _index(self.upos, tag)

    def encode_xpos(self, tag: str) -> list[int]:
        if self.strategy == "per_char":
            if len(tag) != len(self.xpos):
                return [IGNORE] * len(self.xpos)
            return [_index(vocab, char) for vocab, char in zip(self.xpos, tag)]
        return [_index(self.xpos[0], tag)]

    def decode_xpos(self, indices: list[int]) -> str:
        return "".join(vocab.symbol(i) for vocab, i in zip(self.xpos, indices))

    def encode_feats(self, ufeats: str) -> list[int]:
        present = split_feats(ufeats)
        return [
            _index(vocab, present.get(key, ABSENT))
            for key, vocab in zip(self.feat_keys, self.feats)
        ]

    def decode_feats(self, indices: list[int]) -> str:
        pairs = [
            f"{key}={vocab.symbol(i)}"
            for key, vocab, i in zip(self.feat_keys, self.feats, indices)
            if vocab.symbol(i) != ABSENT
        ]
        return canonical_feats("|".join(pairs))

    def to_dict(self) -> dict:
        return {
            "upos": self.upos.to_dict(),
            "strategy": self.strategy,
            "xpos": [v.to_dict() for v in self.xpos],
            "feat_keys": list(self.feat_keys),
            "feats": [v.to_dict() for v in self.feats],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TagSpaces":
        return cls(
            Vocab.from_dict(data["upos"]),
            data["strategy"],
            [Vocab.from_dict(v) for v in data["xpos"]],
            list(data["feat_keys"]),
            [Vocab.from_dict(v) for v in data["feats"]],
        )
