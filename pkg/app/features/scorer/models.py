from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

METRICS = (
    "Tokens",
    "Sentences",
    "Words",
    "UPOS",
    "XPOS",
    "UFeats",
    "AllTags",
    "Lemmas",
    "UAS",
    "LAS",
    "CLAS",
    "MLAS",
    "BLEX",
)

CONTENT_DEPRELS = frozenset(
    {
        "nsubj", "obj", "iobj", "csubj", "ccomp", "xcomp", "obl", "vocative", "expl",
        "dislocated", "advcl", "advmod", "discourse", "nmod", "appos", "nummod", "acl",
        "amod", "conj", "fixed", "flat", "compound", "list", "parataxis", "orphan",
        "goeswith", "reparandum", "root", "dep",
    }
)  # fmt: skip

FUNCTIONAL_DEPRELS = frozenset({"aux", "cop", "mark", "det", "clf", "case", "cc"})

UNIVERSAL_FEATURES = frozenset(
    {
        "PronType", "NumType", "Poss", "Reflex", "Foreign", "Abbr", "Gender", "Animacy",
        "Number", "Case", "Definite", "Degree", "VerbForm", "Mood", "Tense", "Aspect",
        "Voice", "Evident", "Polarity", "Person", "Polite",
    }
)  # fmt: skip

UNATTACHED = "<unattached>"


class Span(NamedTuple):
    start: int
    end: int


@dataclass(eq=False)
class ScoredWord:
    """A word prepared for scoring: normalized columns plus its character span.

    Words inside a multi-word token carry the span of the whole token.
    """

    form: str
    lemma: str
    upos: str
    xpos: str
    feats: str
    deprel: str
    span: Span
    is_multiword: bool
    parent: Union["ScoredWord", str, None] = None
    functional_children: list["ScoredWord"] = field(default_factory=list)

    @property
    def is_content(self) -> bool:
        return self.deprel in CONTENT_DEPRELS

    @property
    def is_functional(self) -> bool:
        return self.deprel in FUNCTIONAL_DEPRELS


@dataclass(eq=False)
class ScoredDocument:
    characters: str = ""
    sentences: list[Span] = field(default_factory=list)
    tokens: list[Span] = field(default_factory=list)
    words: list[ScoredWord] = field(default_factory=list)


class AlignedWordPair(NamedTuple):
    gold: ScoredWord
    system: ScoredWord


class Score(BaseModel):
    """Counts behind one metric."""

    model_config = ConfigDict(frozen=True)

    correct: int = Field(ge=0)
    gold_total: int = Field(ge=0)
    system_total: int = Field(ge=0)
    aligned_total: Optional[int] = None

    @property
    def precision(self) -> float:
        return self.correct / self.system_total if self.system_total else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold_total if self.gold_total else 0.0

    @property
    def f1(self) -> float:
        if self.gold_total == 0:
            return 1.0 if self.system_total == 0 else 0.0
        return 2 * self.correct / (self.system_total + self.gold_total)

    @property
    def aligned_accuracy(self) -> Optional[float]:
        if self.aligned_total is None:
            return None
        return self.correct / self.aligned_total if self.aligned_total else 0.0


class MetricValue(BaseModel):
    precision: float
    recall: float
    f1: float
    aligned_accuracy: Optional[float] = None

    @classmethod
    def of(cls, score: Score) -> "MetricValue":
        return cls(
            precision=score.precision,
            recall=score.recall,
            f1=score.f1,
            aligned_accuracy=score.aligned_accuracy,
        )


class EvalReport(BaseModel):
    """Per-metric precision, recall, F1 and aligned accuracy, plus tag consistency (PMI)."""

    metrics: dict[str, MetricValue]
    pmi: Optional[float] = None

    def f1(self, metric: str) -> float:
        return self.metrics[metric].f1

    def delta(self, baseline: "EvalReport") -> dict[str, float]:
        """F1 of this report minus F1 of ``baseline`` for every shared metric."""
        return {
            name: self.metrics[name].f1 - baseline.metrics[name].f1
            for name in self.metrics
            if name in baseline.metrics
        }
