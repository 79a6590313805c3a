"""Shared-task style evaluation of a system document against a gold document.

Gold and system tokens are matched by their character spans in the whitespace-free
concatenation of token forms. Words of multi-word tokens are aligned by the longest
common subsequence of their lowercased forms inside the smallest spans that contain
every overlapping multi-word token.
"""

import math
import unicodedata
from typing import Any, Callable, Iterator, Optional, Sequence, TypeVar

from app.core.errors import AlignmentError
from app.features.conllu.models import EMPTY, Document
from app.features.scorer.models import (
    METRICS,
    UNATTACHED,
    UNIVERSAL_FEATURES,
    AlignedWordPair,
    EvalReport,
    MetricValue,
    Score,
    ScoredDocument,
    ScoredWord,
    Span,
)

T = TypeVar("T")

NOT_ALIGNED = "<not aligned>"
PMI_METRICS = ("UPOS", "XPOS", "UFeats", "AllTags")


def _strip_spaces(form: str) -> str:
    return "".join(c for c in form if unicodedata.category(c) != "Zs")


def _universal_feats(ufeats: str) -> str:
    """Universal features only, sorted; ``_`` and non-universal bundles both map to ``""``."""
    if ufeats == EMPTY:
        return ""
    kept = sorted(f for f in ufeats.split("|") if f.split("=", 1)[0] in UNIVERSAL_FEATURES)
    return "|".join(kept)


def scoring_view(doc: Document) -> ScoredDocument:
    """Character spans and normalized columns for every token, sentence and word."""
    view = ScoredDocument()
    characters: list[str] = []
    for sentence in doc.sentences:
        sentence_start = len(characters)
        words: list[ScoredWord] = []
        for token in sentence.tokens:
            form = _strip_spaces(token.form)
            span = Span(len(characters), len(characters) + len(form))
            characters.extend(form)
            view.tokens.append(span)
            for word in sentence.token_words(token):
                words.append(
                    ScoredWord(
                        form=_strip_spaces(word.form),
                        lemma=word.lemma or EMPTY,
                        upos=word.upos,
                        xpos=word.xpos,
                        feats=_universal_feats(word.ufeats),
                        deprel=word.deprel.split(":")[0],
                        span=span,
                        is_multiword=token.is_mwt,
                    )
                )
        for scored, word in zip(words, sentence.words):
            if word.head is None:
                scored.parent = UNATTACHED
            elif word.head > 0:
                scored.parent = words[word.head - 1]
                if scored.is_functional:
                    words[word.head - 1].functional_children.append(scored)
        view.sentences.append(Span(sentence_start, len(characters)))
        view.words.extend(words)
    view.characters = "".join(characters)
    return view


def spans_score(gold: Sequence[Span], system: Sequence[Span]) -> Score:
    """Count spans present in both sorted span lists."""
    correct = 0
    g = s = 0
    while g < len(gold) and s < len(system):
        if gold[g].start < system[s].start:
            g += 1
        elif system[s].start < gold[g].start:
            s += 1
        else:
            correct += gold[g].end == system[s].end
            g += 1
            s += 1
    return Score(correct=correct, gold_total=len(gold), system_total=len(system))


def lcs_align(
    first: Sequence[T], second: Sequence[T], key: Callable[[T], Any]
) -> list[tuple[T, T]]:
    """Pairs of a longest common subsequence of ``first`` and ``second`` under ``key``."""
    a = [key(x) for x in first]
    b = [key(y) for y in second]
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            if a[i] == b[j]:
                table[i][j] = table[i + 1][j + 1] + 1
            else:
                table[i][j] = max(table[i + 1][j], table[i][j + 1])
    pairs = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            pairs.append((first[i], second[j]))
            i += 1
            j += 1
        elif table[i + 1][j] >= table[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def multiword_spans(gold: Sequence[ScoredWord], system: Sequence[ScoredWord]) -> list[Span]:
    """Smallest spans enclosing every overlapping multi-word token of either side."""
    spans = sorted({w.span for w in (*gold, *system) if w.is_multiword})
    merged: list[Span] = []
    for span in spans:
        if merged and span.start < merged[-1].end:
            merged[-1] = Span(merged[-1].start, max(merged[-1].end, span.end))
        else:
            merged.append(span)
    return merged


def _align_plain(
    gold: Iterator[ScoredWord],
    system: Iterator[ScoredWord],
    g: Optional[ScoredWord],
    s: Optional[ScoredWord],
    until: Optional[int],
    pairs: list[AlignedWordPair],
) -> tuple[Optional[ScoredWord], Optional[ScoredWord]]:
    while g is not None and s is not None:
        if until is not None and g.span.start >= until and s.span.start >= until:
            break
        if g.span == s.span:
            pairs.append(AlignedWordPair(g, s))
            g, s = next(gold, None), next(system, None)
        elif g.span.start <= s.span.start:
            g = next(gold, None)
        else:
            s = next(system, None)
    return g, s


def _check_same_text(first: str, second: str, names: str) -> None:
    if first == second:
        return
    position = next(
        (i for i, (a, b) in enumerate(zip(first, second)) if a != b),
        min(len(first), len(second)),
    )
    raise AlignmentError(
        f"{names} texts differ at character {position}: "
        f"'{first[position:position + 20]}' vs '{second[position:position + 20]}'"
    )


def align(gold: ScoredDocument, system: ScoredDocument) -> list[AlignedWordPair]:
    """Align gold and system words.

    Raises:
        AlignmentError: If the two documents do not spell the same characters.
    """
    _check_same_text(gold.characters, system.characters, "gold and system")
    pairs: list[AlignedWordPair] = []
    gold_iter, system_iter = iter(gold.words), iter(system.words)
    g, s = next(gold_iter, None), next(system_iter, None)
    for span in multiword_spans(gold.words, system.words):
        g, s = _align_plain(gold_iter, system_iter, g, s, span.start, pairs)
        inside_gold: list[ScoredWord] = []
        while g is not None and g.span.end <= span.end:
            inside_gold.append(g)
            g = next(gold_iter, None)
        inside_system: list[ScoredWord] = []
        while s is not None and s.span.end <= span.end:
            inside_system.append(s)
            s = next(system_iter, None)
        pairs.extend(
            AlignedWordPair(a, b)
            for a, b in lcs_align(inside_gold, inside_system, key=lambda w: w.form.lower())
        )
    _align_plain(gold_iter, system_iter, g, s, None, pairs)
    return pairs


def compute_f1(
    gold: ScoredDocument,
    system: ScoredDocument,
    pairs: Sequence[AlignedWordPair],
    key: Optional[Callable[[ScoredWord, Callable], Any]] = None,
    only: Optional[Callable[[ScoredWord], bool]] = None,
) -> Score:
    """Score aligned words whose ``key`` agrees on both sides.

    ``key`` receives a word and a resolver that maps words (heads, children) into gold
    space, so head comparisons go through the alignment. ``only`` restricts counting to
    words it accepts (content words for CLAS, MLAS and BLEX).
    """
    keep = only or (lambda _: True)
    gold_total = sum(1 for w in gold.words if keep(w))
    system_total = sum(1 for w in system.words if keep(w))
    aligned = [p for p in pairs if keep(p.gold)]
    if key is None:
        return Score(correct=len(aligned), gold_total=gold_total, system_total=system_total)

    to_gold = {p.system: p.gold for p in pairs}

    def as_gold(word):
        return word

    def as_system(word):
        if isinstance(word, ScoredWord):
            return to_gold.get(word, NOT_ALIGNED)
        return word

    correct = sum(1 for p in aligned if key(p.gold, as_gold) == key(p.system, as_system))
    return Score(
        correct=correct,
        gold_total=gold_total,
        system_total=system_total,
        aligned_total=len(aligned),
    )


def _lemma(word: ScoredWord, resolve: Callable) -> str:
    """A gold lemma of ``_`` matches any system lemma."""
    gold = resolve(word)
    if isinstance(gold, ScoredWord) and gold.lemma == EMPTY:
        return EMPTY
    return word.lemma


def _content(word: ScoredWord) -> bool:
    return word.is_content


def compute_pmi(report: EvalReport) -> Optional[float]:
    """``ln(AllTags / (UPOS * XPOS * UFeats))`` over aligned accuracies.

    Returns None when any of the four accuracies is missing or zero.
    """
    values = [
        report.metrics[m].aligned_accuracy if m in report.metrics else None
        for m in PMI_METRICS
    ]
    if any(v is None or v <= 0 for v in values):
        return None
    upos, xpos, ufeats, alltags = values
    return math.log(alltags / (upos * xpos * ufeats))


def evaluate(
    gold_doc: Document, system_doc: Document, raw: Optional[str] = None
) -> EvalReport:
    """Every shared-task metric of ``system_doc`` against ``gold_doc``, plus PMI.

    ``raw`` is the text the system was run on; when given it must spell the gold characters.

    Raises:
        AlignmentError: If the documents (or ``raw``) do not spell the same characters.
    """
    gold = scoring_view(gold_doc)
    system = scoring_view(system_doc)
    if raw is not None:
        text = "".join(c for c in raw if not c.isspace())
        _check_same_text(text, gold.characters, "raw and gold")
    pairs = align(gold, system)

    def score(key=None, only=None) -> Score:
        return compute_f1(gold, system, pairs, key, only)

    scores = {
        "Tokens": spans_score(gold.tokens, system.tokens),
        "Sentences": spans_score(gold.sentences, system.sentences),
        "Words": score(),
        "UPOS": score(lambda w, _: w.upos),
        "XPOS": score(lambda w, _: w.xpos),
        "UFeats": score(lambda w, _: w.feats),
        "AllTags": score(lambda w, _: (w.upos, w.xpos, w.feats)),
        "Lemmas": score(_lemma),
        "UAS": score(lambda w, r: r(w.parent)),
        "LAS": score(lambda w, r: (r(w.parent), w.deprel)),
        "CLAS": score(lambda w, r: (r(w.parent), w.deprel), _content),
        "MLAS": score(
            lambda w, r: (
                r(w.parent),
                w.deprel,
                w.upos,
                w.feats,
                [(r(c), c.deprel, c.upos, c.feats) for c in w.functional_children],
            ),
            _content,
        ),
        "BLEX": score(lambda w, r: (r(w.parent), w.deprel, _lemma(w, r)), _content),
    }
    report = EvalReport(metrics={name: MetricValue.of(scores[name]) for name in METRICS})
    return report.model_copy(update={"pmi": compute_pmi(report)})


def macro_average(reports: Sequence[EvalReport]) -> EvalReport:
    """Unweighted mean of every metric; PMI is averaged only when defined everywhere."""
    if not reports:
        raise ValueError("need at least one report to average")
    names = [name for name in reports[0].metrics if all(name in r.metrics for r in reports)]

    def mean(values: list[Optional[float]]) -> Optional[float]:
        if any(v is None for v in values):
            return None
        return sum(values) / len(values)

    metrics = {}
    for name in names:
        values = [r.metrics[name] for r in reports]
        metrics[name] = MetricValue(
            precision=mean([v.precision for v in values]),
            recall=mean([v.recall for v in values]),
            f1=mean([v.f1 for v in values]),
            aligned_accuracy=mean([v.aligned_accuracy for v in values]),
        )
    return EvalReport(metrics=metrics, pmi=mean([r.pmi for r in reports]))


def render_table(report: EvalReport) -> str:
    lines = [
        "Metric     | Precision |    Recall |  F1 Score | AligndAcc",
        "-----------+-----------+-----------+-----------+-----------",
    ]
    for name, value in report.metrics.items():
        accuracy = (
            f"{100 * value.aligned_accuracy:10.2f}" if value.aligned_accuracy is not None else ""
        )
        lines.append(
            f"{name:11}|{100 * value.precision:10.2f} |{100 * value.recall:10.2f} "
            f"|{100 * value.f1:10.2f} |{accuracy}"
        )
    lines.append(f"PMI        | {report.pmi:.4f}" if report.pmi is not None else "PMI        | n/a")
    return "\n".join(lines) + "\n"


def render_key_values(report: EvalReport) -> str:
    lines = []
    for name, value in report.metrics.items():
        key = name.lower()
        lines.append(f"{key}_precision={value.precision:.6f}")
        lines.append(f"{key}_recall={value.recall:.6f}")
        lines.append(f"{key}_f1={value.f1:.6f}")
        if value.aligned_accuracy is not None:
            lines.append(f"{key}_aligned_accuracy={value.aligned_accuracy:.6f}")
    lines.append(f"pmi={report.pmi:.6f}" if report.pmi is not None else "pmi=nan")
    return "\n".join(lines) + "\n"
