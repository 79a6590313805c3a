from collections import Counter
from typing import Optional

from pydantic import BaseModel, Field

from app.core.errors import DataError
from app.features.conllu.models import Document


class ExpansionLexicon(BaseModel):
    """Lowercased MWT form -> most frequent lowercased expansion seen in training."""

    expansions: dict[str, tuple[str, ...]] = Field(default_factory=dict)
    counts: dict[str, int] = Field(
        default_factory=dict, description="How often the kept expansion was observed"
    )

    def __len__(self) -> int:
        return len(self.expansions)

    def __contains__(self, form: str) -> bool:
        return form in self.expansions

    def lookup(self, form: str) -> Optional[tuple[str, ...]]:
        return self.expansions.get(form)

    @classmethod
    def build(cls, doc: Document) -> "ExpansionLexicon":
        """Count expansions of every MWT in ``doc``; ties keep the first one seen."""
        observed: dict[str, Counter] = {}
        for sentence in doc.sentences:
            for token in sentence.tokens:
                if not token.is_mwt:
                    continue
                words = tuple(w.form.lower() for w in sentence.token_words(token))
                observed.setdefault(token.form.lower(), Counter())[words] += 1
        expansions, counts = {}, {}
        for form, counter in observed.items():
            words, count = counter.most_common(1)[0]
            expansions[form] = words
            counts[form] = count
        return cls(expansions=expansions, counts=counts)

    def to_text(self) -> str:
        lines = [
            f"{form}\t{' '.join(self.expansions[form])}\t{self.counts.get(form, 0)}"
            for form in sorted(self.expansions)
        ]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text: str) -> "ExpansionLexicon":
        expansions, counts = {}, {}
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[1].strip():
                raise DataError(f"line {number}: expected 'form<TAB>words<TAB>count'")
            expansions[parts[0]] = tuple(parts[1].split(" "))
            counts[parts[0]] = int(parts[2])
        return cls(expansions=expansions, counts=counts)


def build_lexicon(doc: Document) -> ExpansionLexicon:
    return ExpansionLexicon.build(doc)
