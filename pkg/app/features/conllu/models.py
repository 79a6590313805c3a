from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

ROOT_DEPREL = "root"
EMPTY = "_"


def canonical_feats(feats: str) -> str:
    """Sort a ``Key=Val|Key=Val`` bundle by key; ``_`` and empty both mean no features."""
    if not feats or feats == EMPTY:
        return EMPTY
    pairs: dict[str, str] = {}
    for item in feats.split("|"):
        if not item:
            continue
        key, _, value = item.partition("=")
        if key in pairs:
            raise ValueError(f"duplicate feature key '{key}' in '{feats}'")
        pairs[key] = value
    if not pairs:
        return EMPTY
    return "|".join(f"{key}={pairs[key]}" for key in sorted(pairs))


def validate_tree(heads: list[int]) -> None:
    """Check that ``heads`` (1-based word order, 0 = root) form a single-rooted tree.

    Raises:
        ValueError: On out-of-range heads, self loops, zero or several roots, or cycles.
    """
    n = len(heads)
    roots = [i for i, head in enumerate(heads, start=1) if head == 0]
    if len(roots) != 1:
        raise ValueError(f"expected exactly one root, found {len(roots)}")
    for i, head in enumerate(heads, start=1):
        if head < 0 or head > n:
            raise ValueError(f"word {i}: head {head} outside the sentence")
        if head == i:
            raise ValueError(f"word {i} is its own head")
    # every word must reach the root within n steps
    for i in range(1, n + 1):
        seen = set()
        node = i
        while node != 0:
            if node in seen:
                raise ValueError(f"cycle through word {node}")
            seen.add(node)
            node = heads[node - 1]


class Word(BaseModel):
    """One syntactic word (a CoNLL-U word line)."""

    model_config = ConfigDict(frozen=True)

    id: int = Field(ge=1)
    form: str
    lemma: str = ""
    upos: str = EMPTY
    xpos: str = EMPTY
    ufeats: str = EMPTY
    head: Optional[int] = Field(default=None, ge=0)
    deprel: str = EMPTY
    deps: str = EMPTY
    misc: str = EMPTY

    @model_validator(mode="after")
    def _check(self) -> "Word":
        if self.ufeats != canonical_feats(self.ufeats):
            raise ValueError(f"ufeats '{self.ufeats}' is not canonically sorted")
        if self.head is not None and self.deprel != EMPTY:
            is_root = self.deprel.split(":")[0] == ROOT_DEPREL
            if (self.head == 0) != is_root:
                raise ValueError(
                    f"word {self.id}: head 0 requires deprel 'root' and vice versa"
                )
        return self


class Token(BaseModel):
    """A surface token covering one or more consecutive words."""

    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=1)
    end: int = Field(ge=1)
    form: str
    misc: str = EMPTY
    needs_expansion: bool = Field(
        default=False,
        description="Flagged as a multi-word token by the tokenizer but not expanded yet",
    )

    @computed_field
    @property
    def is_mwt(self) -> bool:
        return self.end > self.start

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end

    @model_validator(mode="after")
    def _check(self) -> "Token":
        if self.end < self.start:
            raise ValueError(f"token span {self.start}-{self.end} is reversed")
        return self


def validate_sentence(words: tuple["Word", ...], tokens: tuple["Token", ...]) -> None:
    """Check word ids, token coverage and (when every head is set) the tree."""
    for expected, word in enumerate(words, start=1):
        if word.id != expected:
            raise ValueError(f"word ids must be 1..n without gaps, found {word.id}")
    position = 1
    for token in tokens:
        if token.start != position:
            raise ValueError(
                f"token {token.start}-{token.end} does not continue at word {position}"
            )
        position = token.end + 1
    if position != len(words) + 1:
        raise ValueError("tokens do not cover every word")
    for word in words:
        if word.head is not None and word.head > len(words):
            raise ValueError(f"word {word.id}: head {word.head} outside the sentence")
    if words and all(word.head is not None for word in words):
        validate_tree([word.head for word in words])


class Sentence(BaseModel):
    model_config = ConfigDict(frozen=True)

    words: tuple[Word, ...]
    tokens: tuple[Token, ...]
    text: Optional[str] = None
    comments: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "Sentence":
        validate_sentence(self.words, self.tokens)
        return self

    @property
    def heads(self) -> list[Optional[int]]:
        return [word.head for word in self.words]

    @property
    def has_tree(self) -> bool:
        return bool(self.words) and all(word.head is not None for word in self.words)

    def token_words(self, token: Token) -> tuple[Word, ...]:
        return self.words[token.start - 1 : token.end]


class Document(BaseModel):
    model_config = ConfigDict(frozen=True)

    sentences: tuple[Sentence, ...] = ()
    raw_text: Optional[str] = None

    @property
    def words(self) -> list[Word]:
        return [word for sentence in self.sentences for word in sentence.words]

    @property
    def tokens(self) -> list[Token]:
        return [token for sentence in self.sentences for token in sentence.tokens]
