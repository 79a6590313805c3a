"""Reader and writer for the CoNLL-U treebank format."""

import re
from pathlib import Path
from typing import Iterable, Optional, TextIO, Union

from pydantic import ValidationError

from app.core.errors import ConlluError
from app.features.conllu.models import (
    EMPTY,
    Document,
    Sentence,
    Token,
    Word,
    canonical_feats,
    validate_sentence,
)

COLUMNS = 10
TEXT_COMMENT = re.compile(r"^#\s*text\s*=\s?(.*)$")
RANGE_ID = re.compile(r"^(\d+)-(\d+)$")
EMPTY_NODE_ID = re.compile(r"^\d+\.\d+$")
PENDING_MWT = "MWT=Yes"


def misc_items(misc: str) -> list[str]:
    """Split a MISC column into its ``|``-separated items."""
    if not misc or misc == EMPTY:
        return []
    return [item for item in misc.split("|") if item]


def join_misc(items: Iterable[str]) -> str:
    items = list(items)
    return "|".join(items) if items else EMPTY


def read_conllu(stream: Union[TextIO, Iterable[str], str]) -> Document:
    """Parse CoNLL-U text into a Document.

    Args:
        stream: An open text stream, an iterable of lines, or the whole file as a string.

    Returns:
        Document: The parsed document; every sentence satisfies the model invariants.

    Raises:
        ConlluError: On malformed lines, with the offending line number.
    """
    lines = stream.splitlines() if isinstance(stream, str) else stream
    sentences: list[Sentence] = []
    block: list[tuple[int, str]] = []
    number = 0
    for number, line in enumerate(lines, start=1):
        line = line.rstrip("\n\r")
        if line.strip() == "":
            if block:
                sentences.append(_parse_block(block))
                block = []
            continue
        block.append((number, line))
    if block:
        sentences.append(_parse_block(block))
    return Document(sentences=tuple(sentences))


def _parse_block(block: list[tuple[int, str]]) -> Sentence:
    comments: list[str] = []
    text: Optional[str] = None
    words: list[Word] = []
    ranges: dict[int, tuple[int, str, str]] = {}
    open_range_end = 0

    for number, line in block:
        if line.startswith("#"):
            match = TEXT_COMMENT.match(line)
            if match and text is None:
                text = match.group(1)
            else:
                comments.append(line)
            continue

        columns = line.split("\t")
        if len(columns) != COLUMNS:
            raise ConlluError(
                f"expected {COLUMNS} tab-separated columns, found {len(columns)}",
                number,
            )
        raw_id = columns[0]

        if EMPTY_NODE_ID.match(raw_id):
            continue

        range_match = RANGE_ID.match(raw_id)
        if range_match:
            start, end = int(range_match.group(1)), int(range_match.group(2))
            if start != len(words) + 1:
                raise ConlluError(
                    f"range {raw_id} does not start at the next word id {len(words) + 1}",
                    number,
                )
            if end < start:
                raise ConlluError(f"range {raw_id} is reversed", number)
            if open_range_end >= start:
                raise ConlluError(f"range {raw_id} overlaps a previous range", number)
            ranges[start] = (end, columns[1], columns[9])
            open_range_end = end
            continue

        if not raw_id.isdigit():
            raise ConlluError(f"word id '{raw_id}' is not an integer", number)
        word_id = int(raw_id)
        if word_id != len(words) + 1:
            raise ConlluError(
                f"word id {word_id} breaks the sequence, expected {len(words) + 1}",
                number,
            )
        words.append(_parse_word(columns, number))

    first_line = block[0][0]
    if open_range_end > len(words):
        raise ConlluError(
            f"range ending at {open_range_end} exceeds the {len(words)} words", first_line
        )
    if not words:
        raise ConlluError("sentence without words", first_line)

    tokens: list[Token] = []
    position = 1
    while position <= len(words):
        if position in ranges:
            end, form, misc = ranges[position]
            tokens.append(Token(start=position, end=end, form=form, misc=misc))
            position = end + 1
            continue
        word = words[position - 1]
        tokens.append(
            Token(
                start=position,
                end=position,
                form=word.form,
                misc=word.misc,
                needs_expansion=PENDING_MWT in misc_items(word.misc),
            )
        )
        position += 1

    try:
        return Sentence(
            words=tuple(words), tokens=tuple(tokens), text=text, comments=tuple(comments)
        )
    except ValidationError as error:
        raise ConlluError(_first_message(error), first_line) from error


def _parse_word(columns: list[str], number: int) -> Word:
    word_id, form, lemma, upos, xpos, feats, head, deprel, deps, misc = columns
    if lemma == EMPTY and form != EMPTY:
        lemma = ""
    if head == EMPTY:
        head_value = None
    elif head.isdigit():
        head_value = int(head)
    else:
        raise ConlluError(f"head '{head}' is not an integer", number)
    try:
        return Word(
            id=int(word_id),
            form=form,
            lemma=lemma,
            upos=upos,
            xpos=xpos,
            ufeats=canonical_feats(feats),
            head=head_value,
            deprel=deprel,
            deps=deps,
            misc=misc,
        )
    except ValueError as error:
        message = (
            _first_message(error) if isinstance(error, ValidationError) else str(error)
        )
        raise ConlluError(message, number) from error


def _first_message(error: ValidationError) -> str:
    details = error.errors()
    return details[0]["msg"] if details else str(error)


def write_conllu(doc: Document) -> str:
    """Serialize a Document to CoNLL-U text.

    Raises:
        ConlluError: If a sentence violates the document invariants.
    """
    out: list[str] = []
    for index, sentence in enumerate(doc.sentences, start=1):
        try:
            validate_sentence(sentence.words, sentence.tokens)
        except ValueError as error:
            raise ConlluError(f"sentence {index} cannot be written: {error}") from error
        out.extend(sentence.comments)
        if sentence.text is not None:
            out.append(f"# text = {sentence.text}")
        for token in sentence.tokens:
            if token.is_mwt or sentence.token_words(token)[0].form != token.form:
                out.append(
                    "\t".join(
                        [f"{token.start}-{token.end}", token.form]
                        + [EMPTY] * 7
                        + [token.misc or EMPTY]
                    )
                )
            for word in sentence.token_words(token):
                misc = word.misc
                if token.needs_expansion and PENDING_MWT not in misc_items(misc):
                    misc = join_misc(misc_items(misc) + [PENDING_MWT])
                out.append(_format_word(word, misc))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def _format_word(word: Word, misc: str) -> str:
    return "\t".join(
        [
            str(word.id),
            word.form,
            word.lemma or EMPTY,
            word.upos or EMPTY,
            word.xpos or EMPTY,
            word.ufeats or EMPTY,
            EMPTY if word.head is None else str(word.head),
            word.deprel or EMPTY,
            word.deps or EMPTY,
            misc or EMPTY,
        ]
    )


def read_conllu_file(path: Union[str, Path]) -> Document:
    with open(path, "r", encoding="utf-8") as f:
        return read_conllu(f)


def write_conllu_file(doc: Document, path: Union[str, Path]) -> None:
    text = write_conllu(doc)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
