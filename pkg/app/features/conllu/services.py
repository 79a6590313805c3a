from app.core.errors import DataError
from app.features.conllu.models import Document, Sentence, Token
from app.features.conllu.parsers import misc_items

NEWPAR = "# newpar"
NO_SPACE = "SpaceAfter=No"


def train_dev_split(doc: Document, ratio: int = 8) -> tuple[Document, Document]:
    """Deterministically split a treebank: every ``ratio``-th sentence goes to dev.

    Args:
        doc: The full training document.
        ratio: Period of the dev selection; 8 gives the 7:1 split.

    Returns:
        tuple[Document, Document]: (train, dev), both in original order.
    """
    if ratio < 2:
        raise DataError(f"split ratio must be at least 2, got {ratio}")
    if len(doc.sentences) < ratio:
        raise DataError(
            f"need at least {ratio} sentences to split, found {len(doc.sentences)}"
        )
    train = [s for i, s in enumerate(doc.sentences) if i % ratio != ratio - 1]
    dev = [s for i, s in enumerate(doc.sentences) if i % ratio == ratio - 1]
    return Document(sentences=tuple(train)), Document(sentences=tuple(dev))


def space_after(token: Token) -> bool:
    return NO_SPACE not in misc_items(token.misc)


def starts_paragraph(sentence: Sentence) -> bool:
    return any(comment.strip().startswith(NEWPAR) for comment in sentence.comments)


def paragraphs(doc: Document) -> list[list[Sentence]]:
    """Group sentences by ``# newpar`` markers; a document without markers is one paragraph."""
    groups: list[list[Sentence]] = []
    for sentence in doc.sentences:
        if not groups or starts_paragraph(sentence):
            groups.append([])
        groups[-1].append(sentence)
    return groups


def sentence_surface(sentence: Sentence) -> str:
    parts = []
    for token in sentence.tokens:
        parts.append(token.form)
        if space_after(token):
            parts.append(" ")
    return "".join(parts)


def reconstruct_raw_text(doc: Document) -> str:
    """Rebuild the raw text of a document from token forms and spacing marks.

    Paragraphs are joined by a blank line. ``doc.raw_text`` wins when present.
    """
    if doc.raw_text is not None:
        return doc.raw_text
    blocks = []
    for group in paragraphs(doc):
        blocks.append("".join(sentence_surface(s) for s in group).strip())
    return "\n\n".join(blocks)
