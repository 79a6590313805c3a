from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

from loguru import logger
from torch import nn

from app.core.config import MWTSettings
from app.core.storage import load_checkpoint, save_checkpoint
from app.features.conllu.models import Document, Sentence, Token, Word
from app.features.conllu.parsers import PENDING_MWT, join_misc, misc_items
from app.features.mwt.models import ExpansionLexicon
from app.features.neural.vocab import Vocab
from app.features.seq2seq.services import (
    EpochLog,
    Seq2SeqService,
    build_network,
    train_seq2seq,
)

KIND = "mwt"


def expand(
    form: str,
    lexicon: ExpansionLexicon,
    model: Optional[Seq2SeqService],
    beam: int = 8,
) -> list[str]:
    """Expand one token: dictionary, then lowercased dictionary, then the network.

    Never returns an empty list; without a usable network the token stays one word.
    """
    hit = lexicon.lookup(form)
    if hit is None:
        hit = lexicon.lookup(form.lower())
    if hit:
        return list(hit)
    if model is not None:
        text, _ = model.decode(form, beam)
        words = text.split()
        if words:
            return words
    return [form]


def _without_pending(misc: str) -> str:
    return join_misc(item for item in misc_items(misc) if item != PENDING_MWT)


class MWTExpander:
    """Expands tokens flagged by the tokenizer into syntactic words."""

    def __init__(
        self,
        lexicon: ExpansionLexicon,
        model: Optional[Seq2SeqService],
        settings: Optional[MWTSettings] = None,
    ):
        self.lexicon = lexicon
        self.settings = settings or MWTSettings()
        self.model = model if self.settings.use_neural else None

    def expand(self, form: str) -> list[str]:
        return expand(form, self.lexicon, self.model, self.settings.beam_size)

    def expand_sentence(self, sentence: Sentence) -> Sentence:
        """Replace pending tokens by their expansions and renumber the words.

        A single-word expansion becomes the word form; the token keeps its surface form.
        """
        if not any(token.needs_expansion for token in sentence.tokens):
            return sentence
        words: list[Word] = []
        tokens: list[Token] = []
        for token in sentence.tokens:
            start = len(words) + 1
            misc = _without_pending(token.misc)
            if token.needs_expansion:
                parts = self.expand(token.form)
                for offset, part in enumerate(parts):
                    words.append(Word(id=start + offset, form=part))
                tokens.append(
                    Token(start=start, end=start + len(parts) - 1, form=token.form, misc=misc)
                )
                continue
            for offset, word in enumerate(sentence.token_words(token)):
                words.append(
                    word.model_copy(update={"id": start + offset, "head": None, "deprel": "_"})
                )
            tokens.append(token.model_copy(update={"start": start, "end": len(words)}))
        return Sentence(
            words=tuple(words),
            tokens=tuple(tokens),
            text=sentence.text,
            comments=sentence.comments,
        )

    def expand_document(self, doc: Document, workers: int = 1) -> Document:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sentences = list(pool.map(self.expand_sentence, doc.sentences))
        else:
            sentences = [self.expand_sentence(s) for s in doc.sentences]
        return Document(sentences=tuple(sentences), raw_text=doc.raw_text)

    @staticmethod
    def pairs(doc: Document) -> list[tuple[str, str]]:
        return [
            (token.form, " ".join(w.form for w in sentence.token_words(token)))
            for sentence in doc.sentences
            for token in sentence.tokens
            if token.is_mwt
        ]

    @classmethod
    def train(
        cls, train_doc: Document, dev_doc: Document, settings: MWTSettings
    ) -> tuple["MWTExpander", list[EpochLog]]:
        """Build the lexicon and, when enabled and data allows, the neural expander.

        Returns:
            tuple[MWTExpander, list[EpochLog]]: The expander and the seq2seq epoch log
            (empty when no network was trained).
        """
        lexicon = ExpansionLexicon.build(train_doc)
        train_pairs = cls.pairs(train_doc)
        dev_pairs = cls.pairs(dev_doc) or train_pairs
        logger.info(f"MWT: {len(lexicon)} lexicon entries, {len(train_pairs)} training pairs")
        if not settings.use_neural or not train_pairs:
            return cls(lexicon, None, settings), []
        model = Seq2SeqService.create(train_pairs, settings)
        log = train_seq2seq(
            model, train_pairs, settings, dev_metric=lambda: model.exact_match(dev_pairs)
        )
        return cls(lexicon, model, settings), log

    def save(self, model_path: Path, lexicon_path: Path) -> None:
        lexicon_path = Path(lexicon_path)
        lexicon_path.parent.mkdir(parents=True, exist_ok=True)
        lexicon_path.write_text(self.lexicon.to_text(), encoding="utf-8")
        if self.model is None:
            save_checkpoint(
                model_path, KIND, nn.Module(), self.settings.model_dump(), {}, {"neural": False}
            )
            return
        save_checkpoint(
            model_path,
            KIND,
            self.model.network,
            self.settings.model_dump(),
            {"chars": self.model.vocab.to_dict()},
            {"neural": True},
        )

    @classmethod
    def load(cls, model_path: Path, lexicon_path: Path) -> "MWTExpander":
        lexicon = ExpansionLexicon.from_text(Path(lexicon_path).read_text(encoding="utf-8"))
        payload = load_checkpoint(model_path, KIND)
        settings = MWTSettings(**payload["hyperparams"])
        if not payload["extras"].get("neural"):
            return cls(lexicon, None, settings)
        vocab = Vocab.from_dict(payload["vocabs"]["chars"])
        network = build_network(len(vocab), settings, vocab.pad_id)
        network.load_state_dict(payload["params"])
        network.eval()
        return cls(lexicon, Seq2SeqService(network, vocab), settings)
