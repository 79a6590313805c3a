from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, Optional, Sequence

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from app.core.config import LemmatizerSettings
from app.core.errors import DataError
from app.core.storage import load_checkpoint, save_checkpoint
from app.features.conllu.models import Document, Sentence
from app.features.lemmatizer.models import (
    EditLabel,
    LemmaLexicon,
    assign_edit_label,
    build_lemma_lexicons,
)
from app.features.lemmatizer.network import EditClassifier
from app.features.neural.vocab import Vocab, pad_batch
from app.features.seq2seq.network import EncoderOutput
from app.features.seq2seq.services import (
    EpochLog,
    Seq2SeqService,
    build_network,
    train_seq2seq,
)

KIND = "lemmatizer"

LemmaSource = Literal["pair", "word", "identity", "lowercase", "seq2seq", "fallback"]


class NeuralLemmatizer:
    """Seq2seq lemmatizer with an optional edit classifier on the encoder output."""

    def __init__(self, model: Seq2SeqService, edit_head: Optional[EditClassifier] = None):
        self.model = model
        self.edit_head = edit_head

    def classify(self, words: Sequence[str]) -> list[EditLabel]:
        if self.edit_head is None:
            return [EditLabel.SEQ2SEQ] * len(words)
        network = self.model.network
        network.eval()
        self.edit_head.eval()
        device = network.embedding.weight.device
        with torch.no_grad():
            src, lengths = pad_batch(
                [self.model.encode(w) for w in words], self.model.vocab.pad_id, device
            )
            encoder, _ = network.encode(src, lengths)
            labels = self.edit_head(encoder.final).argmax(-1)
        return [EditLabel(int(label)) for label in labels]

    def lemmatize(self, word: str, beam: int = 1) -> tuple[str, LemmaSource]:
        label = self.classify([word])[0]
        if label == EditLabel.IDENTITY:
            return word, "identity"
        if label == EditLabel.LOWERCASE:
            return word.lower(), "lowercase"
        lemma, _ = self.model.decode(word, beam)
        if not lemma:
            return word, "fallback"
        return lemma, "seq2seq"


def lemmatize_with_source(
    word: str,
    upos: str,
    lexicon: LemmaLexicon,
    neural: Optional[NeuralLemmatizer] = None,
    beam: int = 1,
) -> tuple[str, LemmaSource]:
    """Lemmatize ``word`` and report which step produced the lemma.

    Lookup order: ``(word, upos)`` dictionary, word dictionary, edit classifier, then
    the decoder. Without a network the word is its own lemma.
    """
    lemma = lexicon.lookup_pair(word, upos)
    if lemma is not None:
        return lemma, "pair"
    lemma = lexicon.lookup_word(word)
    if lemma is not None:
        return lemma, "word"
    if neural is None:
        return word, "fallback"
    return neural.lemmatize(word, beam)


def lemmatize(
    word: str,
    upos: str,
    lexicon: LemmaLexicon,
    neural: Optional[NeuralLemmatizer] = None,
    beam: int = 1,
) -> str:
    return lemmatize_with_source(word, upos, lexicon, neural, beam)[0]


class Lemmatizer:
    """Dictionary-first lemmatizer with a neural fallback.

    ``use_dictionaries`` and ``use_seq2seq`` in the settings switch either half off.
    """

    def __init__(
        self,
        lexicon: LemmaLexicon,
        neural: Optional[NeuralLemmatizer],
        settings: Optional[LemmatizerSettings] = None,
    ):
        self.settings = settings or LemmatizerSettings()
        self.lexicon = lexicon if self.settings.use_dictionaries else LemmaLexicon()
        self.neural = neural if self.settings.use_seq2seq else None

    def lemmatize(self, word: str, upos: str, beam: Optional[int] = None) -> str:
        beam = self.settings.beam_size if beam is None else beam
        return lemmatize(word, upos, self.lexicon, self.neural, beam)

    def lemmatize_sentence(self, sentence: Sentence) -> Sentence:
        words = tuple(
            word.model_copy(update={"lemma": self.lemmatize(word.form, word.upos)})
            for word in sentence.words
        )
        return sentence.model_copy(update={"words": words})

    def lemmatize_document(self, doc: Document, workers: int = 1) -> Document:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sentences = list(pool.map(self.lemmatize_sentence, doc.sentences))
        else:
            sentences = [self.lemmatize_sentence(s) for s in doc.sentences]
        return doc.model_copy(update={"sentences": tuple(sentences)})

    def accuracy(self, doc: Document, beam: int = 1) -> float:
        """Exact-match lemma accuracy using the gold UPOS of ``doc``."""
        words = [w for w in doc.words if w.lemma]
        if not words:
            return 0.0
        hits = sum(self.lemmatize(w.form, w.upos, beam) == w.lemma for w in words)
        return hits / len(words)

    def edit_type_report(self, doc: Document) -> dict[str, float]:
        """Share of each edit type the classifier predicts over the words of ``doc``."""
        forms = [w.form for w in doc.words]
        if not forms:
            return {label.name.lower(): 0.0 for label in EditLabel}
        if self.neural is None:
            predicted = [EditLabel.SEQ2SEQ] * len(forms)
        else:
            predicted = self.neural.classify(forms)
        counts = Counter(predicted)
        return {label.name.lower(): counts[label] / len(forms) for label in EditLabel}

    @staticmethod
    def pairs(doc: Document) -> list[tuple[str, str]]:
        return [(w.form, w.lemma) for w in doc.words if w.lemma]

    @classmethod
    def train(
        cls, train_doc: Document, dev_doc: Document, settings: LemmatizerSettings
    ) -> tuple["Lemmatizer", list[EpochLog]]:
        """Build the dictionaries and jointly train the decoder and edit classifier.

        The edit classifier's cross-entropy and the decoder's negative log-likelihood
        are summed with equal weight.
        """
        lexicon = build_lemma_lexicons(train_doc)
        train_pairs = cls.pairs(train_doc)
        if not train_pairs:
            raise DataError("no lemmas in the lemmatizer training data")
        logger.info(f"Lemmatizer: {len(lexicon)} lexicon pairs, {len(train_pairs)} training words")
        if not settings.use_seq2seq:
            return cls(lexicon, None, settings), []

        model = Seq2SeqService.create(train_pairs, settings)
        edit_head = None
        extra_loss = None
        if settings.use_edit:
            edit_head = EditClassifier(
                2 * settings.enc_hidden, settings.edit_fc_dim, settings.dropout
            )
            gold = torch.tensor([int(assign_edit_label(w, lemma)) for w, lemma in train_pairs])

            def extra_loss(encoder: EncoderOutput, indices: Sequence[int]) -> torch.Tensor:
                labels = gold[list(indices)].to(encoder.final.device)
                return F.cross_entropy(edit_head(encoder.final), labels)

        lemmatizer = cls(lexicon, NeuralLemmatizer(model, edit_head), settings)
        dev = dev_doc if dev_doc.words else train_doc
        log = train_seq2seq(
            model,
            train_pairs,
            settings,
            dev_metric=lambda: lemmatizer.accuracy(dev),
            extra_loss=extra_loss,
            extra_module=edit_head,
        )
        return lemmatizer, log

    def save(self, model_path: Path, lexicon_path: Path) -> None:
        lexicon_path = Path(lexicon_path)
        lexicon_path.parent.mkdir(parents=True, exist_ok=True)
        lexicon_path.write_text(self.lexicon.to_text(), encoding="utf-8")
        modules = nn.ModuleDict()
        vocabs = {}
        if self.neural is not None:
            modules["seq2seq"] = self.neural.model.network
            vocabs["chars"] = self.neural.model.vocab.to_dict()
            if self.neural.edit_head is not None:
                modules["edit"] = self.neural.edit_head
        save_checkpoint(
            model_path,
            KIND,
            modules,
            self.settings.model_dump(),
            vocabs,
            {
                "neural": self.neural is not None,
                "edit": self.neural is not None and self.neural.edit_head is not None,
            },
        )

    @classmethod
    def load(cls, model_path: Path, lexicon_path: Path) -> "Lemmatizer":
        lexicon = LemmaLexicon.from_text(Path(lexicon_path).read_text(encoding="utf-8"))
        payload = load_checkpoint(model_path, KIND)
        settings = LemmatizerSettings(**payload["hyperparams"])
        extras = payload["extras"]
        if not extras.get("neural"):
            return cls(lexicon, None, settings)
        vocab = Vocab.from_dict(payload["vocabs"]["chars"])
        modules = nn.ModuleDict({"seq2seq": build_network(len(vocab), settings, vocab.pad_id)})
        if extras.get("edit"):
            modules["edit"] = EditClassifier(
                2 * settings.enc_hidden, settings.edit_fc_dim, settings.dropout
            )
        modules.load_state_dict(payload["params"])
        modules.eval()
        edit_head = modules["edit"] if "edit" in modules else None
        neural = NeuralLemmatizer(Seq2SeqService(modules["seq2seq"], vocab), edit_head)
        return cls(lexicon, neural, settings)
