import random
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import torch
from loguru import logger

from app.core.config import TaggerSettings
from app.core.errors import DataError
from app.core.storage import load_checkpoint, save_checkpoint
from app.features.conllu.models import Document, Sentence
from app.features.neural.embeddings import (
    PretrainedEmbeddings,
    WordBatch,
    WordInputEmbedder,
    encode_words,
)
from app.features.neural.schedule import OptimizerSchedule, ScheduleResult, run_schedule
from app.features.neural.vocab import Vocab
from app.features.tagger.models import IGNORE, TagSpaces
from app.features.tagger.network import TaggerNetwork, predict, tagger_loss

KIND = "tagger"

Tags = tuple[str, str, str]


def build_network(
    words: Vocab,
    chars: Vocab,
    spaces: TagSpaces,
    settings: TaggerSettings,
    pretrained_shape: Optional[tuple[int, int]] = None,
) -> TaggerNetwork:
    embedder = WordInputEmbedder(
        len(words),
        settings.word_dim,
        len(chars),
        settings.char_dim,
        settings.char_hidden,
        settings.char_out_dim,
        pretrained_shape=pretrained_shape,
        pretrained_dim=settings.pretrained_dim,
        word_dropout=settings.word_dropout,
        dropout=settings.dropout,
        pad_id=words.pad_id,
        drop_id=words.drop_id,
    )
    return TaggerNetwork(
        embedder,
        num_upos=len(spaces.upos),
        xpos_sizes=[len(v) for v in spaces.xpos],
        feat_sizes=[len(v) for v in spaces.feats],
        strategy=spaces.strategy,
        tag_dim=settings.tag_dim,
        hidden_dim=settings.hidden_dim,
        num_layers=settings.num_layers,
        fc_dim=settings.fc_dim,
        feat_fc_dim=settings.feat_fc_dim,
        dropout=settings.dropout,
        rec_dropout=settings.rec_dropout,
    )


class TaggerService:
    """Predicts UPOS, XPOS and UFeats for already tokenized sentences."""

    def __init__(
        self,
        network: TaggerNetwork,
        words: Vocab,
        chars: Vocab,
        spaces: TagSpaces,
        settings: TaggerSettings,
        pretrained: Optional[Vocab] = None,
    ):
        self.network = network
        self.words = words
        self.chars = chars
        self.spaces = spaces
        self.settings = settings
        self.pretrained = pretrained

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    def encode(self, sentences: Sequence[Sequence[str]]) -> WordBatch:
        return encode_words(sentences, self.words, self.chars, self.pretrained, self.device)

    def gold(self, sentences: Sequence[Sentence]) -> tuple[torch.Tensor, ...]:
        """Gold index tensors, ``IGNORE`` on padding and labels unseen in training."""
        width = max(len(s.words) for s in sentences)
        upos = torch.full((len(sentences), width), IGNORE, dtype=torch.long)
        xpos = torch.full((len(sentences), width, len(self.spaces.xpos)), IGNORE, dtype=torch.long)
        feats = torch.full(
            (len(sentences), width, len(self.spaces.feats)), IGNORE, dtype=torch.long
        )
        for row, sentence in enumerate(sentences):
            for col, word in enumerate(sentence.words):
                upos[row, col] = self.spaces.encode_upos(word.upos)
                xpos[row, col] = torch.tensor(self.spaces.encode_xpos(word.xpos))
                if self.spaces.feats:
                    feats[row, col] = torch.tensor(self.spaces.encode_feats(word.ufeats))
        return upos.to(self.device), xpos.to(self.device), feats.to(self.device)

    def tag_words(
        self, forms: Sequence[str], gold_upos: Optional[Sequence[str]] = None
    ) -> list[Tags]:
        """Tag one sentence.

        Args:
            forms: Word forms, at least one.
            gold_upos: UPOS tags to condition XPOS and UFeats on instead of the
                predicted ones; they are also returned as the UPOS.

        Returns:
            list[Tags]: ``(upos, xpos, ufeats)`` per word.
        """
        if not forms:
            raise DataError("cannot tag an empty sentence")
        self.network.eval()
        condition = None
        if gold_upos is not None:
            condition = torch.tensor(
                [[max(self.spaces.encode_upos(t), 0) for t in gold_upos]], device=self.device
            )
        with torch.no_grad():
            output = self.network(self.encode([list(forms)]), condition)
            upos, xpos, feats = predict(output)
        predicted = self.spaces.upos.decode(upos[0].tolist())
        labels = list(gold_upos) if gold_upos is not None else predicted
        return [
            (
                labels[i],
                self.spaces.decode_xpos(xpos[0, i].tolist()),
                self.spaces.decode_feats(feats[0, i].tolist()),
            )
            for i in range(len(forms))
        ]

    def tag_sentence(self, sentence: Sentence) -> Sentence:
        tags = self.tag_words([w.form for w in sentence.words])
        words = tuple(
            word.model_copy(update={"upos": upos, "xpos": xpos, "ufeats": ufeats})
            for word, (upos, xpos, ufeats) in zip(sentence.words, tags)
        )
        return sentence.model_copy(update={"words": words})

    def tag_document(self, doc: Document, workers: int = 1) -> Document:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sentences = list(pool.map(self.tag_sentence, doc.sentences))
        else:
            sentences = [self.tag_sentence(s) for s in doc.sentences]
        return doc.model_copy(update={"sentences": tuple(sentences)})

    def accuracy(self, doc: Document) -> dict[str, float]:
        """Word-level UPOS, XPOS, UFeats and all-tags accuracy against ``doc``."""
        hits = {"upos": 0, "xpos": 0, "ufeats": 0, "alltags": 0}
        total = 0
        for sentence in doc.sentences:
            for word, (upos, xpos, ufeats) in zip(
                sentence.words, self.tag_words([w.form for w in sentence.words])
            ):
                same = (upos == word.upos, xpos == word.xpos, ufeats == word.ufeats)
                hits["upos"] += same[0]
                hits["xpos"] += same[1]
                hits["ufeats"] += same[2]
                hits["alltags"] += all(same)
                total += 1
        return {key: value / total if total else 0.0 for key, value in hits.items()}

    def dev_metric(self, doc: Document) -> float:
        scores = self.accuracy(doc)
        return (scores["upos"] + scores["xpos"] + scores["ufeats"]) / 3

    @classmethod
    def train(
        cls,
        train_doc: Document,
        dev_doc: Document,
        settings: TaggerSettings,
        embeddings: Optional[PretrainedEmbeddings] = None,
    ) -> tuple["TaggerService", ScheduleResult]:
        """Train a tagger with gold UPOS conditioning.

        Args:
            train_doc: Fully tagged training document.
            dev_doc: Development document used for model selection.
            settings: Tagger hyperparameters.
            embeddings: Frozen pretrained vectors, optional.

        Returns:
            tuple[TaggerService, ScheduleResult]: The best-dev tagger and its log.
        """
        sentences = [s for s in train_doc.sentences if s.words]
        if not sentences:
            raise DataError("no training sentences for the tagger")
        spaces = TagSpaces.build(train_doc, settings.xpos_strategy, settings.max_xpos_biaffine)
        forms = [w.form for w in train_doc.words]
        words = Vocab.build((f.lower() for f in forms), settings.min_word_count)
        chars = Vocab.build(c for f in forms for c in f)
        shape = None
        if embeddings is not None:
            embeddings.missing(forms)
            shape = tuple(embeddings.matrix.shape)
        network = build_network(words, chars, spaces, settings, shape)
        if embeddings is not None:
            network.embedder.load_pretrained(embeddings.matrix)
        service = cls(
            network, words, chars, spaces, settings, embeddings.vocab if embeddings else None
        )
        logger.info(
            f"Tagger: {len(sentences)} sentences, {len(spaces.upos)} UPOS, "
            f"XPOS strategy {spaces.strategy}, {len(spaces.feat_keys)} feature keys"
        )

        def train_step(step: int) -> torch.Tensor:
            batch = random.sample(sentences, min(settings.batch_size, len(sentences)))
            upos, xpos, feats = service.gold(batch)
            output = network(service.encode([[w.form for w in s.words] for s in batch]), upos)
            return tagger_loss(output, upos, xpos, feats)

        schedule = OptimizerSchedule(
            lr=settings.lr,
            beta1=settings.beta1,
            beta2=settings.beta2,
            max_steps=settings.max_steps,
            eval_interval=settings.eval_interval,
            patience=settings.patience,
            on_decrease="switch",
            max_grad_norm=settings.max_grad_norm,
        )
        result = run_schedule(network, schedule, train_step, lambda: service.dev_metric(dev_doc))
        return service, result

    def save(self, path: Path) -> Path:
        vocabs = {"words": self.words.to_dict(), "chars": self.chars.to_dict()}
        shape = None
        if self.pretrained is not None:
            vocabs["pretrained"] = self.pretrained.to_dict()
            shape = list(self.network.embedder.pretrained.weight.shape)
        return save_checkpoint(
            path,
            KIND,
            self.network,
            hyperparams=self.settings.model_dump(),
            vocabs=vocabs,
            extras={"spaces": self.spaces.to_dict(), "pretrained_shape": shape},
        )

    @classmethod
    def load(cls, path: Path) -> "TaggerService":
        payload = load_checkpoint(path, KIND)
        settings = TaggerSettings(**payload["hyperparams"])
        vocabs = payload["vocabs"]
        words = Vocab.from_dict(vocabs["words"])
        chars = Vocab.from_dict(vocabs["chars"])
        pretrained = Vocab.from_dict(vocabs["pretrained"]) if "pretrained" in vocabs else None
        spaces = TagSpaces.from_dict(payload["extras"]["spaces"])
        shape = payload["extras"].get("pretrained_shape")
        network = build_network(words, chars, spaces, settings, tuple(shape) if shape else None)
        network.load_state_dict(payload["params"])
        network.eval()
        return cls(network, words, chars, spaces, settings, pretrained)
