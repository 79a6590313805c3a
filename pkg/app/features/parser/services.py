import random
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import torch
from loguru import logger

from app.core.config import ParserSettings
from app.core.errors import DataError
from app.core.storage import load_checkpoint, save_checkpoint
from app.features.conllu.models import EMPTY, Document, Sentence
from app.features.neural.embeddings import PretrainedEmbeddings, WordInputEmbedder, encode_words
from app.features.neural.schedule import OptimizerSchedule, ScheduleResult, run_schedule
from app.features.neural.vocab import pad_batch
from app.features.parser.decoding import decode_mst
from app.features.parser.models import ParserVocabs, assign_relations, feat_symbols
from app.features.parser.network import (
    IGNORE,
    ParserBatch,
    ParserNetwork,
    ScoreTensors,
    parser_loss,
)

KIND = "parser"


def build_network(
    vocabs: ParserVocabs,
    settings: ParserSettings,
    pretrained_shape: Optional[tuple[int, int]] = None,
) -> ParserNetwork:
    embedder = WordInputEmbedder(
        len(vocabs.words),
        settings.word_dim,
        len(vocabs.chars),
        settings.char_dim,
        settings.char_hidden,
        settings.char_out_dim,
        pretrained_shape=pretrained_shape,
        pretrained_dim=settings.pretrained_dim,
        word_dropout=settings.word_dropout,
        dropout=settings.dropout,
        pad_id=vocabs.words.pad_id,
        drop_id=vocabs.words.drop_id,
    )
    return ParserNetwork(
        embedder,
        num_lemmas=len(vocabs.lemmas),
        num_upos=len(vocabs.upos),
        num_xpos=len(vocabs.xpos),
        num_feats=len(vocabs.feats),
        num_deprels=max(len(vocabs.deprels), 1),
        lemma_dim=settings.lemma_dim,
        tag_dim=settings.tag_dim,
        hidden_dim=settings.hidden_dim,
        num_layers=settings.num_layers,
        fc_dim=settings.fc_dim,
        dropout=settings.dropout,
        rec_dropout=settings.rec_dropout,
        use_linearization=settings.use_linearization,
        use_distance=settings.use_distance,
        pad_id=vocabs.words.pad_id,
    )


class ParserService:
    """Graph-based dependency parser over tagged and lemmatized sentences."""

    def __init__(self, network: ParserNetwork, vocabs: ParserVocabs, settings: ParserSettings):
        self.network = network
        self.vocabs = vocabs
        self.settings = settings

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    def batch(self, sentences: Sequence[Sentence]) -> ParserBatch:
        v = self.vocabs
        device = self.device
        words = encode_words(
            [[w.form for w in s.words] for s in sentences], v.words, v.chars, v.pretrained, device
        )

        def column(vocab, values) -> torch.Tensor:
            padded, _ = pad_batch([vocab.encode(vals) for vals in values], vocab.pad_id, device)
            return padded

        feats = [
            [v.feats.encode(feat_symbols(w.ufeats)) or [v.feats.pad_id] for w in s.words]
            for s in sentences
        ]
        width = max(len(ids) for sentence in feats for ids in sentence)
        feat_ids = torch.full(
            (len(sentences), words.words.size(1), width), v.feats.pad_id, dtype=torch.long
        )
        for row, sentence in enumerate(feats):
            for col, ids in enumerate(sentence):
                feat_ids[row, col, : len(ids)] = torch.tensor(ids)
        return ParserBatch(
            words=words,
            lemmas=column(v.lemmas, [[w.lemma.lower() for w in s.words] for s in sentences]),
            upos=column(v.upos, [[w.upos for w in s.words] for s in sentences]),
            xpos=column(v.xpos, [[w.xpos for w in s.words] for s in sentences]),
            feats=feat_ids.to(device),
        )

    def gold(self, sentences: Sequence[Sentence]) -> tuple[torch.Tensor, torch.Tensor]:
        """Gold heads and relations over ``n + 1`` positions, ``IGNORE`` on ROOT and padding."""
        width = max(len(s.words) for s in sentences) + 1
        heads = torch.full((len(sentences), width), IGNORE, dtype=torch.long)
        deprels = torch.full((len(sentences), width), IGNORE, dtype=torch.long)
        for row, sentence in enumerate(sentences):
            for word in sentence.words:
                if word.head is None:
                    continue
                heads[row, word.id] = word.head
                if word.deprel in self.vocabs.deprels:
                    deprels[row, word.id] = self.vocabs.deprels.index(word.deprel)
        return heads.to(self.device), deprels.to(self.device)

    def score(self, sentences: Sequence[Sentence]) -> ScoreTensors:
        return self.network(self.batch(sentences))

    def parse_sentence(self, sentence: Sentence) -> Sentence:
        """Attach every word: MST over the augmented edge scores, then relations."""
        if not sentence.words:
            raise DataError("cannot parse an empty sentence")
        self.network.eval()
        n = len(sentence.words)
        with torch.no_grad():
            scores = self.score([sentence])
            augmented = self.network.augmented_edge_scores(scores)[0, : n + 1, : n + 1]
            heads = decode_mst(augmented.double().cpu().numpy())
            relation = scores.relation[0, : n + 1, : n + 1].cpu().numpy()
        deprels = assign_relations(relation, heads, self.vocabs.deprels)
        words = tuple(
            word.model_copy(update={"head": head, "deprel": deprel})
            for word, head, deprel in zip(sentence.words, heads, deprels)
        )
        return sentence.model_copy(update={"words": words})

    def parse_document(self, doc: Document, workers: int = 1) -> Document:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sentences = list(pool.map(self.parse_sentence, doc.sentences))
        else:
            sentences = [self.parse_sentence(s) for s in doc.sentences]
        return doc.model_copy(update={"sentences": tuple(sentences)})

    def attachment_scores(self, doc: Document) -> tuple[float, float]:
        """``(UAS, LAS)`` of this parser on the gold-tokenized ``doc``."""
        correct_heads = correct_labels = total = 0
        for sentence in doc.sentences:
            parsed = self.parse_sentence(sentence)
            for gold, system in zip(sentence.words, parsed.words):
                total += 1
                if gold.head == system.head:
                    correct_heads += 1
                    correct_labels += gold.deprel.split(":")[0] == system.deprel.split(":")[0]
        if not total:
            return 0.0, 0.0
        return correct_heads / total, correct_labels / total

    @classmethod
    def train(
        cls,
        train_doc: Document,
        dev_doc: Document,
        settings: ParserSettings,
        embeddings: Optional[PretrainedEmbeddings] = None,
    ) -> tuple["ParserService", ScheduleResult]:
        """Train on gold trees; tags and lemmas are read from the documents as given.

        Args:
            train_doc: Training document with heads and relations.
            dev_doc: Development document, scored by LAS.
            settings: Parser hyperparameters.
            embeddings: Frozen pretrained vectors, optional.

        Returns:
            tuple[ParserService, ScheduleResult]: The best-dev parser and its log.
        """
        sentences = [s for s in train_doc.sentences if s.words and s.has_tree]
        if not sentences:
            raise DataError("no annotated trees in the parser training data")
        if any(w.deprel == EMPTY for s in sentences for w in s.words):
            logger.warning("Some training words have no relation label")
        vocabs = ParserVocabs.build(
            train_doc, settings.min_word_count, embeddings.vocab if embeddings else None
        )
        shape = None
        if embeddings is not None:
            embeddings.missing(w.form for w in train_doc.words)
            shape = tuple(embeddings.matrix.shape)
        network = build_network(vocabs, settings, shape)
        if embeddings is not None:
            network.embedder.load_pretrained(embeddings.matrix)
        service = cls(network, vocabs, settings)
        dev = Document(sentences=tuple(s for s in dev_doc.sentences if s.words and s.has_tree))
        logger.info(f"Parser: {len(sentences)} trees, {len(vocabs.deprels)} relations")

        def train_step(step: int) -> torch.Tensor:
            batch = random.sample(sentences, min(settings.batch_size, len(sentences)))
            heads, deprels = service.gold(batch)
            return parser_loss(
                network(service.batch(batch)),
                heads,
                deprels,
                settings.use_linearization,
                settings.use_distance,
            )

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
        result = run_schedule(
            network, schedule, train_step, lambda: service.attachment_scores(dev)[1]
        )
        return service, result

    def save(self, path: Path) -> Path:
        shape = None
        if self.vocabs.pretrained is not None:
            shape = list(self.network.embedder.pretrained.weight.shape)
        return save_checkpoint(
            path,
            KIND,
            self.network,
            hyperparams=self.settings.model_dump(),
            vocabs=self.vocabs.to_dict(),
            extras={"pretrained_shape": shape},
        )

    @classmethod
    def load(cls, path: Path) -> "ParserService":
        payload = load_checkpoint(path, KIND)
        settings = ParserSettings(**payload["hyperparams"])
        vocabs = ParserVocabs.from_dict(payload["vocabs"])
        shape = payload["extras"].get("pretrained_shape")
        network = build_network(vocabs, settings, tuple(shape) if shape else None)
        network.load_state_dict(payload["params"])
        network.eval()
        return cls(network, vocabs, settings)
