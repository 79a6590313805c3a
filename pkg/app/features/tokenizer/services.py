import random
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import torch
from loguru import logger

from app.core.config import TokenizerSettings
from app.core.errors import DataError
from app.core.storage import load_checkpoint, save_checkpoint
from app.features.conllu.models import Document, Sentence
from app.features.conllu.services import NEWPAR, reconstruct_raw_text
from app.features.neural.layers import word_dropout_replace
from app.features.neural.schedule import OptimizerSchedule, ScheduleResult, run_schedule
from app.features.neural.vocab import Vocab, pad_batch
from app.features.tokenizer.models import (
    Unit,
    UnitMode,
    UnitTag,
    decode_segments,
    gold_unit_tags,
    split_paragraphs,
    unitize,
)
from app.features.tokenizer.network import TokenizerNetwork, predict_tags, tokenizer_loss

KIND = "tokenizer"

TaggedParagraph = tuple[list[Unit], list[UnitTag]]


def tagged_paragraphs(
    doc: Document, raw: Optional[str], mode: str
) -> list[TaggedParagraph]:
    """Unitize raw text per paragraph and attach gold unit tags from ``doc``.

    Without raw text the surface is rebuilt from the document's forms and spacing.
    """
    text = raw if raw is not None else reconstruct_raw_text(doc)
    per_paragraph = [unitize(p, mode) for p in split_paragraphs(text)]
    flat = [unit for units in per_paragraph for unit in units]
    tags = gold_unit_tags(flat, doc.sentences)
    out: list[TaggedParagraph] = []
    offset = 0
    for units in per_paragraph:
        out.append((units, tags[offset : offset + len(units)]))
        offset += len(units)
    return out


def build_network(vocab: Vocab, settings: TokenizerSettings) -> TokenizerNetwork:
    return TokenizerNetwork(
        len(vocab),
        emb_dim=settings.emb_dim,
        hidden_dim=settings.hidden_dim,
        conv_channels=settings.conv_channels,
        conv_widths=settings.conv_widths,
        dropout=settings.dropout,
        gate_temperature=settings.gate_temperature,
        gate_noise=settings.gate_noise,
        use_gating=settings.use_gating,
        use_conv=settings.use_conv,
        pad_id=vocab.pad_id,
    )


def _features(units: Sequence[Unit]) -> list[list[float]]:
    return [[float(f) for f in unit.features] for unit in units]


class TokenizerService:
    """Joint tokenizer and sentence segmenter over character or syllable units."""

    def __init__(self, network: TokenizerNetwork, vocab: Vocab, settings: TokenizerSettings):
        self.network = network
        self.vocab = vocab
        self.settings = settings

    def _tensors(self, paragraphs: Sequence[Sequence[Unit]]):
        device = next(self.network.parameters()).device
        ids, lengths = pad_batch(
            [self.vocab.encode(u.key for u in units) for units in paragraphs],
            self.vocab.pad_id,
            device,
        )
        width = ids.size(1)
        features = torch.zeros(len(paragraphs), width, 4, device=device)
        for row, units in enumerate(paragraphs):
            if units:
                features[row, : len(units)] = torch.tensor(_features(units), device=device)
        return ids, features, lengths

    def predict(self, units: Sequence[Unit]) -> list[UnitTag]:
        if not units:
            return []
        self.network.eval()
        with torch.no_grad():
            ids, features, lengths = self._tensors([units])
            tags = predict_tags(self.network(ids, features, lengths))[0]
        return [UnitTag(int(t)) for t in tags[: len(units)]]

    def tokenize_paragraph(self, text: str) -> list[Sentence]:
        units = unitize(text, self.settings.unit_mode)
        return decode_segments(self.predict(units), units)

    def tokenize_text(self, raw: str, workers: int = 1) -> Document:
        """Tokenize and sentence-split raw text, one paragraph at a time.

        The first sentence of every paragraph carries a ``# newpar`` comment.
        """
        paragraphs = split_paragraphs(raw)
        if workers > 1 and len(paragraphs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self.tokenize_paragraph, paragraphs))
        else:
            results = [self.tokenize_paragraph(p) for p in paragraphs]
        sentences: list[Sentence] = []
        for group in results:
            for index, sentence in enumerate(group):
                if index == 0:
                    sentence = sentence.model_copy(
                        update={"comments": (NEWPAR, *sentence.comments)}
                    )
                sentences.append(sentence)
        return Document(sentences=tuple(sentences), raw_text=raw)

    def unit_accuracy(self, paragraphs: Sequence[TaggedParagraph]) -> float:
        correct = total = 0
        for units, gold in paragraphs:
            predicted = self.predict(units)
            correct += sum(p == g for p, g in zip(predicted, gold))
            total += len(gold)
        return correct / total if total else 0.0

    @classmethod
    def train(
        cls,
        train_doc: Document,
        dev_doc: Document,
        settings: TokenizerSettings,
        train_raw: Optional[str] = None,
        dev_raw: Optional[str] = None,
    ) -> tuple["TokenizerService", ScheduleResult]:
        """Train a tokenizer on gold documents aligned to their raw text.

        Args:
            train_doc: Gold training document.
            dev_doc: Gold development document.
            settings: Tokenizer hyperparameters.
            train_raw: Raw training text; rebuilt from the document when absent.
            dev_raw: Raw development text; rebuilt from the document when absent.

        Returns:
            tuple[TokenizerService, ScheduleResult]: The best-dev model and its log.

        Raises:
            DataError: If raw text and gold tokens cannot be aligned.
        """
        mode = settings.unit_mode
        train_pars = tagged_paragraphs(train_doc, train_raw, mode)
        dev_pars = tagged_paragraphs(dev_doc, dev_raw, mode)
        vocab = Vocab.build(
            (u.key for units, _ in train_pars for u in units), settings.min_unit_count
        )
        network = build_network(vocab, settings)
        service = cls(network, vocab, settings)

        chunks: list[TaggedParagraph] = []
        for units, tags in train_pars:
            for start in range(0, len(units), settings.max_seqlen):
                end = start + settings.max_seqlen
                chunks.append((units[start:end], tags[start:end]))
        if not chunks:
            raise DataError("no training text for the tokenizer")
        logger.info(f"Tokenizer: {len(chunks)} training chunks, {len(vocab)} unit types")

        def train_step(step: int) -> torch.Tensor:
            batch = random.sample(chunks, min(settings.batch_size, len(chunks)))
            ids, features, lengths = service._tensors([units for units, _ in batch])
            ids = word_dropout_replace(
                ids, settings.unit_dropout, vocab.unk_id, protected=ids == vocab.pad_id
            )
            gold = torch.full_like(ids, int(UnitTag.OTHER))
            for row, (_, tags) in enumerate(batch):
                gold[row, : len(tags)] = torch.tensor([int(t) for t in tags])
            mask = torch.arange(ids.size(1))[None, :] < lengths[:, None]
            return tokenizer_loss(network(ids, features, lengths), gold, mask.to(ids.device))

        schedule = OptimizerSchedule(
            lr=settings.lr,
            max_steps=settings.max_steps,
            eval_interval=settings.eval_interval,
            eval_after=settings.eval_after,
            on_decrease="decay",
            decay=settings.lr_decay,
        )
        result = run_schedule(
            network, schedule, train_step, lambda: service.unit_accuracy(dev_pars)
        )
        return service, result

    def save(self, path: Path) -> Path:
        return save_checkpoint(
            path,
            KIND,
            self.network,
            hyperparams=self.settings.model_dump(),
            vocabs={"units": self.vocab.to_dict()},
        )

    @classmethod
    def load(cls, path: Path, unit_mode: Optional[UnitMode] = None) -> "TokenizerService":
        """Rebuild a saved tokenizer; ``unit_mode`` replaces the mode it was trained with."""
        payload = load_checkpoint(path, KIND)
        settings = TokenizerSettings(**payload["hyperparams"])
        if unit_mode is not None and unit_mode != settings.unit_mode:
            logger.warning(f"Tokenizer trained on {settings.unit_mode} units, using {unit_mode}")
            settings = settings.model_copy(update={"unit_mode": unit_mode})
        vocab = Vocab.from_dict(payload["vocabs"]["units"])
        network = build_network(vocab, settings)
        network.load_state_dict(payload["params"])
        network.eval()
        return cls(network, vocab, settings)
