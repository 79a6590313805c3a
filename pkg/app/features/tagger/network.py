from typing import NamedTuple, Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from app.features.neural.embeddings import WordBatch, WordInputEmbedder
from app.features.neural.layers import MLP, Biaffine, HighwayBiLSTM
from app.features.tagger.models import IGNORE, XposStrategy


class TaggerOutput(NamedTuple):
    """Per-word logits: UPOS, one block per XPOS classifier, one block per feature key."""

    upos: torch.Tensor
    xpos: list[torch.Tensor]
    feats: list[torch.Tensor]


def _fc(input_dim: int, output_dim: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(nn.Linear(input_dim, output_dim), nn.ReLU(), nn.Dropout(dropout))


def _split(scores: torch.Tensor, sizes: Sequence[int]) -> list[torch.Tensor]:
    return list(torch.split(scores, list(sizes), dim=-1)) if sizes else []


class TaggerNetwork(nn.Module):
    """Highway BiLSTM tagger.

    XPOS and feature classifiers are biaffine in an embedding of the UPOS tag (gold
    when given, otherwise the predicted one). The ``shared_fc`` strategy instead feeds
    all three classifiers from one FC layer with no UPOS conditioning.
    """

    def __init__(
        self,
        embedder: WordInputEmbedder,
        num_upos: int,
        xpos_sizes: Sequence[int],
        feat_sizes: Sequence[int],
        strategy: XposStrategy,
        tag_dim: int = 50,
        hidden_dim: int = 200,
        num_layers: int = 2,
        fc_dim: int = 400,
        feat_fc_dim: int = 100,
        dropout: float = 0.5,
        rec_dropout: float = 0.5,
    ):
        super().__init__()
        self.strategy = strategy
        self.xpos_sizes = list(xpos_sizes)
        self.feat_sizes = list(feat_sizes)
        self.embedder = embedder
        self.input_dropout = nn.Dropout(dropout)
        self.encoder = HighwayBiLSTM(
            embedder.output_dim, hidden_dim, num_layers, dropout, rec_dropout
        )
        states = self.encoder.output_dim
        if strategy == "shared_fc":
            self.shared_fc = _fc(states, fc_dim, dropout)
            self.upos_out = nn.Linear(fc_dim, num_upos)
            self.xpos_out = nn.Linear(fc_dim, sum(self.xpos_sizes))
            self.feats_out = nn.Linear(fc_dim, sum(self.feat_sizes)) if self.feat_sizes else None
            return
        self.upos_mlp = MLP(states, fc_dim, num_upos, dropout)
        self.upos_embedding = nn.Embedding(num_upos, tag_dim)
        self.xpos_fc = _fc(states, fc_dim, dropout)
        self.xpos_biaffine = Biaffine(fc_dim, tag_dim, sum(self.xpos_sizes))
        self.feat_fc = _fc(states, feat_fc_dim, dropout) if self.feat_sizes else None
        self.feat_biaffine = (
            Biaffine(feat_fc_dim, tag_dim, sum(self.feat_sizes)) if self.feat_sizes else None
        )

    def encode(self, batch: WordBatch) -> torch.Tensor:
        embedded = self.embedder(
            batch.words, batch.chars, batch.char_lengths, batch.mask, batch.pretrained
        )
        return self.encoder(self.input_dropout(embedded), batch.lengths)

    def forward(self, batch: WordBatch, upos: Optional[torch.Tensor] = None) -> TaggerOutput:
        """Score every word of a padded batch.

        Args:
            batch: Encoded sentences.
            upos: ``(batch, time)`` UPOS indices to condition on; padding may hold any
                value. Predicted tags are used when omitted.

        Returns:
            TaggerOutput: Logits, ``(batch, time, classes)`` each.
        """
        states = self.encode(batch)
        if self.strategy == "shared_fc":
            shared = self.shared_fc(states)
            feats = self.feats_out(shared) if self.feats_out is not None else None
            return TaggerOutput(
                self.upos_out(shared),
                _split(self.xpos_out(shared), self.xpos_sizes),
                _split(feats, self.feat_sizes) if feats is not None else [],
            )
        upos_scores = self.upos_mlp(states)
        condition = upos_scores.argmax(-1) if upos is None else upos.clamp(min=0)
        tag = self.upos_embedding(condition)
        xpos = self.xpos_biaffine.pointwise(self.xpos_fc(states), tag)
        feats: list[torch.Tensor] = []
        if self.feat_biaffine is not None:
            feats = _split(self.feat_biaffine.pointwise(self.feat_fc(states), tag), self.feat_sizes)
        return TaggerOutput(upos_scores, _split(xpos, self.xpos_sizes), feats)


def _ce(logits: torch.Tensor, gold: torch.Tensor) -> torch.Tensor:
    if not bool((gold != IGNORE).any()):
        return logits.sum() * 0.0
    return F.cross_entropy(
        logits.reshape(-1, logits.size(-1)), gold.reshape(-1), ignore_index=IGNORE
    )


def tagger_loss(
    output: TaggerOutput,
    upos: torch.Tensor,
    xpos: torch.Tensor,
    feats: torch.Tensor,
) -> torch.Tensor:
    """Summed cross-entropy of UPOS, every XPOS classifier and every feature key.

    Args:
        output: Network logits.
        upos: ``(batch, time)`` gold indices, ``IGNORE`` on padding and unknown labels.
        xpos: ``(batch, time, xpos classifiers)``.
        feats: ``(batch, time, feature keys)``.
    """
    loss = _ce(output.upos, upos)
    for position, logits in enumerate(output.xpos):
        loss = loss + _ce(logits, xpos[..., position])
    for position, logits in enumerate(output.feats):
        loss = loss + _ce(logits, feats[..., position])
    return loss


def predict(output: TaggerOutput) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Argmax indices; ties resolve to the lowest index."""
    upos = output.upos.argmax(-1)
    xpos = torch.stack([logits.argmax(-1) for logits in output.xpos], dim=-1)
    if output.feats:
        feats = torch.stack([logits.argmax(-1) for logits in output.feats], dim=-1)
    else:
        feats = upos.new_zeros((*upos.shape, 0))
    return upos, xpos, feats
