from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from app.features.neural.embeddings import WordBatch, WordInputEmbedder
from app.features.neural.layers import DeepBiaffine, HighwayBiLSTM

IGNORE = -100


class ParserBatch(NamedTuple):
    words: WordBatch
    lemmas: torch.Tensor  # (batch, time)
    upos: torch.Tensor  # (batch, time)
    xpos: torch.Tensor  # (batch, time)
    feats: torch.Tensor  # (batch, time, max feats), padded with the pad index


class ScoreTensors(NamedTuple):
    """Scores over ``n + 1`` positions (0 is ROOT); ``[b, i, j]`` is dependent i, head j."""

    edge: torch.Tensor
    linearization: torch.Tensor
    distance: torch.Tensor
    relation: torch.Tensor  # (batch, n + 1, n + 1, labels)
    mask: torch.Tensor  # (batch, n + 1), True on ROOT and real words


def signed_linearization(raw: torch.Tensor) -> torch.Tensor:
    """``sgn(i - j) * s[i, j]``: the sign flips wherever the dependent precedes its head."""
    n = raw.size(-1)
    positions = torch.arange(n, device=raw.device)
    sign = torch.sign(positions[:, None] - positions[None, :]).to(raw.dtype)
    return sign * raw


def distance_gap(raw: torch.Tensor) -> torch.Tensor:
    """``|i - j| - (1 + softplus(s[i, j]))``: observed minus predicted distance."""
    n = raw.size(-1)
    positions = torch.arange(n, device=raw.device)
    observed = (positions[:, None] - positions[None, :]).abs().to(raw.dtype)
    return observed - (1.0 + F.softplus(raw))


def linearization_log_prob(signed: torch.Tensor) -> torch.Tensor:
    return F.logsigmoid(signed)


def distance_log_prob(gap: torch.Tensor) -> torch.Tensor:
    """Unnormalized log Cauchy density ``-log(1 + gap^2 / 2)``."""
    return -torch.log1p(gap.pow(2) / 2.0)


class ParserNetwork(nn.Module):
    """Highway BiLSTM with deep biaffine edge, linearization, distance and relation heads."""

    def __init__(
        self,
        embedder: WordInputEmbedder,
        num_lemmas: int,
        num_upos: int,
        num_xpos: int,
        num_feats: int,
        num_deprels: int,
        lemma_dim: int = 75,
        tag_dim: int = 50,
        hidden_dim: int = 400,
        num_layers: int = 3,
        fc_dim: int = 400,
        dropout: float = 0.5,
        rec_dropout: float = 0.25,
        use_linearization: bool = True,
        use_distance: bool = True,
        pad_id: int = 0,
    ):
        super().__init__()
        self.use_linearization = use_linearization
        self.use_distance = use_distance
        self.embedder = embedder
        self.lemma_embedding = nn.Embedding(num_lemmas, lemma_dim, padding_idx=pad_id)
        self.upos_embedding = nn.Embedding(num_upos, tag_dim, padding_idx=pad_id)
        self.xpos_embedding = nn.Embedding(num_xpos, tag_dim, padding_idx=pad_id)
        self.feats_embedding = nn.Embedding(num_feats, tag_dim, padding_idx=pad_id)
        input_dim = embedder.output_dim + lemma_dim + 2 * tag_dim
        self.root = nn.Parameter(torch.randn(input_dim) * 0.01)
        self.input_dropout = nn.Dropout(dropout)
        self.encoder = HighwayBiLSTM(input_dim, hidden_dim, num_layers, dropout, rec_dropout)
        states = self.encoder.output_dim
        self.edge = DeepBiaffine(states, states, fc_dim, 1, dropout)
        self.linearization = DeepBiaffine(states, states, fc_dim, 1, dropout)
        self.distance = DeepBiaffine(states, states, fc_dim, 1, dropout)
        self.relation = DeepBiaffine(states, states, fc_dim, num_deprels, dropout)

    def embed(self, batch: ParserBatch) -> torch.Tensor:
        words = batch.words
        parts = [
            self.embedder(
                words.words, words.chars, words.char_lengths, words.mask, words.pretrained
            ),
            self.lemma_embedding(batch.lemmas),
            self.upos_embedding(batch.upos) + self.xpos_embedding(batch.xpos),
            self.feats_embedding(batch.feats).sum(dim=-2),
        ]
        embedded = torch.cat(parts, dim=-1)
        root = self.root.expand(embedded.size(0), 1, -1)
        return torch.cat([root, embedded], dim=1)

    def forward(self, batch: ParserBatch) -> ScoreTensors:
        """Score every (dependent, head) pair of a padded batch, ROOT prepended."""
        embedded = self.input_dropout(self.embed(batch))
        lengths = batch.words.lengths + 1
        states = self.encoder(embedded, lengths)
        mask = torch.cat(
            [batch.words.mask.new_ones(batch.words.mask.size(0), 1), batch.words.mask], dim=1
        )
        return ScoreTensors(
            edge=self.edge(states, states).squeeze(-1),
            linearization=self.linearization(states, states).squeeze(-1),
            distance=self.distance(states, states).squeeze(-1),
            relation=self.relation(states, states),
            mask=mask,
        )

    def augmented_edge_scores(self, scores: ScoreTensors) -> torch.Tensor:
        return augmented_edge_scores(scores, self.use_linearization, self.use_distance)


def augmented_edge_scores(
    scores: ScoreTensors, use_linearization: bool = True, use_distance: bool = True
) -> torch.Tensor:
    """Edge scores plus the log linearization and log distance probabilities."""
    augmented = scores.edge
    if use_linearization:
        augmented = augmented + linearization_log_prob(signed_linearization(scores.linearization))
    if use_distance:
        augmented = augmented + distance_log_prob(distance_gap(scores.distance))
    return augmented


def parser_loss(
    scores: ScoreTensors,
    heads: torch.Tensor,
    deprels: torch.Tensor,
    use_linearization: bool = True,
    use_distance: bool = True,
) -> torch.Tensor:
    """Head and relation cross-entropy plus the linearization and distance losses.

    Head selection uses the raw edge scores over all ``n + 1`` positions. The other
    three terms are evaluated on gold edges only.

    Args:
        scores: Network output.
        heads: ``(batch, n + 1)`` gold heads, ``IGNORE`` on ROOT and padding.
        deprels: ``(batch, n + 1)`` gold relation indices, ``IGNORE`` likewise.
        use_linearization: Include the linearization term.
        use_distance: Include the distance term.
    """
    gold = heads != IGNORE
    if not bool(gold.any()):
        return scores.edge.sum() * 0.0
    edge = scores.edge.masked_fill(~scores.mask.unsqueeze(1), float("-inf"))
    loss = F.cross_entropy(edge[gold], heads[gold])

    safe_heads = heads.clamp(min=0).unsqueeze(-1)
    if use_linearization:
        signed = signed_linearization(scores.linearization).gather(-1, safe_heads).squeeze(-1)
        loss = loss - linearization_log_prob(signed)[gold].mean()
    if use_distance:
        gap = distance_gap(scores.distance).gather(-1, safe_heads).squeeze(-1)
        loss = loss - distance_log_prob(gap)[gold].mean()

    relation = scores.relation.gather(
        2, safe_heads.unsqueeze(-1).expand(-1, -1, 1, scores.relation.size(-1))
    ).squeeze(2)
    relation_gold = gold & (deprels != IGNORE)
    if bool(relation_gold.any()):
        loss = loss + F.cross_entropy(relation[relation_gold], deprels[relation_gold])
    return loss
