from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from app.features.neural.layers import init_lstm
from app.features.tokenizer.models import TokenizerScores, UnitTag, tag_distribution

NUM_FEATURES = 4


def _run_lstm(lstm: nn.LSTM, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
    out, _ = lstm(packed)
    out, _ = pad_packed_sequence(out, batch_first=True, total_length=x.size(1))
    return out


class TokenizerNetwork(nn.Module):
    """Two-layer unit tagger: BiLSTM+CNN first layer, gated BiLSTM second layer.

    Both layers emit (tok, sent, mwt) scores that are summed for the final decision.
    """

    def __init__(
        self,
        num_units: int,
        emb_dim: int = 32,
        hidden_dim: int = 64,
        conv_channels: int = 64,
        conv_widths: Sequence[int] = (1, 9),
        dropout: float = 0.33,
        gate_temperature: float = 2.0,
        gate_noise: float = 0.02,
        use_gating: bool = True,
        use_conv: bool = True,
        pad_id: int = 0,
    ):
        super().__init__()
        if any(width % 2 == 0 for width in conv_widths):
            raise ValueError(f"convolution widths must be odd, got {tuple(conv_widths)}")
        self.gate_temperature = gate_temperature
        self.gate_noise = gate_noise
        self.use_gating = use_gating
        self.use_conv = use_conv
        input_dim = emb_dim + NUM_FEATURES
        self.embedding = nn.Embedding(num_units, emb_dim, padding_idx=pad_id)
        self.rnn1 = nn.LSTM(input_dim, hidden_dim, batch_first=True, bidirectional=True)
        self.convs = nn.ModuleList(
            nn.Conv1d(input_dim, conv_channels, width, padding=width // 2)
            for width in conv_widths
        )
        self.conv_out = nn.Linear(conv_channels * len(conv_widths), 2 * hidden_dim)
        self.rnn2 = nn.LSTM(2 * hidden_dim, hidden_dim, batch_first=True, bidirectional=True)
        init_lstm(self.rnn1)
        init_lstm(self.rnn2)
        self.head1 = nn.Linear(2 * hidden_dim, 3)
        self.head2 = nn.Linear(2 * hidden_dim, 3)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, units: torch.Tensor, features: torch.Tensor, lengths: torch.Tensor
    ) -> TokenizerScores:
        """Score a padded batch.

        Args:
            units: ``(batch, time)`` unit indices.
            features: ``(batch, time, 4)`` binary surface features.
            lengths: ``(batch,)`` true lengths.

        Returns:
            TokenizerScores: ``(batch, time, 3)`` scores per layer and the gated input.
        """
        x = torch.cat([self.embedding(units), features.to(self.head1.weight.dtype)], dim=-1)
        x = self.dropout(x)
        h1 = _run_lstm(self.rnn1, x, lengths)
        if self.use_conv:
            conv_in = x.transpose(1, 2)
            conv = torch.cat([F.relu(c(conv_in)) for c in self.convs], dim=1)
            h1 = h1 + self.conv_out(conv.transpose(1, 2))
        h1 = self.dropout(h1)
        s1 = self.head1(h1)
        if self.use_gating:
            gate = torch.sigmoid(s1[..., :1] / self.gate_temperature)
            if self.training and self.gate_noise > 0:
                forced = torch.rand_like(gate) < self.gate_noise
                gate = torch.where(forced, torch.ones_like(gate), gate)
            g1 = h1 * gate
        else:
            g1 = h1
        h2 = self.dropout(_run_lstm(self.rnn2, g1, lengths))
        s2 = self.head2(h2)
        return TokenizerScores(layer1=s1, layer2=s2, gated=g1)


def _binary_terms(scores: torch.Tensor, tags: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    boundary = tags != UnitTag.OTHER
    sent = (tags == UnitTag.EOS) | (tags == UnitTag.MWS)
    mwt = (tags == UnitTag.MWT) | (tags == UnitTag.MWS)
    loss = F.binary_cross_entropy_with_logits(
        scores[..., 0][mask], boundary[mask].to(scores.dtype), reduction="sum"
    )
    ends = mask & boundary
    if bool(ends.any()):
        loss = loss + F.binary_cross_entropy_with_logits(
            scores[..., 1][ends], sent[ends].to(scores.dtype), reduction="sum"
        )
        loss = loss + F.binary_cross_entropy_with_logits(
            scores[..., 2][ends], mwt[ends].to(scores.dtype), reduction="sum"
        )
    return loss


def tokenizer_loss(
    scores: TokenizerScores, tags: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Binary cross-entropy of the three decisions on layer 1 and on the summed scores.

    The sentence and MWT decisions only count on units that end a token. The result
    is averaged over real units.
    """
    total = _binary_terms(scores.layer1, tags, mask) + _binary_terms(
        scores.total, tags, mask
    )
    return total / mask.sum().clamp(min=1)


def predict_tags(scores: TokenizerScores) -> torch.Tensor:
    """Argmax tag per unit; ties go to the lowest tag index."""
    total = scores.total
    return tag_distribution(total[..., 0], total[..., 1], total[..., 2]).argmax(dim=-1)
