"""Character encoder-decoder with MLP attention."""

from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from app.features.neural.layers import init_lstm


class EncoderOutput(NamedTuple):
    states: torch.Tensor  # (batch, src_len, 2 * enc_hidden)
    mask: torch.Tensor  # (batch, src_len), True on real positions
    final: torch.Tensor  # (batch, 2 * enc_hidden), last forward ++ last backward state


class DecoderState(NamedTuple):
    hidden: torch.Tensor
    cell: torch.Tensor


class Seq2SeqNetwork(nn.Module):
    """Shared-embedding BiLSTM encoder and LSTM decoder.

    Each decoder step: attend with ``u^T tanh(W_a [h_dec; h_enc_i])``, build the
    context ``c = sum_i a_i h_enc_i`` and emit ``softmax(U tanh(W [h_dec; c]))``.
    """

    def __init__(
        self,
        num_symbols: int,
        emb_dim: int = 50,
        enc_hidden: int = 100,
        dec_hidden: int = 200,
        attn_dim: int = 100,
        out_hidden: int = 100,
        dropout: float = 0.5,
        pad_id: int = 0,
    ):
        super().__init__()
        self.num_symbols = num_symbols
        self.enc_hidden = enc_hidden
        self.dec_hidden = dec_hidden
        self.embedding = nn.Embedding(num_symbols, emb_dim, padding_idx=pad_id)
        self.encoder = nn.LSTM(emb_dim, enc_hidden, batch_first=True, bidirectional=True)
        self.decoder = nn.LSTMCell(emb_dim, dec_hidden)
        init_lstm(self.encoder)
        self.bridge = (
            nn.Identity()
            if 2 * enc_hidden == dec_hidden
            else nn.Linear(2 * enc_hidden, dec_hidden, bias=False)
        )
        self.attn_proj = nn.Linear(dec_hidden + 2 * enc_hidden, attn_dim, bias=False)
        self.attn_score = nn.Linear(attn_dim, 1, bias=False)
        self.out_proj = nn.Linear(dec_hidden + 2 * enc_hidden, out_hidden)
        self.out_score = nn.Linear(out_hidden, num_symbols)
        self.dropout = nn.Dropout(dropout)

    def encode(
        self, src: torch.Tensor, lengths: torch.Tensor
    ) -> tuple[EncoderOutput, DecoderState]:
        """Run the encoder over ``(batch, src_len)`` symbols.

        Returns:
            tuple[EncoderOutput, DecoderState]: Encoder states and the initial decoder
            state built from the last state of each direction.
        """
        if src.size(1) == 0 or bool((lengths <= 0).any()):
            raise ValueError("cannot encode an empty input")
        embedded = self.dropout(self.embedding(src))
        packed = pack_padded_sequence(
            embedded, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out, (hidden, cell) = self.encoder(packed)
        states, _ = pad_packed_sequence(out, batch_first=True, total_length=src.size(1))
        final = torch.cat([hidden[-2], hidden[-1]], dim=-1)
        final_cell = torch.cat([cell[-2], cell[-1]], dim=-1)
        mask = torch.arange(src.size(1), device=src.device)[None, :] < lengths.to(
            src.device
        )[:, None]
        state = DecoderState(self.bridge(final), self.bridge(final_cell))
        return EncoderOutput(states, mask, final), state

    def attention(self, hidden: torch.Tensor, encoder: EncoderOutput) -> torch.Tensor:
        """Attention weights ``(batch, src_len)`` for decoder states ``(batch, dec_hidden)``."""
        steps = encoder.states.size(1)
        query = hidden.unsqueeze(1).expand(-1, steps, -1)
        energy = self.attn_score(
            torch.tanh(self.attn_proj(torch.cat([query, encoder.states], dim=-1)))
        ).squeeze(-1)
        energy = energy.masked_fill(~encoder.mask, float("-inf"))
        return torch.softmax(energy, dim=-1)

    def decode_step(
        self, previous: torch.Tensor, state: DecoderState, encoder: EncoderOutput
    ) -> tuple[torch.Tensor, DecoderState, torch.Tensor]:
        """Advance the decoder by one symbol.

        Args:
            previous: ``(batch,)`` previous output symbols.
            state: Decoder state after the previous step.
            encoder: Encoder output for the same batch.

        Returns:
            tuple: ``(log_probs (batch, V), new state, attention (batch, src_len))``.
        """
        hidden, cell = self.decoder(self.dropout(self.embedding(previous)), state)
        weights = self.attention(hidden, encoder)
        context = torch.bmm(weights.unsqueeze(1), encoder.states).squeeze(1)
        features = torch.tanh(self.out_proj(torch.cat([hidden, context], dim=-1)))
        logits = self.out_score(self.dropout(features))
        return F.log_softmax(logits, dim=-1), DecoderState(hidden, cell), weights

    def forward(
        self, src: torch.Tensor, lengths: torch.Tensor, target_in: torch.Tensor
    ) -> tuple[torch.Tensor, EncoderOutput]:
        """Teacher-forced log-probabilities ``(batch, tgt_len, V)``."""
        encoder, state = self.encode(src, lengths)
        outputs = []
        for step in range(target_in.size(1)):
            log_probs, state, _ = self.decode_step(target_in[:, step], state, encoder)
            outputs.append(log_probs)
        return torch.stack(outputs, dim=1), encoder
