"""Differentiable building blocks shared by the tokenizer, tagger, lemmatizer and parser."""

from typing import Callable, Optional, Sequence

import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from app.features.neural.vocab import Vocab, char_ids, pad_batch


def word_dropout_replace(
    ids: torch.Tensor,
    p: float,
    drop_id: int,
    protected: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Replace each index by ``drop_id`` independently with probability ``p``.

    Args:
        ids: Integer tensor of symbol indices.
        p: Replacement probability in [0, 1].
        drop_id: Index of the replacement symbol.
        protected: Optional boolean mask of positions never replaced (padding, ROOT).

    Returns:
        torch.Tensor: A new tensor; ``ids`` is left untouched.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"dropout probability must be in [0, 1], got {p}")
    if p == 0.0:
        return ids.clone()
    replace = torch.rand(ids.shape, device=ids.device) < p
    if protected is not None:
        replace &= ~protected
    return ids.masked_fill(replace, drop_id)


class VariationalDropout(nn.Module):
    """Dropout whose mask is shared across the time axis of ``(batch, time, dim)`` inputs."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p == 0.0:
            return x
        if self.p >= 1.0:
            return torch.zeros_like(x)
        mask = x.new_empty(x.size(0), 1, x.size(2)).bernoulli_(1.0 - self.p)
        return x * mask / (1.0 - self.p)


def init_lstm(lstm: nn.LSTM) -> None:
    for name, param in lstm.named_parameters():
        if "weight_hh" in name:
            for block in param.data.chunk(4, dim=0):
                nn.init.orthogonal_(block)
        elif "weight_ih" in name:
            nn.init.xavier_uniform_(param.data)
        elif "bias" in name:
            nn.init.zeros_(param.data)


class HighwayBiLSTM(nn.Module):
    """Stack of bidirectional LSTM layers, each gated against a projection of its input.

    Layer output: ``g * lstm(x) + (1 - g) * P x`` with ``g = sigmoid(W_g x + b_g)``.
    Recurrent dropout is applied as a time-shared mask on each layer input.
    """

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        num_layers: int = 1,
        dropout: float = 0.0,
        rec_dropout: float = 0.0,
    ):
        super().__init__()
        if num_layers < 1:
            raise ValueError(f"need at least one layer, got {num_layers}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = 2 * hidden_dim
        self.lstms = nn.ModuleList()
        self.gates = nn.ModuleList()
        self.projections = nn.ModuleList()
        for layer in range(num_layers):
            layer_input = input_dim if layer == 0 else self.output_dim
            lstm = nn.LSTM(layer_input, hidden_dim, batch_first=True, bidirectional=True)
            init_lstm(lstm)
            self.lstms.append(lstm)
            gate = nn.Linear(layer_input, self.output_dim)
            nn.init.zeros_(gate.bias)
            self.gates.append(gate)
            self.projections.append(nn.Linear(layer_input, self.output_dim, bias=False))
        self.rec_dropout = VariationalDropout(rec_dropout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Encode a padded batch.

        Args:
            x: ``(batch, time, input_dim)`` inputs.
            lengths: ``(batch,)`` true sequence lengths.

        Returns:
            torch.Tensor: ``(batch, time, 2 * hidden_dim)``; padded positions are zero.
        """
        if x.size(1) == 0 or bool((lengths <= 0).any()):
            raise ValueError("cannot encode an empty sequence")
        if x.size(-1) != self.input_dim:
            raise ValueError(f"expected input dim {self.input_dim}, got {x.size(-1)}")
        steps = x.size(1)
        mask = (
            torch.arange(steps, device=x.device)[None, :] < lengths.to(x.device)[:, None]
        ).unsqueeze(-1)
        out = x
        for lstm, gate, projection in zip(self.lstms, self.gates, self.projections):
            inputs = self.rec_dropout(out)
            packed = pack_padded_sequence(
                inputs, lengths.cpu(), batch_first=True, enforce_sorted=False
            )
            states, _ = lstm(packed)
            states, _ = pad_packed_sequence(states, batch_first=True, total_length=steps)
            g = torch.sigmoid(gate(inputs))
            out = (g * states + (1.0 - g) * projection(inputs)) * mask
        return self.dropout(out)


class CharLSTMEmbedder(nn.Module):
    """Unidirectional character LSTM; a word is represented by its final hidden state."""

    def __init__(
        self,
        num_chars: int,
        char_dim: int,
        hidden_dim: int,
        output_dim: Optional[int] = None,
        dropout: float = 0.0,
        pad_id: int = 0,
    ):
        super().__init__()
        self.embedding = nn.Embedding(num_chars, char_dim, padding_idx=pad_id)
        self.lstm = nn.LSTM(char_dim, hidden_dim, batch_first=True)
        init_lstm(self.lstm)
        self.projection = (
            nn.Linear(hidden_dim, output_dim, bias=False) if output_dim else None
        )
        self.output_dim = output_dim or hidden_dim
        self.dropout = nn.Dropout(dropout)

    def forward(self, chars: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """``chars``: ``(words, max_chars)``; returns ``(words, output_dim)``."""
        embedded = self.dropout(self.embedding(chars))
        packed = pack_padded_sequence(
            embedded, lengths.clamp(min=1).cpu(), batch_first=True, enforce_sorted=False
        )
        _, (hidden, _) = self.lstm(packed)
        out = hidden[-1]
        if self.projection is not None:
            out = self.projection(self.dropout(out))
        return out


def char_lstm_embed(word: str, vocab: Vocab, embedder: CharLSTMEmbedder) -> torch.Tensor:
    """Embed a single word; unknown characters use the unknown-character row."""
    chars, lengths = pad_batch([char_ids(word, vocab)], vocab.pad_id)
    device = embedder.embedding.weight.device
    return embedder(chars.to(device), lengths)[0]


def _with_bias(x: torch.Tensor) -> torch.Tensor:
    return torch.cat((x, x.new_ones((*x.shape[:-1], 1))), dim=-1)


class Biaffine(nn.Module):
    """Bilinear form with bias terms on both sides.

    ``score[b, i, j, k] = [right_j, 1]^T U_k [left_i, 1]``.
    """

    def __init__(self, left_dim: int, right_dim: int, output_dim: int = 1):
        super().__init__()
        if output_dim < 1:
            raise ValueError(f"output arity must be at least 1, got {output_dim}")
        self.left_dim = left_dim
        self.right_dim = right_dim
        self.output_dim = output_dim
        self.weight = nn.Parameter(torch.empty(output_dim, right_dim + 1, left_dim + 1))
        nn.init.xavier_uniform_(self.weight)

    def _check(self, left: torch.Tensor, right: torch.Tensor) -> None:
        if left.size(-1) != self.left_dim or right.size(-1) != self.right_dim:
            raise ValueError(
                f"biaffine expects dims ({self.left_dim}, {self.right_dim}), "
                f"got ({left.size(-1)}, {right.size(-1)})"
            )

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        """``(batch, n, dl)`` x ``(batch, m, dr)`` -> ``(batch, n, m, output_dim)``."""
        self._check(left, right)
        return torch.einsum(
            "bil,orl,bjr->bijo", _with_bias(left), self.weight, _with_bias(right)
        )

    def pointwise(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        """Score aligned pairs only: ``(batch, n, dl)``, ``(batch, n, dr)`` -> ``(batch, n, o)``."""
        self._check(left, right)
        return torch.einsum(
            "bnl,orl,bnr->bno", _with_bias(left), self.weight, _with_bias(right)
        )


class DeepBiaffine(nn.Module):
    """Two ReLU feedforward transforms feeding a :class:`Biaffine` scorer."""

    def __init__(
        self,
        left_dim: int,
        right_dim: int,
        hidden_dim: int,
        output_dim: int = 1,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.left_dim = left_dim
        self.right_dim = right_dim
        self.fc_left = nn.Sequential(nn.Linear(left_dim, hidden_dim), nn.ReLU())
        self.fc_right = nn.Sequential(nn.Linear(right_dim, hidden_dim), nn.ReLU())
        self.dropout = nn.Dropout(dropout)
        self.biaffine = Biaffine(hidden_dim, hidden_dim, output_dim)

    def forward(self, left: torch.Tensor, right: torch.Tensor) -> torch.Tensor:
        if left.size(-1) != self.left_dim or right.size(-1) != self.right_dim:
            raise ValueError(
                f"deep biaffine expects dims ({self.left_dim}, {self.right_dim}), "
                f"got ({left.size(-1)}, {right.size(-1)})"
            )
        unbatched = left.dim() == 2
        if unbatched:
            left, right = left.unsqueeze(0), right.unsqueeze(0)
        scores = self.biaffine(
            self.dropout(self.fc_left(left)), self.dropout(self.fc_right(right))
        )
        return scores[0] if unbatched else scores


class MLP(nn.Module):
    """FC + ReLU + dropout + affine output; no non-linearity on the output."""

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int, dropout: float = 0.0):
        super().__init__()
        self.w_down = nn.Linear(input_dim, hidden_dim)
        self.w_up = nn.Linear(hidden_dim, output_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.w_up(self.dropout(torch.relu(self.w_down(x))))


def gradient_check(
    fn: Callable[..., torch.Tensor],
    inputs: Sequence[torch.Tensor],
    eps: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> bool:
    """Compare analytic and central-difference gradients of ``fn`` in float64."""
    inputs = tuple(
        t.detach().to(torch.float64).requires_grad_(t.is_floating_point()) for t in inputs
    )
    return torch.autograd.gradcheck(
        fn, inputs, eps=eps, rtol=rtol, atol=atol, raise_exception=False
    )
