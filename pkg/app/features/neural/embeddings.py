from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np
import torch
from loguru import logger
from torch import nn

from app.core.errors import ConfigError
from app.features.neural.layers import CharLSTMEmbedder, word_dropout_replace
from app.features.neural.vocab import RESERVED, Vocab, char_ids, pad_batch


def load_word2vec_text(
    path: Union[str, Path], limit: Optional[int] = None
) -> tuple[list[str], np.ndarray]:
    """Read a word2vec/fastText text file (optional ``count dim`` header).

    Lines whose dimension disagrees with the first vector are skipped; repeated words
    keep their first vector.

    Args:
        path: Embedding file.
        limit: Maximum number of vectors to keep.

    Returns:
        tuple[list[str], np.ndarray]: Words and a ``float32`` matrix, row-aligned.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Embedding file not found: {path}")
    words: list[str] = []
    vectors: list[np.ndarray] = []
    seen: set[str] = set()
    dim: Optional[int] = None
    skipped = 0
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for number, line in enumerate(f):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if number == 0 and len(parts) == 2 and all(p.isdigit() for p in parts):
                dim = int(parts[1])
                continue
            if len(parts) < 2:
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) - 1 != dim:
                skipped += 1
                continue
            word = parts[0]
            if word in seen:
                continue
            seen.add(word)
            words.append(word)
            vectors.append(np.asarray(parts[1:], dtype=np.float32))
            if limit is not None and len(words) >= limit:
                break
    if skipped:
        logger.warning(f"Skipped {skipped} malformed lines in {path}")
    matrix = np.stack(vectors) if vectors else np.zeros((0, dim or 0), dtype=np.float32)
    return words, matrix


class PretrainedEmbeddings:
    """Frozen vectors keyed by a :class:`Vocab`; reserved rows are zero."""

    def __init__(self, vocab: Vocab, matrix: np.ndarray):
        if matrix.shape[0] != len(vocab):
            raise ValueError("embedding matrix rows must match the vocabulary")
        if not np.isfinite(matrix).all():
            raise ValueError("embedding matrix contains non-finite values")
        self.vocab = vocab
        self.matrix = matrix

    @classmethod
    def from_file(
        cls, path: Union[str, Path], limit: Optional[int] = None
    ) -> "PretrainedEmbeddings":
        words, vectors = load_word2vec_text(path, limit)
        vocab = Vocab(words, reserved=RESERVED)
        matrix = np.zeros((len(vocab), vectors.shape[1]), dtype=np.float32)
        matrix[len(RESERVED) :] = vectors[: len(vocab) - len(RESERVED)]
        logger.info(f"Loaded {len(words)} vectors of dim {vectors.shape[1]} from {path}")
        return cls(vocab, matrix)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def missing(self, words: Iterable[str]) -> int:
        """Count distinct words without a vector; they fall back to the zero row."""
        absent = {w for w in words if w not in self.vocab and w.lower() not in self.vocab}
        if absent:
            logger.warning(f"{len(absent)} training words have no pretrained vector")
        return len(absent)

    def index(self, word: str) -> int:
        return pretrained_index(self.vocab, word)


def pretrained_index(vocab: Vocab, word: str) -> int:
    """Row of ``word`` in a pretrained vocabulary, retrying in lowercase."""
    if word in vocab:
        return vocab.index(word)
    return vocab.index(word.lower())


class WordInputEmbedder(nn.Module):
    """Concatenates frequent-word, projected pretrained and character-LSTM embeddings.

    During training each word's inputs are replaced by the drop symbol (or zeroed,
    for the character vector) with probability ``word_dropout``.
    """

    def __init__(
        self,
        num_words: int,
        word_dim: int,
        num_chars: int,
        char_dim: int,
        char_hidden: int,
        char_out_dim: int,
        pretrained_shape: Optional[tuple[int, int]] = None,
        pretrained_dim: int = 125,
        word_dropout: float = 0.33,
        dropout: float = 0.0,
        pad_id: int = 0,
        drop_id: int = 2,
    ):
        super().__init__()
        self.word_dropout = word_dropout
        self.drop_id = drop_id
        self.word_embedding = nn.Embedding(num_words, word_dim, padding_idx=pad_id)
        self.char_embedder = CharLSTMEmbedder(
            num_chars, char_dim, char_hidden, char_out_dim, dropout=dropout, pad_id=pad_id
        )
        self.pretrained: Optional[nn.Embedding] = None
        self.pretrained_proj: Optional[nn.Linear] = None
        self.output_dim = word_dim + self.char_embedder.output_dim
        if pretrained_shape is not None:
            self.pretrained = nn.Embedding(*pretrained_shape, padding_idx=pad_id)
            self.pretrained.weight.requires_grad = False
            self.pretrained_proj = nn.Linear(pretrained_shape[1], pretrained_dim, bias=False)
            self.output_dim += pretrained_dim

    def load_pretrained(self, matrix: np.ndarray) -> None:
        if self.pretrained is None:
            raise ValueError("embedder was built without a pretrained table")
        self.pretrained.weight.data.copy_(torch.from_numpy(matrix))

    def forward(
        self,
        words: torch.Tensor,
        chars: torch.Tensor,
        char_lengths: torch.Tensor,
        mask: torch.Tensor,
        pretrained: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Embed a ``(batch, time)`` grid of words.

        Args:
            words: Frequent-word indices.
            chars: ``(real_words, max_chars)`` characters of the words under ``mask``,
                in row-major order.
            char_lengths: ``(real_words,)``.
            mask: ``(batch, time)`` True on real words.
            pretrained: Pretrained-table indices, required when the table exists.

        Returns:
            torch.Tensor: ``(batch, time, output_dim)``.
        """
        dropping = self.training and self.word_dropout > 0
        if dropping:
            words = word_dropout_replace(words, self.word_dropout, self.drop_id, ~mask)
        parts = [self.word_embedding(words)]
        if self.pretrained is not None:
            if pretrained is None:
                raise ValueError("pretrained indices are required")
            if dropping:
                pretrained = word_dropout_replace(
                    pretrained, self.word_dropout, self.drop_id, ~mask
                )
            parts.append(self.pretrained_proj(self.pretrained(pretrained)))
        char_vectors = self.char_embedder(chars, char_lengths)
        grid = char_vectors.new_zeros(*words.shape, char_vectors.size(-1))
        grid[mask] = char_vectors
        if dropping:
            keep = (torch.rand(words.shape, device=words.device) >= self.word_dropout) | ~mask
            grid = grid * keep.unsqueeze(-1).to(grid.dtype)
        parts.append(grid)
        return torch.cat(parts, dim=-1)


class WordBatch(NamedTuple):
    """Padded inputs for :class:`WordInputEmbedder` plus the sentence lengths."""

    words: torch.Tensor
    pretrained: Optional[torch.Tensor]
    chars: torch.Tensor
    char_lengths: torch.Tensor
    mask: torch.Tensor
    lengths: torch.Tensor


def encode_words(
    sentences: Sequence[Sequence[str]],
    words: Vocab,
    chars: Vocab,
    pretrained: Optional[Vocab] = None,
    device: Optional[torch.device] = None,
) -> WordBatch:
    """Index a batch of sentences for the word, pretrained and character embedders.

    Frequent-word lookup is uncased; characters keep their case.
    """
    word_ids, lengths = pad_batch(
        [words.encode(w.lower() for w in sentence) for sentence in sentences], words.pad_id
    )
    pretrained_ids = None
    if pretrained is not None:
        pretrained_ids, _ = pad_batch(
            [[pretrained_index(pretrained, w) for w in sentence] for sentence in sentences],
            pretrained.pad_id,
        )
    char_ids_, char_lengths = pad_batch(
        [char_ids(w, chars) for sentence in sentences for w in sentence], chars.pad_id
    )
    mask = torch.arange(word_ids.size(1))[None, :] < lengths[:, None]
    if device is not None:
        word_ids, char_ids_, mask = word_ids.to(device), char_ids_.to(device), mask.to(device)
        if pretrained_ids is not None:
            pretrained_ids = pretrained_ids.to(device)
    return WordBatch(word_ids, pretrained_ids, char_ids_, char_lengths, mask, lengths)
