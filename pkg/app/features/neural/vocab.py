from collections import Counter
from typing import Iterable, Optional, Sequence

import torch
from torch.nn.utils.rnn import pad_sequence

PAD = "<PAD>"
UNK = "<UNK>"
DROP = "<DROP>"
ROOT = "<ROOT>"
SOS = "<SOS>"
EOS = "<EOS>"
RESERVED = (PAD, UNK, DROP, ROOT, SOS, EOS)


class Vocab:
    """Bidirectional symbol/index map with reserved symbols at the lowest indices.

    Label sets (tagsets, deprels) are built with ``reserved=()`` so that index 0 is
    the first real label.
    """

    def __init__(self, symbols: Iterable[str] = (), reserved: Sequence[str] = RESERVED):
        self.reserved = tuple(reserved)
        self._itos: list[str] = []
        self._stoi: dict[str, int] = {}
        for symbol in (*self.reserved, *symbols):
            if symbol not in self._stoi:
                self._stoi[symbol] = len(self._itos)
                self._itos.append(symbol)

    @classmethod
    def build(
        cls,
        items: Iterable[str],
        min_count: int = 1,
        reserved: Sequence[str] = RESERVED,
    ) -> "Vocab":
        """Count ``items`` and keep those seen at least ``min_count`` times.

        Symbols are ordered by decreasing frequency, then alphabetically.
        """
        counts = Counter(items)
        kept = sorted(
            (s for s, c in counts.items() if c >= min_count),
            key=lambda s: (-counts[s], s),
        )
        return cls(kept, reserved=reserved)

    @classmethod
    def labels(cls, items: Iterable[str]) -> "Vocab":
        """A label set without reserved symbols, in sorted order."""
        return cls(sorted(set(items)), reserved=())

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self._itos == other._itos

    @property
    def symbols(self) -> list[str]:
        return list(self._itos)

    def _reserved_id(self, symbol: str) -> int:
        if symbol not in self.reserved:
            raise KeyError(f"vocabulary has no {symbol} symbol")
        return self._stoi[symbol]

    @property
    def pad_id(self) -> int:
        return self._reserved_id(PAD)

    @property
    def unk_id(self) -> int:
        return self._reserved_id(UNK)

    @property
    def drop_id(self) -> int:
        return self._reserved_id(DROP)

    @property
    def root_id(self) -> int:
        return self._reserved_id(ROOT)

    @property
    def sos_id(self) -> int:
        return self._reserved_id(SOS)

    @property
    def eos_id(self) -> int:
        return self._reserved_id(EOS)

    def index(self, symbol: str) -> int:
        if symbol in self._stoi:
            return self._stoi[symbol]
        if UNK in self.reserved:
            return self._stoi[UNK]
        raise KeyError(f"unknown label '{symbol}'")

    def symbol(self, index: int) -> str:
        return self._itos[index]

    def encode(self, symbols: Iterable[str]) -> list[int]:
        return [self.index(s) for s in symbols]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self._itos[i] for i in indices]

    def to_dict(self) -> dict:
        return {"symbols": self._itos[len(self.reserved) :], "reserved": list(self.reserved)}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(data["symbols"], reserved=data["reserved"])


def char_ids(word: str, vocab: Vocab) -> list[int]:
    """Character indices of ``word``; the empty word becomes one unknown character."""
    return vocab.encode(word) if word else [vocab.unk_id]


def pad_batch(
    sequences: Sequence[Sequence[int]], pad_id: int, device: Optional[torch.device] = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad index sequences into a ``(batch, max_len)`` tensor plus lengths."""
    tensors = [torch.tensor(seq, dtype=torch.long) for seq in sequences]
    padded = pad_sequence(tensors, batch_first=True, padding_value=pad_id)
    lengths = torch.tensor([len(seq) for seq in sequences], dtype=torch.long)
    if device is not None:
        padded = padded.to(device)
    return padded, lengths
