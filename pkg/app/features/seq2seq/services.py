import copy
import random
from typing import Callable, NamedTuple, Optional, Sequence, Union

import torch
import torch.nn.functional as F
from loguru import logger
from pydantic import BaseModel
from torch import nn

from app.core.config import LemmatizerSettings, MWTSettings
from app.features.neural.vocab import DROP, PAD, ROOT, SOS, Vocab, char_ids, pad_batch
from app.features.seq2seq.network import DecoderState, EncoderOutput, Seq2SeqNetwork

Seq2SeqSettings = Union[MWTSettings, LemmatizerSettings]
ExtraLoss = Callable[[EncoderOutput, Sequence[int]], torch.Tensor]
NEVER_EMITTED = (PAD, DROP, ROOT, SOS)


class Hypothesis(NamedTuple):
    symbols: tuple[int, ...]
    score: float
    attended: tuple[int, ...]
    terminated: bool


def _rank(hyp: Hypothesis) -> tuple:
    return (-hyp.score, len(hyp.symbols), hyp.symbols)


def default_max_len(source_length: int) -> int:
    return 2 * source_length + 10


def beam_decode(
    network: Seq2SeqNetwork,
    source: Sequence[int],
    vocab: Vocab,
    beam: int,
    max_len: Optional[int] = None,
) -> Hypothesis:
    """Beam search for the highest-scoring output sequence.

    Hypotheses are ranked by total log-probability, then shorter length, then the
    symbol sequence itself. Search stops once the best finished hypothesis can no
    longer be beaten. If nothing emits EOS within ``max_len`` steps the best live
    hypothesis is returned with ``terminated=False``.

    Args:
        network: A trained encoder-decoder.
        source: Input symbol indices.
        vocab: Shared symbol vocabulary.
        beam: Beam width, at least 1.
        max_len: Maximum number of decoder steps, EOS included.

    Returns:
        Hypothesis: Output symbols without start/end markers plus the attended source
        position for every emitted symbol.
    """
    if beam < 1:
        raise ValueError(f"beam must be at least 1, got {beam}")
    if max_len is None:
        max_len = default_max_len(len(source))
    blocked = [vocab.index(s) for s in NEVER_EMITTED if s in vocab.reserved]
    eos = vocab.eos_id
    network.eval()
    device = network.embedding.weight.device
    with torch.no_grad():
        src = torch.tensor([list(source)], dtype=torch.long, device=device)
        encoder, state = network.encode(src, torch.tensor([len(source)]))
        live = [(Hypothesis((), 0.0, (), False), state.hidden[0], state.cell[0])]
        completed: list[Hypothesis] = []
        for _ in range(max_len):
            n = len(live)
            previous = torch.tensor(
                [h.symbols[-1] if h.symbols else vocab.sos_id for h, _, _ in live],
                device=device,
            )
            states = DecoderState(
                torch.stack([h for _, h, _ in live]), torch.stack([c for _, _, c in live])
            )
            expanded = EncoderOutput(
                encoder.states.expand(n, -1, -1),
                encoder.mask.expand(n, -1),
                encoder.final.expand(n, -1),
            )
            log_probs, new_state, weights = network.decode_step(previous, states, expanded)
            log_probs[:, blocked] = float("-inf")

            candidates = []
            for row, (hyp, _, _) in enumerate(live):
                order = torch.sort(log_probs[row], descending=True, stable=True).indices
                for symbol in order[:beam].tolist():
                    value = log_probs[row, symbol].item()
                    if value == float("-inf"):
                        break
                    candidates.append((hyp.score + value, row, symbol))
            candidates.sort(
                key=lambda c: (-c[0], len(live[c[1]][0].symbols), live[c[1]][0].symbols + (c[2],))
            )

            next_live = []
            for score, row, symbol in candidates[:beam]:
                hyp = live[row][0]
                if symbol == eos:
                    completed.append(Hypothesis(hyp.symbols, score, hyp.attended, True))
                    continue
                attended = hyp.attended + (int(weights[row].argmax()),)
                next_live.append(
                    (
                        Hypothesis(hyp.symbols + (symbol,), score, attended, False),
                        new_state.hidden[row],
                        new_state.cell[row],
                    )
                )
            live = next_live
            if not live:
                break
            if completed and max(c.score for c in completed) >= max(h.score for h, _, _ in live):
                break

    if completed:
        return min(completed, key=_rank)
    return min((h for h, _, _ in live), key=_rank)


class Seq2SeqService:
    """Character vocabulary plus network, with string-level encode/decode helpers."""

    def __init__(self, network: Seq2SeqNetwork, vocab: Vocab):
        self.network = network
        self.vocab = vocab

    @staticmethod
    def build_vocab(pairs: Sequence[tuple[str, str]]) -> Vocab:
        return Vocab.build(c for source, target in pairs for c in source + target)

    @classmethod
    def create(
        cls, pairs: Sequence[tuple[str, str]], settings: Seq2SeqSettings
    ) -> "Seq2SeqService":
        vocab = cls.build_vocab(pairs)
        return cls(build_network(len(vocab), settings, vocab.pad_id), vocab)

    def encode(self, text: str) -> list[int]:
        return char_ids(text, self.vocab)

    def batch(self, pairs: Sequence[tuple[str, str]]):
        """Tensors ``(src, src_lengths, target_in, target_out)`` for teacher forcing."""
        device = self.network.embedding.weight.device
        src, lengths = pad_batch([self.encode(s) for s, _ in pairs], self.vocab.pad_id, device)
        targets = [self.vocab.encode(t) for _, t in pairs]
        target_in, _ = pad_batch(
            [[self.vocab.sos_id] + t for t in targets], self.vocab.pad_id, device
        )
        target_out, _ = pad_batch(
            [t + [self.vocab.eos_id] for t in targets], self.vocab.pad_id, device
        )
        return src, lengths, target_in, target_out

    def nll(self, pairs: Sequence[tuple[str, str]]) -> torch.Tensor:
        """Mean per-symbol negative log-likelihood (EOS included) under teacher forcing."""
        src, lengths, target_in, target_out = self.batch(pairs)
        log_probs, _ = self.network(src, lengths, target_in)
        return F.nll_loss(
            log_probs.reshape(-1, log_probs.size(-1)),
            target_out.reshape(-1),
            ignore_index=self.vocab.pad_id,
        )

    def decode(
        self, text: str, beam: int = 1, max_len: Optional[int] = None
    ) -> tuple[str, Hypothesis]:
        """Decode ``text``; unknown output symbols copy the attended input character."""
        source = self.encode(text)
        hyp = beam_decode(self.network, source, self.vocab, beam, max_len)
        chars = []
        for symbol, position in zip(hyp.symbols, hyp.attended):
            if symbol == self.vocab.unk_id:
                chars.append(text[position] if position < len(text) else "")
            else:
                chars.append(self.vocab.symbol(symbol))
        return "".join(chars), hyp

    def exact_match(self, pairs: Sequence[tuple[str, str]], beam: int = 1) -> float:
        if not pairs:
            return 0.0
        hits = sum(self.decode(source, beam)[0] == target for source, target in pairs)
        return hits / len(pairs)


def build_network(num_symbols: int, settings: Seq2SeqSettings, pad_id: int) -> Seq2SeqNetwork:
    return Seq2SeqNetwork(
        num_symbols,
        emb_dim=settings.emb_dim,
        enc_hidden=settings.enc_hidden,
        dec_hidden=settings.dec_hidden,
        attn_dim=settings.attn_dim,
        out_hidden=settings.out_hidden,
        dropout=settings.dropout,
        pad_id=pad_id,
    )


class EpochLog(BaseModel):
    epoch: int
    nll: float
    extra: float
    loss: float
    dev: Optional[float] = None
    lr: float


def train_seq2seq(
    service: Seq2SeqService,
    train_pairs: Sequence[tuple[str, str]],
    settings: Seq2SeqSettings,
    dev_metric: Optional[Callable[[], float]] = None,
    extra_loss: Optional[ExtraLoss] = None,
    extra_module: Optional[nn.Module] = None,
    max_grad_norm: float = 5.0,
) -> list[EpochLog]:
    """Teacher-forced training with optional joint loss and per-epoch annealing.

    Args:
        service: The model to train in place.
        train_pairs: ``(input, output)`` strings.
        settings: Sizes, learning rate, epochs and annealing schedule.
        dev_metric: Called after every epoch, higher is better; the best epoch's
            weights are restored at the end.
        extra_loss: Added with equal weight to the NLL; receives the encoder output and
            the indices of the batch pairs in ``train_pairs``.
        extra_module: Parameters owned by ``extra_loss`` that are trained jointly.
        max_grad_norm: Gradient clipping threshold.

    Returns:
        list[EpochLog]: One entry per epoch.
    """
    network = service.network
    modules = nn.ModuleList([network] + ([extra_module] if extra_module is not None else []))
    lr = settings.lr
    optimizer = torch.optim.Adam(modules.parameters(), lr=lr)
    pad = service.vocab.pad_id
    best_metric: Optional[float] = None
    best_state = copy.deepcopy(modules.state_dict())
    previous: Optional[float] = None
    log: list[EpochLog] = []

    for epoch in range(1, settings.max_epochs + 1):
        order = list(range(len(train_pairs)))
        random.shuffle(order)
        nll_sum = extra_sum = 0.0
        batches = 0
        for start in range(0, len(order), settings.batch_size):
            indices = order[start : start + settings.batch_size]
            modules.train()
            src, lengths, target_in, target_out = service.batch([train_pairs[i] for i in indices])
            log_probs, encoder = network(src, lengths, target_in)
            nll = F.nll_loss(
                log_probs.reshape(-1, log_probs.size(-1)),
                target_out.reshape(-1),
                ignore_index=pad,
            )
            extra = extra_loss(encoder, indices) if extra_loss else nll.new_zeros(())
            loss = nll + extra
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(modules.parameters(), max_grad_norm)
            optimizer.step()
            nll_sum += nll.item()
            extra_sum += extra.item()
            batches += 1

        modules.eval()
        metric = dev_metric() if dev_metric is not None else None
        if metric is not None:
            if epoch > settings.anneal_after and previous is not None and metric < previous:
                lr *= settings.anneal_factor
                for group in optimizer.param_groups:
                    group["lr"] = lr
            previous = metric
            if best_metric is None or metric > best_metric:
                best_metric = metric
                best_state = copy.deepcopy(modules.state_dict())
        entry = EpochLog(
            epoch=epoch,
            nll=nll_sum / max(batches, 1),
            extra=extra_sum / max(batches, 1),
            loss=(nll_sum + extra_sum) / max(batches, 1),
            dev=metric,
            lr=lr,
        )
        log.append(entry)
        logger.debug(
            f"epoch {epoch}: loss {entry.loss:.4f} (nll {entry.nll:.4f}, extra {entry.extra:.4f})"
            + (f", dev {metric:.4f}" if metric is not None else "")
        )

    if best_metric is not None:
        modules.load_state_dict(best_state)
    modules.eval()
    return log
