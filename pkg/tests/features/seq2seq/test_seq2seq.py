import itertools
from unittest.mock import patch

import pytest
import torch

from app.core.config import MWTSettings
from app.features.neural.vocab import Vocab
from app.features.seq2seq.network import DecoderState, EncoderOutput, Seq2SeqNetwork
from app.features.seq2seq.services import (
    Hypothesis,
    Seq2SeqService,
    beam_decode,
    default_max_len,
    train_seq2seq,
)


@pytest.fixture(name="vocab")
def vocab_fixture() -> Vocab:
    return Vocab.build("abc")


def seeded_network(vocab: Vocab, seed: int) -> Seq2SeqNetwork:
    torch.manual_seed(seed)
    network = Seq2SeqNetwork(len(vocab), 6, 5, 10, 7, 8, dropout=0.0).double()
    network.eval()
    return network


@pytest.fixture(name="network")
def network_fixture(vocab: Vocab) -> Seq2SeqNetwork:
    return seeded_network(vocab, 7)


def sequence_score(network: Seq2SeqNetwork, vocab: Vocab, source, symbols) -> float:
    """Log-probability of emitting ``symbols`` then EOS, one step at a time."""
    with torch.no_grad():
        encoder, state = network.encode(torch.tensor([source]), torch.tensor([len(source)]))
        previous, total = vocab.sos_id, 0.0
        for symbol in (*symbols, vocab.eos_id):
            log_probs, state, _ = network.decode_step(torch.tensor([previous]), state, encoder)
            total += log_probs[0, symbol].item()
            previous = symbol
    return total


class TestBeamDecode:
    @pytest.mark.parametrize("seed", range(50))
    def test_wide_beam_finds_exhaustive_optimum(self, seed: int, vocab: Vocab):
        """With a beam wider than the search space, beam search is exact."""
        network = seeded_network(vocab, seed)
        source = vocab.encode("abca")
        emittable = [vocab.unk_id, *vocab.encode("abc")]
        candidates = [
            symbols
            for length in range(4)
            for symbols in itertools.product(emittable, repeat=length)
        ]
        scores = {s: sequence_score(network, vocab, source, s) for s in candidates}
        best = max(scores, key=scores.get)

        hyp = beam_decode(network, source, vocab, beam=300, max_len=4)
        assert hyp.terminated
        assert hyp.symbols == best
        assert hyp.score == pytest.approx(scores[best], abs=1e-9)
        assert len(hyp.attended) == len(hyp.symbols)

        for width in (1, 2):
            narrow = beam_decode(network, source, vocab, beam=width, max_len=4)
            if narrow.terminated:
                assert narrow.score == pytest.approx(scores[narrow.symbols], abs=1e-9)
                assert narrow.score <= scores[best] + 1e-9

    def test_never_emits_reserved_symbols(self, network: Seq2SeqNetwork, vocab: Vocab):
        hyp = beam_decode(network, vocab.encode("cab"), vocab, beam=3)
        blocked = {vocab.pad_id, vocab.drop_id, vocab.root_id, vocab.sos_id, vocab.eos_id}
        assert not blocked & set(hyp.symbols)

    def test_unterminated_returns_best_live(self, network: Seq2SeqNetwork, vocab: Vocab):
        with torch.no_grad():
            network.out_score.bias[vocab.eos_id] = -1e4
        hyp = beam_decode(network, vocab.encode("ab"), vocab, beam=1, max_len=3)
        assert not hyp.terminated
        assert len(hyp.symbols) == 3

    def test_beam_must_be_positive(self, network: Seq2SeqNetwork, vocab: Vocab):
        with pytest.raises(ValueError):
            beam_decode(network, vocab.encode("a"), vocab, beam=0)

    def test_empty_source(self, network: Seq2SeqNetwork, vocab: Vocab):
        with pytest.raises(ValueError):
            beam_decode(network, [], vocab, beam=1)

    def test_default_max_len(self):
        assert default_max_len(3) == 16


class TestNetwork:
    def test_decode_step_gradients(self, network: Seq2SeqNetwork, vocab: Vocab):
        source = torch.tensor([vocab.encode("abc"), vocab.encode("ba") + [vocab.pad_id]])
        encoder, state = network.encode(source, torch.tensor([3, 2]))
        previous = torch.tensor([vocab.sos_id, vocab.index("a")])
        inputs = (
            state.hidden.detach().clone().requires_grad_(),
            state.cell.detach().clone().requires_grad_(),
            encoder.states.detach().clone().requires_grad_(),
        )

        def step(hidden, cell, states):
            output = EncoderOutput(states, encoder.mask, encoder.final)
            return network.decode_step(previous, DecoderState(hidden, cell), output)[0]

        assert torch.autograd.gradcheck(step, inputs)

    def test_attention_ignores_padding(self, network: Seq2SeqNetwork, vocab: Vocab):
        source = torch.tensor([vocab.encode("ab") + [vocab.pad_id] * 2])
        encoder, state = network.encode(source, torch.tensor([2]))
        weights = network.attention(state.hidden, encoder)
        assert weights[0, 2:].abs().sum().item() == 0.0
        assert weights[0].sum().item() == pytest.approx(1.0)

    def test_bridge_is_identity_when_sizes_match(self, vocab: Vocab):
        network = Seq2SeqNetwork(len(vocab), 4, 5, 10)
        assert isinstance(network.bridge, torch.nn.Identity)


class TestService:
    def test_unknown_output_copies_attended_character(self, vocab: Vocab):
        service = Seq2SeqService(Seq2SeqNetwork(len(vocab), 4, 3, 6), vocab)
        hyp = Hypothesis((vocab.unk_id, vocab.index("a")), -1.0, (0, 1), True)
        with patch("app.features.seq2seq.services.beam_decode", return_value=hyp):
            text, _ = service.decode("zq")
        assert text == "za"

    def test_batch_shapes(self, vocab: Vocab):
        service = Seq2SeqService(Seq2SeqNetwork(len(vocab), 4, 3, 6), vocab)
        src, lengths, target_in, target_out = service.batch([("abc", "ab"), ("a", "cab")])
        assert src.shape == (2, 3)
        assert lengths.tolist() == [3, 1]
        assert target_in[:, 0].tolist() == [vocab.sos_id] * 2
        assert target_out[1].tolist() == vocab.encode("cab") + [vocab.eos_id]
        assert target_out[0, -1].item() == vocab.pad_id

    def test_training_anneals_and_restores_best(self):
        pairs = [("ab", "ab"), ("ba", "ba"), ("abc", "abc")]
        settings = MWTSettings(
            emb_dim=4,
            enc_hidden=4,
            dec_hidden=8,
            attn_dim=4,
            out_hidden=4,
            max_epochs=3,
            anneal_after=0,
            anneal_factor=0.5,
            batch_size=2,
            lr=0.01,
        )
        service = Seq2SeqService.create(pairs, settings)
        metrics = iter([0.5, 0.4, 0.3])
        snapshots = []

        def dev_metric() -> float:
            snapshots.append({k: v.clone() for k, v in service.network.state_dict().items()})
            return next(metrics)

        log = train_seq2seq(service, pairs, settings, dev_metric)
        assert [entry.lr for entry in log] == [0.01, 0.005, 0.0025]
        assert [entry.dev for entry in log] == [0.5, 0.4, 0.3]
        restored = service.network.state_dict()
        assert all(torch.equal(restored[k], snapshots[0][k]) for k in restored)

    def test_extra_loss_is_added(self):
        pairs = [("ab", "ab")]
        settings = MWTSettings(
            emb_dim=4, enc_hidden=4, dec_hidden=8, attn_dim=4, out_hidden=4, max_epochs=1
        )
        service = Seq2SeqService.create(pairs, settings)
        log = train_seq2seq(
            service, pairs, settings, extra_loss=lambda encoder, _: encoder.final.new_ones(())
        )
        assert log[0].extra == pytest.approx(1.0)
        assert log[0].loss == pytest.approx(log[0].nll + 1.0)
        assert log[0].dev is None
