import math

import numpy as np
import pytest
import torch
from torch import nn

from app.core.errors import ConfigError
from app.features.neural.embeddings import (
    PretrainedEmbeddings,
    WordInputEmbedder,
    encode_words,
    load_word2vec_text,
)
from app.features.neural.layers import (
    MLP,
    Biaffine,
    CharLSTMEmbedder,
    DeepBiaffine,
    HighwayBiLSTM,
    VariationalDropout,
    char_lstm_embed,
    gradient_check,
    word_dropout_replace,
)
from app.features.neural.schedule import OptimizerSchedule, run_schedule
from app.features.neural.vocab import RESERVED, UNK, Vocab, char_ids, pad_batch


class TestVocab:
    def test_reserved_symbols_come_first(self):
        vocab = Vocab(["x", "y"])
        assert vocab.symbols[: len(RESERVED)] == list(RESERVED)
        assert (vocab.pad_id, vocab.unk_id, vocab.drop_id) == (0, 1, 2)
        assert (vocab.root_id, vocab.sos_id, vocab.eos_id) == (3, 4, 5)
        assert vocab.index("x") == 6

    def test_build_orders_by_frequency_then_alphabet(self):
        vocab = Vocab.build(["b", "a", "c", "c", "b", "d"], min_count=1)
        assert vocab.symbols[len(RESERVED) :] == ["b", "c", "a", "d"]

    def test_build_min_count(self):
        vocab = Vocab.build(["a", "a", "b"], min_count=2)
        assert "a" in vocab
        assert "b" not in vocab
        assert vocab.index("b") == vocab.unk_id

    def test_labels_have_no_reserved_symbols(self):
        labels = Vocab.labels(["VERB", "NOUN", "NOUN"])
        assert labels.symbols == ["NOUN", "VERB"]
        with pytest.raises(KeyError):
            labels.index("ADJ")
        with pytest.raises(KeyError):
            _ = labels.pad_id

    def test_dict_roundtrip(self, faker):
        vocab = Vocab.build(faker.words(20))
        assert Vocab.from_dict(vocab.to_dict()) == vocab
        labels = Vocab.labels(["a", "b"])
        assert Vocab.from_dict(labels.to_dict()) == labels

    def test_char_ids_of_empty_word(self):
        vocab = Vocab(["a"])
        assert char_ids("", vocab) == [vocab.unk_id]
        assert char_ids("ab", vocab) == [vocab.index("a"), vocab.index(UNK)]

    def test_pad_batch(self):
        padded, lengths = pad_batch([[7, 8, 9], [6]], pad_id=0)
        assert padded.tolist() == [[7, 8, 9], [6, 0, 0]]
        assert lengths.tolist() == [3, 1]


class TestDropout:
    def test_word_dropout_extremes(self):
        ids = torch.arange(10).view(2, 5)
        assert torch.equal(word_dropout_replace(ids, 0.0, 99), ids)
        protected = torch.zeros_like(ids, dtype=torch.bool)
        protected[:, 0] = True
        dropped = word_dropout_replace(ids, 1.0, 99, protected)
        assert torch.equal(dropped[:, 0], ids[:, 0])
        assert bool((dropped[:, 1:] == 99).all())

    def test_word_dropout_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            word_dropout_replace(torch.zeros(3, dtype=torch.long), 1.5, 0)

    def test_variational_mask_is_shared_over_time(self):
        layer = VariationalDropout(0.5)
        layer.train()
        out = layer(torch.ones(4, 6, 8))
        assert torch.equal(out, out[:, :1, :].expand_as(out))

    def test_variational_dropout_is_identity_in_eval(self):
        layer = VariationalDropout(0.5)
        layer.eval()
        x = torch.randn(2, 3, 4)
        assert torch.equal(layer(x), x)


class TestBiaffine:
    def test_shapes(self):
        layer = Biaffine(3, 4, 5)
        assert layer.weight.shape == (5, 5, 4)
        scores = layer(torch.randn(2, 6, 3), torch.randn(2, 7, 4))
        assert scores.shape == (2, 6, 7, 5)

    def test_matches_explicit_formula(self):
        layer = Biaffine(2, 3, 1)
        left, right = torch.randn(1, 1, 2), torch.randn(1, 1, 3)
        l1 = torch.cat([left[0, 0], torch.ones(1)])
        r1 = torch.cat([right[0, 0], torch.ones(1)])
        expected = r1 @ layer.weight[0] @ l1
        assert torch.allclose(layer(left, right)[0, 0, 0, 0], expected, atol=1e-6)

    def test_pointwise_is_the_diagonal(self):
        layer = Biaffine(3, 3, 2)
        left, right = torch.randn(2, 4, 3), torch.randn(2, 4, 3)
        full = layer(left, right)
        diagonal = torch.diagonal(full, dim1=1, dim2=2).permute(0, 2, 1)
        assert torch.allclose(layer.pointwise(left, right), diagonal, atol=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            Biaffine(3, 3)(torch.randn(1, 2, 4), torch.randn(1, 2, 3))
        with pytest.raises(ValueError):
            Biaffine(3, 3, 0)

    def test_deep_biaffine_unbatched(self):
        layer = DeepBiaffine(4, 4, 6, 3)
        layer.eval()
        x = torch.randn(5, 4)
        assert layer(x, x).shape == (5, 5, 3)
        assert torch.allclose(layer(x, x), layer(x[None], x[None])[0])

    def test_gradients(self):
        torch.manual_seed(0)
        biaffine = Biaffine(3, 2, 2).double()
        assert gradient_check(biaffine, [torch.randn(2, 3, 3), torch.randn(2, 4, 2)])
        deep = DeepBiaffine(3, 3, 4, 2).double()
        deep.eval()
        assert gradient_check(deep, [torch.randn(1, 3, 3), torch.randn(1, 3, 3)])

    def test_mlp(self):
        mlp = MLP(4, 8, 3)
        assert mlp(torch.randn(2, 5, 4)).shape == (2, 5, 3)


class TestHighwayBiLSTM:
    def test_padding_is_zero(self):
        layer = HighwayBiLSTM(3, 4, num_layers=2)
        layer.eval()
        out = layer(torch.randn(2, 5, 3), torch.tensor([5, 2]))
        assert out.shape == (2, 5, 8)
        assert bool((out[1, 2:] == 0).all())

    def test_batching_does_not_change_outputs(self):
        layer = HighwayBiLSTM(3, 4)
        layer.eval()
        x = torch.randn(2, 5, 3)
        batched = layer(x, torch.tensor([5, 3]))
        single = layer(x[1:, :3], torch.tensor([3]))
        assert torch.allclose(batched[1, :3], single[0], atol=1e-5)

    def test_rejects_empty_sequences(self):
        with pytest.raises(ValueError):
            HighwayBiLSTM(3, 4)(torch.randn(1, 2, 3), torch.tensor([0]))
        with pytest.raises(ValueError):
            HighwayBiLSTM(3, 4, num_layers=0)

    def test_gradients(self):
        torch.manual_seed(0)
        layer = HighwayBiLSTM(2, 2, num_layers=2).double()
        layer.eval()
        lengths = torch.tensor([3, 2])
        assert gradient_check(lambda x: layer(x, lengths), [torch.randn(2, 3, 2)])


class TestCharEmbedder:
    def test_single_word_matches_batch(self):
        vocab = Vocab(list("abc"))
        embedder = CharLSTMEmbedder(len(vocab), 4, 5, output_dim=3)
        embedder.eval()
        chars, lengths = pad_batch([char_ids("abc", vocab), char_ids("b", vocab)], vocab.pad_id)
        batch = embedder(chars, lengths)
        assert batch.shape == (2, 3)
        assert torch.allclose(char_lstm_embed("b", vocab, embedder), batch[1], atol=1e-6)


class TestSchedule:
    @staticmethod
    def _run(metrics, **kwargs):
        model = nn.Linear(1, 1)
        snapshots = []
        values = iter(metrics)

        def train_step(step):
            return (model(torch.ones(1, 1)) - 3.0).pow(2).sum()

        def dev_eval():
            snapshots.append(model.weight.detach().clone())
            return next(values)

        schedule = OptimizerSchedule(lr=0.1, max_steps=len(metrics), eval_interval=1, **kwargs)
        return model, snapshots, run_schedule(model, schedule, train_step, dev_eval)

    def test_switches_once_and_restores_best(self):
        model, snapshots, result = self._run([0.5, 0.6, 0.4, 0.7, 0.3], patience=10)
        assert result.switch_step == 3
        assert [entry.phase for entry in result.log] == [1, 1, 2, 2, 2]
        assert result.best_step == 4
        assert result.best_metric == 0.7
        assert torch.equal(model.weight.detach(), snapshots[3])

    def test_patience_stops_phase_two(self):
        _, _, result = self._run([0.5, 0.6, 0.4, 0.4, 0.4, 0.4], patience=2)
        assert result.steps == 4
        assert len(result.log) == 4

    def test_no_early_stop_before_switch(self):
        _, _, result = self._run([0.1, 0.2, 0.3, 0.4], patience=1)
        assert result.switch_step is None
        assert result.steps == 4

    def test_decay_mode(self):
        _, _, result = self._run([0.5, 0.4, 0.3], on_decrease="decay", decay=0.5)
        assert [entry.lr for entry in result.log] == [0.1, 0.05, 0.025]
        assert result.switch_step is None

    def test_without_evaluations(self):
        model = nn.Linear(1, 1)
        schedule = OptimizerSchedule(lr=0.1, max_steps=2, eval_interval=5)
        result = run_schedule(model, schedule, lambda step: model.weight.sum(), lambda: 1.0)
        assert math.isnan(result.best_metric)
        assert result.log == []

    def test_same_seed_same_weights(self):
        torch.manual_seed(7)
        first = self._run([0.1, 0.2])[0].weight.detach().clone()
        torch.manual_seed(7)
        second = self._run([0.1, 0.2])[0].weight.detach().clone()
        assert torch.equal(first, second)


class TestEmbeddings:
    def test_word2vec_reader(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("3 2\nthe 0.1 0.2\nbad 1\nCat 0.3 0.4\nthe 9 9\ndog 0.5 0.6\n")
        words, matrix = load_word2vec_text(path)
        assert words == ["the", "Cat", "dog"]
        assert matrix.shape == (3, 2)
        assert matrix.dtype == np.float32
        words, _ = load_word2vec_text(path, limit=2)
        assert words == ["the", "Cat"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_word2vec_text(tmp_path / "absent.txt")

    def test_pretrained_table(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("the 0.1 0.2\nCat 0.3 0.4\n")
        table = PretrainedEmbeddings.from_file(path)
        assert table.matrix.shape == (len(RESERVED) + 2, 2)
        assert not table.matrix[: len(RESERVED)].any()
        assert table.index("Cat") == len(RESERVED) + 1
        assert table.index("THE") == table.index("the")
        assert table.index("zebra") == table.vocab.unk_id
        assert table.missing(["the", "zebra", "Zebra"]) == 2

    def test_rejects_mismatched_matrix(self):
        with pytest.raises(ValueError):
            PretrainedEmbeddings(Vocab(["a"]), np.zeros((2, 3), dtype=np.float32))

    def test_encode_and_embed(self):
        words = Vocab(["the", "cat"])
        chars = Vocab(list("thecaTC"))
        pretrained = Vocab(["the"])
        batch = encode_words([["The", "cat"], ["cat"]], words, chars, pretrained)
        the, cat = words.index("the"), words.index("cat")
        assert batch.words.tolist() == [[the, cat], [cat, 0]]
        unk = pretrained.unk_id
        assert batch.pretrained.tolist() == [[pretrained.index("the"), unk], [unk, 0]]
        assert batch.chars.size(0) == 3
        assert batch.lengths.tolist() == [2, 1]
        assert batch.mask.tolist() == [[True, True], [True, False]]

        embedder = WordInputEmbedder(
            len(words),
            4,
            len(chars),
            3,
            5,
            6,
            pretrained_shape=(len(pretrained), 2),
            pretrained_dim=7,
            word_dropout=0.5,
        )
        embedder.load_pretrained(np.ones((len(pretrained), 2), dtype=np.float32))
        embedder.eval()
        out = embedder(batch.words, batch.chars, batch.char_lengths, batch.mask, batch.pretrained)
        assert embedder.output_dim == 4 + 7 + 6
        assert out.shape == (2, 2, 17)
        assert bool((out[1, 1, -6:] == 0).all())
