import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
import torch

from app.core.errors import DataError
from app.features.conllu.models import Document, Sentence
from app.features.neural.vocab import Vocab
from app.features.parser.decoding import chu_liu_edmonds, decode_mst, find_cycle, tree_score
from app.features.parser.models import ParserVocabs, assign_relations
from app.features.parser.network import (
    IGNORE,
    ScoreTensors,
    distance_gap,
    distance_log_prob,
    linearization_log_prob,
    parser_loss,
    signed_linearization,
)
from app.features.parser.services import ParserService
from tests.toy import left_branching


@lru_cache(maxsize=None)
def single_root_trees(n: int) -> np.ndarray:
    """Every head assignment over ``n`` words forming a tree with one root child."""
    choices = [[h for h in range(n + 1) if h != i] for i in range(1, n + 1)]
    trees = [
        heads
        for heads in itertools.product(*choices)
        if heads.count(0) == 1 and find_cycle((0, *heads)) is None
    ]
    return np.array(trees)


def scores_of(trees: np.ndarray, scores: np.ndarray) -> np.ndarray:
    rows = np.arange(1, trees.shape[1] + 1)
    return scores[rows[None, :], trees].sum(axis=1)


def uniform_scores(batch: int, n: int, labels: int) -> ScoreTensors:
    size = n + 1
    return ScoreTensors(
        edge=torch.zeros(batch, size, size),
        linearization=torch.zeros(batch, size, size),
        distance=torch.zeros(batch, size, size),
        relation=torch.zeros(batch, size, size, labels),
        mask=torch.ones(batch, size, dtype=torch.bool),
    )


class TestDecoding:
    @pytest.mark.parametrize("n, count", [(2, 200), (3, 200), (4, 200), (5, 200), (6, 40)])
    def test_matches_brute_force(self, n, count):
        rng = np.random.default_rng(n)
        trees = single_root_trees(n)
        for _ in range(count):
            scores = rng.normal(size=(n + 1, n + 1))
            heads = decode_mst(scores)
            totals = scores_of(trees, scores)
            assert heads.count(0) == 1
            assert find_cycle([0, *heads]) is None
            assert tree_score(scores, heads) == pytest.approx(totals.max(), abs=1e-9)
            assert heads == trees[totals.argmax()].tolist()

    def test_unconstrained_tree_may_have_several_roots(self):
        scores = np.zeros((4, 4))
        scores[1:, 0] = 5.0
        assert chu_liu_edmonds(scores)[1:].tolist() == [0, 0, 0]
        assert decode_mst(scores).count(0) == 1

    def test_cycle_is_broken(self):
        scores = np.full((4, 4), -5.0)
        scores[1, 2] = scores[2, 1] = 10.0
        scores[3, 0] = 1.0
        heads = decode_mst(scores)
        assert find_cycle([0, *heads]) is None
        assert heads.count(0) == 1

    def test_single_word(self):
        assert decode_mst(np.zeros((2, 2))) == [0]

    def test_no_words(self):
        with pytest.raises(ValueError):
            decode_mst(np.zeros((1, 1)))

    def test_not_square(self):
        with pytest.raises(ValueError):
            decode_mst(np.zeros((3, 2)))

    def test_find_cycle(self):
        assert find_cycle([0, 2, 3, 2]) == [2, 3]
        assert find_cycle([0, 0, 1, 2]) is None


class TestScoreTerms:
    def test_linearization_sign(self):
        signed = signed_linearization(torch.ones(3, 3))
        assert signed.tolist() == [[0, -1, -1], [1, 0, -1], [1, 1, 0]]
        assert linearization_log_prob(torch.zeros(1)).item() == pytest.approx(math.log(0.5))

    def test_distance_gap(self):
        gap = distance_gap(torch.zeros(3, 3))
        assert gap[0, 2].item() == pytest.approx(2 - 1 - math.log(2))
        assert gap[1, 1].item() == pytest.approx(-1 - math.log(2))

    def test_distance_log_prob(self):
        assert distance_log_prob(torch.tensor(math.sqrt(2))).item() == pytest.approx(-math.log(2))
        assert distance_log_prob(torch.tensor(0.0)).item() == 0.0


class TestLoss:
    @pytest.mark.parametrize("n", [1, 3, 6])
    def test_uniform_edges(self, n):
        """Uniform scores cost ln(n + 1) per head and ln(labels) per relation."""
        heads = torch.full((1, n + 1), IGNORE)
        heads[0, 1:] = torch.tensor([0] + list(range(1, n)))
        deprels = torch.where(heads == IGNORE, heads, torch.zeros_like(heads))
        loss = parser_loss(uniform_scores(1, n, 3), heads, deprels, False, False)
        assert loss.item() == pytest.approx(math.log(n + 1) + math.log(3), rel=1e-6)

    def test_linearization_term_at_zero(self):
        heads = torch.tensor([[IGNORE, 2, 0]])
        deprels = torch.tensor([[IGNORE, 0, 0]])
        without = parser_loss(uniform_scores(1, 2, 1), heads, deprels, False, False)
        with_term = parser_loss(uniform_scores(1, 2, 1), heads, deprels, True, False)
        assert (with_term - without).item() == pytest.approx(math.log(2), rel=1e-6)

    def test_padding_is_masked(self):
        scores = uniform_scores(2, 3, 2)
        scores.mask[1, 3] = False
        heads = torch.tensor([[IGNORE, 0, 1, 1], [IGNORE, 0, 1, IGNORE]])
        deprels = torch.where(heads == IGNORE, heads, torch.zeros_like(heads))
        loss = parser_loss(scores, heads, deprels, False, False)
        expected = (3 * math.log(4) + 2 * math.log(3)) / 5 + math.log(2)
        assert loss.item() == pytest.approx(expected, rel=1e-6)

    def test_nothing_to_learn(self):
        scores = uniform_scores(1, 2, 2)
        heads = torch.full((1, 3), IGNORE)
        assert parser_loss(scores, heads, heads).item() == 0.0

    def test_gradients(self):
        torch.manual_seed(3)
        size, labels = 4, 3
        mask = torch.tensor([[True, True, True, False]])
        heads = torch.tensor([[IGNORE, 2, 0, IGNORE]])
        deprels = torch.tensor([[IGNORE, 1, 2, IGNORE]])
        inputs = tuple(
            torch.randn(*shape, dtype=torch.float64, requires_grad=True)
            for shape in [(1, size, size)] * 3 + [(1, size, size, labels)]
        )

        def loss(edge, linearization, distance, relation):
            scores = ScoreTensors(edge, linearization, distance, relation, mask)
            return parser_loss(scores, heads, deprels)

        assert torch.autograd.gradcheck(loss, inputs)


class TestRelations:
    def test_root_and_non_root_labels(self):
        deprels = Vocab.labels(["amod", "nsubj", "root"])
        scores = np.zeros((3, 3, 3))
        scores[1, 2] = [0.1, 0.2, 9.0]
        scores[2, 0] = [5.0, 0.0, 1.0]
        assert assign_relations(scores, [2, 0], deprels) == ["nsubj", "root"]

    def test_fallback_labels(self):
        scores = np.zeros((3, 3, 1))
        assert assign_relations(scores, [2, 0], Vocab.labels(["amod"])) == ["amod", "root"]
        assert assign_relations(scores, [2, 0], Vocab.labels(["root"])) == ["dep", "root"]

    def test_subtyped_root_counts_as_root(self):
        scores = np.zeros((2, 2, 2))
        assert assign_relations(scores, [0], Vocab.labels(["nsubj", "root:exp"])) == ["root:exp"]


class TestService:
    def test_vocabs_roundtrip(self, toy_doc: Document):
        vocabs = ParserVocabs.build(toy_doc, min_count=1)
        restored = ParserVocabs.from_dict(vocabs.to_dict())
        assert restored.deprels == vocabs.deprels
        assert restored.pretrained is None
        assert "root" in vocabs.deprels

    @pytest.mark.parametrize(
        "updates",
        [{}, {"use_linearization": False}, {"use_distance": False}],
    )
    def test_train_parse_save_load(self, updates, tiny_settings, tmp_path):
        doc = left_branching(16)
        settings = tiny_settings.parser.model_copy(update=updates)
        parser, result = ParserService.train(doc, doc, settings)
        assert result.steps == settings.max_steps
        assert 0.0 <= result.best_metric <= 1.0

        blank = Document(
            sentences=tuple(
                s.model_copy(
                    update={
                        "words": tuple(
                            w.model_copy(update={"head": None, "deprel": "_"}) for w in s.words
                        )
                    }
                )
                for s in doc.sentences
            )
        )
        parsed = parser.parse_document(blank, workers=2)
        for sentence in parsed.sentences:
            assert sentence.has_tree
            assert sentence.heads.count(0) == 1
            assert all(w.deprel in parser.vocabs.deprels for w in sentence.words)

        loaded = ParserService.load(parser.save(tmp_path / "parser.pt"))
        assert loaded.parse_document(blank) == parser.parse_document(blank)
        uas, las = loaded.attachment_scores(doc)
        assert 0.0 <= las <= uas <= 1.0

    def test_empty_sentence(self, tiny_settings):
        doc = left_branching(4)
        parser, _ = ParserService.train(doc, doc, tiny_settings.parser)
        with pytest.raises(DataError):
            parser.parse_sentence(Sentence(words=(), tokens=()))

    def test_no_trees(self, tiny_settings):
        with pytest.raises(DataError):
            ParserService.train(Document(), Document(), tiny_settings.parser)


class TestOverfit:
    """A small parser memorizes strictly left-branching trees."""

    def test_training_uas(self, tiny_settings):
        doc = left_branching(50)
        settings = tiny_settings.parser.model_copy(
            update={
                "hidden_dim": 32,
                "fc_dim": 32,
                "max_steps": 300,
                "eval_interval": 50,
                "patience": 300,
                "batch_size": 16,
                "dropout": 0.0,
                "rec_dropout": 0.0,
                "word_dropout": 0.0,
            }
        )
        parser, _ = ParserService.train(doc, doc, settings)
        uas, _ = parser.attachment_scores(doc)
        assert uas >= 0.99
