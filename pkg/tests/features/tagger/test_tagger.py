import pytest
import torch
import torch.nn.functional as F

from app.core.errors import DataError
from app.features.conllu.models import Document
from app.features.tagger.models import (
    ABSENT,
    IGNORE,
    TagSpaces,
    choose_xpos_strategy,
    split_feats,
)
from app.features.tagger.network import TaggerOutput, predict, tagger_loss
from app.features.tagger.services import TaggerService
from tests.toy import make_sentence, xpos_of_upos


def per_char_doc() -> Document:
    rows = [
        ("big", "big", "ADJ", "JJ3", "Degree=Pos", 2, "amod"),
        ("dog", "dog", "NOUN", "NN1", "Number=Sing", 3, "nsubj"),
        ("runs", "run", "VERB", "VB2", "_", 0, "root"),
    ]
    return Document(sentences=(make_sentence(rows),))


class TestXposStrategy:
    def test_fixed_width_tags_are_per_char(self):
        assert choose_xpos_strategy(["NN1", "VB2", "JJ3"]) == "per_char"

    def test_large_variable_tagset_shares_fc(self):
        tags = [f"T{i}" for i in range(251)]
        assert choose_xpos_strategy(tags) == "shared_fc"
        assert choose_xpos_strategy(tags[:250]) == "biaffine"

    def test_unused_xpos_shares_fc(self):
        assert choose_xpos_strategy(["_", "_"]) == "shared_fc"

    def test_override(self):
        assert choose_xpos_strategy(["NN1", "VB2"], override="biaffine") == "biaffine"


class TestTagSpaces:
    def test_per_char_tagsets(self):
        spaces = TagSpaces.build(per_char_doc())
        assert spaces.strategy == "per_char"
        assert [v.symbols for v in spaces.xpos] == [
            ["J", "N", "V"],
            ["B", "J", "N"],
            ["1", "2", "3"],
        ]
        assert spaces.decode_xpos(spaces.encode_xpos("VB2")) == "VB2"
        assert spaces.encode_xpos("NN") == [IGNORE] * 3

    def test_feature_values(self):
        spaces = TagSpaces.build(per_char_doc())
        assert spaces.feat_keys == ["Degree", "Number"]
        assert spaces.feats[0].symbols == [ABSENT, "Pos"]
        encoded = spaces.encode_feats("Number=Sing")
        assert encoded == [0, 1]
        assert spaces.decode_feats(encoded) == "Number=Sing"
        assert spaces.decode_feats([0, 0]) == "_"
        assert spaces.encode_feats("Number=Plur") == [0, IGNORE]

    def test_unknown_labels_are_ignored(self):
        spaces = TagSpaces.build(per_char_doc())
        assert spaces.encode_upos("PROPN") == IGNORE
        assert spaces.encode_upos("NOUN") == spaces.upos.index("NOUN")

    def test_dict_roundtrip(self, toy_doc: Document):
        spaces = TagSpaces.build(toy_doc)
        restored = TagSpaces.from_dict(spaces.to_dict())
        assert restored.strategy == spaces.strategy == "biaffine"
        assert restored.upos == spaces.upos
        assert restored.feat_keys == spaces.feat_keys

    def test_split_feats(self):
        assert split_feats("_") == {}
        assert split_feats("Case=Nom|Number=Sing") == {"Case": "Nom", "Number": "Sing"}


class TestLoss:
    def test_all_ignored_gives_zero(self):
        logits = torch.randn(1, 2, 3, requires_grad=True)
        output = TaggerOutput(logits, [], [])
        gold = torch.full((1, 2), IGNORE)
        loss = tagger_loss(output, gold, gold[..., None], gold[..., None])
        loss.backward()
        assert loss.item() == 0.0
        assert torch.equal(logits.grad, torch.zeros_like(logits))

    def test_sums_each_classifier(self):
        upos = torch.randn(1, 2, 3)
        xpos = torch.randn(1, 2, 4)
        feats = torch.randn(1, 2, 2)
        output = TaggerOutput(upos, [xpos], [feats])
        gold_upos = torch.tensor([[0, IGNORE]])
        gold_xpos = torch.tensor([[[3], [1]]])
        gold_feats = torch.tensor([[[IGNORE], [1]]])
        expected = (
            F.cross_entropy(upos[0, :1], torch.tensor([0]))
            + F.cross_entropy(xpos[0], torch.tensor([3, 1]))
            + F.cross_entropy(feats[0, 1:], torch.tensor([1]))
        )
        loss = tagger_loss(output, gold_upos, gold_xpos, gold_feats)
        assert loss.item() == pytest.approx(expected.item(), rel=1e-5)

    def test_predict_without_features(self):
        output = TaggerOutput(torch.tensor([[[0.0, 1.0, 1.0]]]), [torch.zeros(1, 1, 2)], [])
        upos, xpos, feats = predict(output)
        assert upos.tolist() == [[1]]
        assert xpos.tolist() == [[[0]]]
        assert feats.shape == (1, 1, 0)


class TestService:
    @pytest.mark.parametrize("strategy", ["auto", "shared_fc", "per_char"])
    def test_train_and_tag(self, strategy, tiny_settings, tmp_path):
        doc = per_char_doc() if strategy == "per_char" else xpos_of_upos(12)
        settings = tiny_settings.tagger.model_copy(update={"xpos_strategy": strategy})
        tagger, result = TaggerService.train(doc, doc, settings)
        assert result.steps == settings.max_steps
        assert tagger.spaces.strategy == ("biaffine" if strategy == "auto" else strategy)

        tagged = tagger.tag_document(doc, workers=2)
        known_upos = set(tagger.spaces.upos.symbols)
        for sentence in tagged.sentences:
            assert all(word.upos in known_upos for word in sentence.words)
            assert all(word.head is not None for word in sentence.words)

        loaded = TaggerService.load(tagger.save(tmp_path / "tagger.pt"))
        forms = [w.form for w in doc.sentences[0].words]
        assert loaded.tag_words(forms) == tagger.tag_words(forms)

    def test_gold_upos_conditioning(self, tiny_settings):
        doc = xpos_of_upos(6)
        tagger, _ = TaggerService.train(doc, doc, tiny_settings.tagger)
        forms = [w.form for w in doc.sentences[0].words]
        gold = [w.upos for w in doc.sentences[0].words]
        assert [upos for upos, _, _ in tagger.tag_words(forms, gold)] == gold

    def test_empty_sentence(self, tiny_settings):
        doc = xpos_of_upos(4)
        tagger, _ = TaggerService.train(doc, doc, tiny_settings.tagger)
        with pytest.raises(DataError):
            tagger.tag_words([])

    def test_no_training_sentences(self, tiny_settings):
        with pytest.raises(DataError):
            TaggerService.train(Document(), Document(), tiny_settings.tagger)


class TestOverfit:
    """A small tagger memorizes a toy language where every word has one analysis."""

    def test_training_accuracy(self, tiny_settings):
        doc = xpos_of_upos(50)
        settings = tiny_settings.tagger.model_copy(
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
        tagger, _ = TaggerService.train(doc, doc, settings)
        assert tagger.accuracy(doc)["upos"] >= 0.99
