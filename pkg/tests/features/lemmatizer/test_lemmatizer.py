from unittest.mock import MagicMock, patch

import pytest

from app.core.config import LemmatizerSettings
from app.core.errors import DataError
from app.features.conllu.models import Document
from app.features.lemmatizer.models import EditLabel, LemmaLexicon, assign_edit_label
from app.features.lemmatizer.services import (
    Lemmatizer,
    NeuralLemmatizer,
    lemmatize,
    lemmatize_with_source,
)
from app.features.seq2seq.services import Seq2SeqService
from tests.toy import DETERMINERS, NOUNS, VERBS, make_sentence


def lemma_doc(*rows: tuple[str, str, str]) -> Document:
    """One-word sentences from ``(form, lemma, upos)`` triples."""
    sentences = tuple(
        make_sentence([(form, lemma, upos, "_", "_", 0, "root")]) for form, lemma, upos in rows
    )
    return Document(sentences=sentences)


@pytest.fixture(name="lexicon")
def lexicon_fixture() -> LemmaLexicon:
    return LemmaLexicon.build(
        lemma_doc(("saw", "see", "VERB"), ("saw", "saw", "NOUN"), ("saw", "saw", "NOUN"))
    )


@pytest.fixture(name="neural")
def neural_fixture() -> MagicMock:
    neural = MagicMock(spec=NeuralLemmatizer)
    neural.lemmatize.return_value = ("run", "seq2seq")
    return neural


class TestEditLabel:
    def test_labels_are_consistent(self, faker):
        """Each label is the first edit that turns the word into the lemma."""
        for _ in range(200):
            word = faker.word()
            word = word.capitalize() if faker.boolean() else word
            lemma = faker.random_element([word, word.lower(), faker.word()])
            label = assign_edit_label(word, lemma)
            if label is EditLabel.IDENTITY:
                assert lemma == word
            elif label is EditLabel.LOWERCASE:
                assert lemma == word.lower() != word
            else:
                assert lemma not in (word, word.lower())

    def test_examples(self):
        assert assign_edit_label("dogs", "dogs") is EditLabel.IDENTITY
        assert assign_edit_label("Dogs", "dogs") is EditLabel.LOWERCASE
        assert assign_edit_label("dogs", "dog") is EditLabel.SEQ2SEQ


class TestLexicon:
    def test_modal_lemmas(self, lexicon: LemmaLexicon):
        assert lexicon.lookup_pair("saw", "VERB") == "see"
        assert lexicon.lookup_pair("saw", "NOUN") == "saw"
        assert lexicon.lookup_word("saw") == "saw"
        assert lexicon.word_counts["saw"] == 2
        assert lexicon.lookup_word("Saw") is None

    def test_ties_keep_first_seen(self):
        lexicon = LemmaLexicon.build(lemma_doc(("left", "leave", "VERB"), ("left", "left", "ADJ")))
        assert lexicon.lookup_word("left") == "leave"

    def test_words_without_lemma_are_skipped(self):
        assert len(LemmaLexicon.build(lemma_doc(("x", "", "X")))) == 0

    def test_text_format(self, lexicon: LemmaLexicon):
        text = lexicon.to_text()
        assert text.splitlines() == [
            "P\tsaw\tNOUN\tsaw\t2",
            "P\tsaw\tVERB\tsee\t1",
            "W\tsaw\tsaw\t2",
        ]
        assert LemmaLexicon.from_text(text) == lexicon

    def test_malformed_line(self):
        with pytest.raises(DataError, match="line 1"):
            LemmaLexicon.from_text("Q\tsaw\tsee\n")


class TestLookupOrder:
    def test_pair_dictionary_first(self, lexicon, neural):
        assert lemmatize_with_source("saw", "VERB", lexicon, neural) == ("see", "pair")
        neural.lemmatize.assert_not_called()

    def test_word_dictionary_second(self, lexicon, neural):
        assert lemmatize_with_source("saw", "ADJ", lexicon, neural) == ("saw", "word")
        neural.lemmatize.assert_not_called()

    def test_network_last(self, lexicon, neural):
        assert lemmatize("ran", "VERB", lexicon, neural, beam=3) == "run"
        neural.lemmatize.assert_called_once_with("ran", 3)

    def test_without_network(self, lexicon):
        assert lemmatize_with_source("ran", "VERB", lexicon) == ("ran", "fallback")

    @pytest.mark.parametrize(
        "label, expected",
        [
            (EditLabel.IDENTITY, ("Ran", "identity")),
            (EditLabel.LOWERCASE, ("ran", "lowercase")),
            (EditLabel.SEQ2SEQ, ("run", "seq2seq")),
        ],
    )
    def test_edit_classifier_shortcuts(self, label, expected):
        model = MagicMock(spec=Seq2SeqService)
        model.decode.return_value = ("run", None)
        neural = NeuralLemmatizer(model)
        with patch.object(neural, "classify", return_value=[label]):
            assert neural.lemmatize("Ran") == expected

    def test_empty_decoder_output(self):
        model = MagicMock(spec=Seq2SeqService)
        model.decode.return_value = ("", None)
        assert NeuralLemmatizer(model).lemmatize("ran") == ("ran", "fallback")

    def test_without_edit_head_everything_is_decoded(self):
        neural = NeuralLemmatizer(MagicMock(spec=Seq2SeqService))
        assert neural.classify(["a", "b"]) == [EditLabel.SEQ2SEQ] * 2


class TestSwitches:
    def test_dictionaries_off(self, lexicon, neural):
        lemmatizer = Lemmatizer(lexicon, neural, LemmatizerSettings(use_dictionaries=False))
        assert lemmatizer.lemmatize("saw", "VERB") == "run"

    def test_seq2seq_off(self, lexicon, neural):
        lemmatizer = Lemmatizer(lexicon, neural, LemmatizerSettings(use_seq2seq=False))
        assert lemmatizer.neural is None
        assert lemmatizer.lemmatize("ran", "VERB") == "ran"
        assert lemmatizer.lemmatize("saw", "VERB") == "see"

    def test_sentence_keeps_other_columns(self, lexicon, sample_doc: Document):
        lemmatizer = Lemmatizer(lexicon, None)
        sentence = lemmatizer.lemmatize_sentence(sample_doc.sentences[1])
        assert [w.lemma for w in sentence.words] == [w.form for w in sentence.words]
        assert sentence.heads == sample_doc.sentences[1].heads


class TestTraining:
    def test_train_save_load(self, toy_doc: Document, tiny_settings, tmp_path):
        lemmatizer, log = Lemmatizer.train(toy_doc, toy_doc, tiny_settings.lemmatizer)
        assert len(log) == tiny_settings.lemmatizer.max_epochs
        assert lemmatizer.neural.edit_head is not None
        report = lemmatizer.edit_type_report(toy_doc)
        assert set(report) == {"identity", "lowercase", "seq2seq"}
        assert sum(report.values()) == pytest.approx(1.0)

        lemmatizer.save(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        loaded = Lemmatizer.load(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        assert loaded.lexicon == lemmatizer.lexicon
        assert loaded.lemmatize("cats", "NOUN") == "cat"
        assert loaded.lemmatize("Zebras", "NOUN") == lemmatizer.lemmatize("Zebras", "NOUN")
        assert loaded.accuracy(toy_doc) == 1.0

    def test_without_edit_classifier(self, toy_doc: Document, tiny_settings, tmp_path):
        settings = tiny_settings.lemmatizer.model_copy(update={"use_edit": False})
        lemmatizer, _ = Lemmatizer.train(toy_doc, toy_doc, settings)
        assert lemmatizer.neural.edit_head is None
        lemmatizer.save(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        loaded = Lemmatizer.load(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        assert loaded.neural.edit_head is None

    def test_dictionary_only(self, toy_doc: Document, tmp_path):
        settings = LemmatizerSettings(use_seq2seq=False)
        lemmatizer, log = Lemmatizer.train(toy_doc, toy_doc, settings)
        assert log == []
        lemmatizer.save(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        loaded = Lemmatizer.load(tmp_path / "lemma.pt", tmp_path / "lemma.lexicon")
        assert loaded.neural is None
        assert loaded.lemmatize("chased", "VERB") == "chase"

    def test_no_lemmas(self, tiny_settings):
        with pytest.raises(DataError):
            Lemmatizer.train(lemma_doc(("x", "", "X")), Document(), tiny_settings.lemmatizer)


class TestOverfit:
    """With dictionaries off, the decoder and edit classifier memorize a toy lexicon."""

    def test_training_lemma_accuracy(self, tiny_settings):
        entries = [(form, lemma, "NOUN") for form, lemma, _, _ in NOUNS]
        entries += [(form, lemma, "VERB") for form, lemma, _, _ in VERBS]
        entries += [(form, lemma, "DET") for form, lemma, _, _ in DETERMINERS]
        entries += [(form.capitalize(), lemma, upos) for form, lemma, upos in entries]
        doc = lemma_doc(*entries)
        settings = tiny_settings.lemmatizer.model_copy(
            update={
                "emb_dim": 16,
                "enc_hidden": 32,
                "dec_hidden": 64,
                "attn_dim": 32,
                "out_hidden": 32,
                "edit_fc_dim": 16,
                "dropout": 0.0,
                "lr": 0.005,
                "max_epochs": 150,
                "batch_size": 4,
                "beam_size": 1,
                "use_dictionaries": False,
            }
        )
        lemmatizer, _ = Lemmatizer.train(doc, doc, settings)
        assert len(lemmatizer.lexicon) == 0
        assert lemmatizer.accuracy(doc) >= 0.99
        assert lemmatizer.neural.edit_head is not None
