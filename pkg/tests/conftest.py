import sys
from pathlib import Path

import pytest
from faker import Faker
from loguru import logger

from app.core.config import Settings, load_settings
from app.core.runtime import seed_everything
from app.features.conllu.parsers import read_conllu_file
from tests.toy import toy_treebank

DOCS = Path(__file__).parent / "docs"

TINY = {
    "tokenizer.emb_dim": 8,
    "tokenizer.hidden_dim": 8,
    "tokenizer.conv_channels": 4,
    "tokenizer.max_steps": 30,
    "tokenizer.eval_interval": 10,
    "tokenizer.eval_after": 0,
    "tokenizer.batch_size": 4,
    "mwt.emb_dim": 8,
    "mwt.enc_hidden": 8,
    "mwt.dec_hidden": 16,
    "mwt.attn_dim": 8,
    "mwt.out_hidden": 8,
    "mwt.max_epochs": 2,
    "mwt.beam_size": 2,
    "tagger.word_dim": 8,
    "tagger.char_dim": 8,
    "tagger.char_hidden": 8,
    "tagger.char_out_dim": 8,
    "tagger.tag_dim": 4,
    "tagger.hidden_dim": 8,
    "tagger.num_layers": 1,
    "tagger.fc_dim": 8,
    "tagger.feat_fc_dim": 8,
    "tagger.min_word_count": 1,
    "tagger.max_steps": 20,
    "tagger.eval_interval": 10,
    "tagger.patience": 10,
    "tagger.batch_size": 8,
    "lemmatizer.emb_dim": 8,
    "lemmatizer.enc_hidden": 8,
    "lemmatizer.dec_hidden": 16,
    "lemmatizer.attn_dim": 8,
    "lemmatizer.out_hidden": 8,
    "lemmatizer.edit_fc_dim": 8,
    "lemmatizer.max_epochs": 2,
    "lemmatizer.beam_size": 2,
    "parser.word_dim": 8,
    "parser.lemma_dim": 4,
    "parser.char_dim": 8,
    "parser.char_hidden": 8,
    "parser.char_out_dim": 8,
    "parser.tag_dim": 4,
    "parser.hidden_dim": 8,
    "parser.num_layers": 1,
    "parser.fc_dim": 8,
    "parser.min_word_count": 1,
    "parser.max_steps": 20,
    "parser.eval_interval": 10,
    "parser.patience": 10,
    "parser.batch_size": 8,
}


@pytest.fixture(name="faker", scope="session")
def faker_fixture():
    return Faker()


@pytest.fixture(autouse=True)
def seeded():
    seed_everything(1234)


@pytest.fixture(name="sample_doc")
def sample_doc_fixture():
    return read_conllu_file(DOCS / "sample.conllu")


@pytest.fixture(name="sample_raw")
def sample_raw_fixture():
    return (DOCS / "sample.txt").read_text(encoding="utf-8")


@pytest.fixture(name="toy_doc", scope="session")
def toy_doc_fixture():
    return toy_treebank(40)


@pytest.fixture(name="tiny_settings")
def tiny_settings_fixture(tmp_path) -> Settings:
    """Settings small enough to train every stage in seconds."""
    return load_settings(overrides={**TINY, "model_dir": str(tmp_path / "models")})


@pytest.fixture(name="restore_logging")
def restore_logging_fixture():
    """Put loguru back on the real stderr after a test installs its own sink."""
    yield
    logger.remove()
    logger.add(sys.stderr)
