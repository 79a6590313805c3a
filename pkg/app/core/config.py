from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from app.core.errors import ConfigError


class TokenizerSettings(BaseModel):
    unit_mode: Literal["char", "syllable"] = "char"
    emb_dim: int = 32
    hidden_dim: int = 64
    conv_channels: int = 64
    conv_widths: tuple[int, ...] = (1, 9)
    dropout: float = 0.33
    unit_dropout: float = 0.33
    gate_temperature: float = 2.0
    gate_noise: float = 0.02
    use_gating: bool = True
    use_conv: bool = True
    lr: float = 0.002
    max_steps: int = 20000
    eval_interval: int = 200
    eval_after: int = 2000
    lr_decay: float = 0.999
    batch_size: int = 32
    max_seqlen: int = 300
    min_unit_count: int = 1


class MWTSettings(BaseModel):
    emb_dim: int = 64
    enc_hidden: int = 256
    dec_hidden: int = 512
    attn_dim: int = 256
    out_hidden: int = 256
    dropout: float = 0.5
    lr: float = 0.001
    max_epochs: int = 100
    anneal_after: int = 15
    anneal_factor: float = 0.9
    batch_size: int = 50
    beam_size: int = 8
    use_neural: bool = True


class TaggerSettings(BaseModel):
    word_dim: int = 75
    pretrained_dim: int = 125
    char_dim: int = 100
    char_hidden: int = 400
    char_out_dim: int = 125
    tag_dim: int = 50
    hidden_dim: int = 200
    num_layers: int = 2
    fc_dim: int = 400
    feat_fc_dim: int = 100
    dropout: float = 0.5
    rec_dropout: float = 0.5
    word_dropout: float = 0.33
    min_word_count: int = 7
    xpos_strategy: Literal["auto", "biaffine", "per_char", "shared_fc"] = "auto"
    max_xpos_biaffine: int = 250
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.95
    max_steps: int = 50000
    eval_interval: int = 100
    patience: int = 3000
    batch_size: int = 32
    max_grad_norm: float = 5.0


class LemmatizerSettings(BaseModel):
    emb_dim: int = 50
    enc_hidden: int = 100
    dec_hidden: int = 200
    attn_dim: int = 100
    out_hidden: int = 100
    edit_fc_dim: int = 100
    dropout: float = 0.5
    lr: float = 0.001
    max_epochs: int = 60
    anneal_after: int = 15
    anneal_factor: float = 0.9
    batch_size: int = 50
    beam_size: int = 8
    use_edit: bool = True
    use_dictionaries: bool = True
    use_seq2seq: bool = True


class ParserSettings(BaseModel):
    word_dim: int = 75
    lemma_dim: int = 75
    pretrained_dim: int = 125
    char_dim: int = 100
    char_hidden: int = 400
    char_out_dim: int = 125
    tag_dim: int = 50
    hidden_dim: int = 400
    num_layers: int = 3
    fc_dim: int = 400
    dropout: float = 0.5
    rec_dropout: float = 0.25
    word_dropout: float = 0.33
    min_word_count: int = 7
    use_linearization: bool = True
    use_distance: bool = True
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.95
    max_steps: int = 50000
    eval_interval: int = 100
    patience: int = 3000
    batch_size: int = 32
    max_grad_norm: float = 5.0


class PipelineSettings(BaseModel):
    workers: int = 1
    dev_ratio: int = Field(default=8, description="Every n-th sentence goes to dev")
    parser_predicted_tags: bool = True
    tokenizer_model: str = "tokenizer.pt"
    mwt_model: str = "mwt.pt"
    mwt_lexicon: str = "mwt_lexicon.tsv"
    tagger_model: str = "tagger.pt"
    lemmatizer_model: str = "lemmatizer.pt"
    lemma_lexicon: str = "lemma_lexicon.tsv"
    parser_model: str = "parser.pt"


class Settings(BaseSettings):
    app_name: str = "udflow"
    model_dir: Path = Path("models")
    embeddings_file: Optional[Path] = None
    embeddings_limit: int = 100000
    seed: int = 1234
    log_level: str = "INFO"

    tokenizer: TokenizerSettings = TokenizerSettings()
    mwt: MWTSettings = MWTSettings()
    tagger: TaggerSettings = TaggerSettings()
    lemmatizer: LemmatizerSettings = LemmatizerSettings()
    parser: ParserSettings = ParserSettings()
    pipeline: PipelineSettings = PipelineSettings()

    model_config = SettingsConfigDict(
        env_prefix="UDFLOW_",
        env_nested_delimiter="__",
        env_file=".env",
        toml_file="udflow.toml",
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
        )

    def model_path(self, name: str) -> Path:
        """Resolve a stage artifact name against the model directory."""
        path = Path(name)
        return path if path.is_absolute() else self.model_dir / path


def parse_override(value: str) -> tuple[str, Any]:
    """Split a ``stage.param=value`` CLI override into its dotted key and raw value."""
    if "=" not in value:
        raise ConfigError(f"Override must look like key=value, got '{value}'")
    key, raw = value.split("=", 1)
    return key.strip(), raw.strip()


def _nest(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        target = nested
        *parents, leaf = key.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    return nested


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(
    config_file: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None
) -> Settings:
    """Build settings from an optional TOML file plus dotted overrides.

    The TOML file may use flat dotted keys (``tagger.lr = 0.003``) or tables; both
    parse to the same nested mapping.

    Args:
        config_file: Path to a TOML configuration file.
        overrides: Mapping of dotted keys to values, e.g. from ``--set``.

    Returns:
        Settings: Validated settings.
    """
    values: dict[str, Any] = {}
    if config_file is not None:
        if not Path(config_file).exists():
            raise ConfigError(f"Config file not found: {config_file}")
        values = TomlConfigSettingsSource(Settings, toml_file=config_file)()
    if overrides:
        values = _merge(values, _nest(overrides))
    return Settings(**values)


@lru_cache
def get_settings() -> Settings:
    return Settings()
