import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional, get_args

from pydantic import BaseModel, Field

from app.core.config import PipelineSettings, Settings
from app.core.errors import ConfigError
from app.core.storage import file_checksum
from app.features.conllu.models import Document
from app.features.lemmatizer.services import Lemmatizer
from app.features.mwt.services import MWTExpander
from app.features.parser.services import ParserService
from app.features.scorer.models import EvalReport
from app.features.tagger.services import TaggerService
from app.features.tokenizer.services import TokenizerService

Stage = Literal["tokenize", "expand", "tag", "lemmatize", "parse"]
STAGES: tuple[str, ...] = get_args(Stage)

OracleLevel = Literal["none", "tokenize", "tag", "lemma"]
ORACLE_LEVELS: tuple[str, ...] = get_args(OracleLevel)

MANIFEST_FILE = "manifest.json"

# flag -> (settings section, field updates)
ABLATIONS: dict[str, tuple[str, dict[str, Any]]] = {
    "no-gating": ("tokenizer", {"use_gating": False}),
    "no-conv": ("tokenizer", {"use_conv": False}),
    "no-dropout-tokenizer": ("tokenizer", {"dropout": 0.0, "unit_dropout": 0.0}),
    "no-seq2seq-mwt": ("mwt", {"use_neural": False}),
    "no-biaffine-tagger": ("tagger", {"xpos_strategy": "shared_fc"}),
    "no-edit": ("lemmatizer", {"use_edit": False}),
    "no-dictionaries": ("lemmatizer", {"use_dictionaries": False}),
    "no-linearization": ("parser", {"use_linearization": False}),
    "no-distance": ("parser", {"use_distance": False}),
}

# The most upstream gold input under which a flagged component is still predicted.
ABLATION_LEVELS: dict[str, OracleLevel] = {
    "tokenizer": "none",
    "mwt": "none",
    "tagger": "tokenize",
    "lemmatizer": "tag",
    "parser": "lemma",
}


def apply_ablations(settings: Settings, flags: list[str]) -> Settings:
    """Return a copy of ``settings`` with every ablation flag switched on.

    Raises:
        ConfigError: If a flag is not a known ablation.
    """
    unknown = [flag for flag in flags if flag not in ABLATIONS]
    if unknown:
        raise ConfigError(
            f"Unknown ablation flag(s): {', '.join(unknown)}; "
            f"expected any of {', '.join(ABLATIONS)}"
        )
    sections: dict[str, BaseModel] = {}
    for flag in flags:
        section, update = ABLATIONS[flag]
        current = sections.get(section, getattr(settings, section))
        sections[section] = current.model_copy(update=update)
    return settings.model_copy(update=sections)


def ablation_level(flags: list[str]) -> OracleLevel:
    if not flags:
        return "none"
    levels = [ABLATION_LEVELS[ABLATIONS[flag][0]] for flag in flags]
    return min(levels, key=ORACLE_LEVELS.index)


class TrainingData(BaseModel):
    """Gold treebanks for training and development, with their raw text when known."""

    train: Document
    dev: Document
    train_raw: Optional[str] = None
    dev_raw: Optional[str] = None


class StageRecord(BaseModel):
    stage: str
    seconds: float = 0.0
    best_metric: Optional[float] = None
    switch_step: Optional[int] = None
    log: list[dict[str, Any]] = Field(default_factory=list)


class RunManifest(BaseModel):
    """Everything needed to reproduce a training run."""

    seed: int
    config: dict[str, Any]
    stages: dict[str, StageRecord] = Field(default_factory=dict)
    checksums: dict[str, str] = Field(default_factory=dict)

    @property
    def metric_log(self) -> dict[str, list[dict[str, Any]]]:
        return {name: record.log for name, record in self.stages.items()}

    @property
    def switch_steps(self) -> dict[str, Optional[int]]:
        return {name: record.switch_step for name, record in self.stages.items()}

    @property
    def timings(self) -> dict[str, float]:
        return {name: record.seconds for name, record in self.stages.items()}

    def reproducible(self) -> dict[str, Any]:
        """The manifest without wall-clock timings; equal across runs with one seed."""
        data = self.model_dump(mode="json")
        for record in data["stages"].values():
            record.pop("seconds")
        return data

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.write_text(self.model_dump_json(indent=2), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class ModelSet:
    """The five trained stages of a pipeline."""

    tokenizer: TokenizerService
    mwt: MWTExpander
    tagger: TaggerService
    lemmatizer: Lemmatizer
    parser: ParserService

    def save(self, directory: Path, names: PipelineSettings) -> dict[str, str]:
        """Write every stage into ``directory`` and return file checksums by file name."""
        directory = Path(directory)
        written = [
            self.tokenizer.save(directory / names.tokenizer_model),
            self.tagger.save(directory / names.tagger_model),
            self.parser.save(directory / names.parser_model),
        ]
        self.mwt.save(directory / names.mwt_model, directory / names.mwt_lexicon)
        self.lemmatizer.save(directory / names.lemmatizer_model, directory / names.lemma_lexicon)
        written += [
            directory / names.mwt_model,
            directory / names.mwt_lexicon,
            directory / names.lemmatizer_model,
            directory / names.lemma_lexicon,
        ]
        return {Path(path).name: file_checksum(path) for path in sorted(written)}

    @classmethod
    def load(cls, settings: Settings) -> "ModelSet":
        names = settings.pipeline
        path = settings.model_path
        return cls(
            tokenizer=TokenizerService.load(path(names.tokenizer_model)),
            mwt=MWTExpander.load(path(names.mwt_model), path(names.mwt_lexicon)),
            tagger=TaggerService.load(path(names.tagger_model)),
            lemmatizer=Lemmatizer.load(path(names.lemmatizer_model), path(names.lemma_lexicon)),
            parser=ParserService.load(path(names.parser_model)),
        )


class AblationReport(BaseModel):
    flags: list[str]
    level: OracleLevel
    baseline: EvalReport
    variant: EvalReport
    deltas: dict[str, float]
