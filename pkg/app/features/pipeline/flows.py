"""Prefect flows for training, ablation and prediction runs."""

from pathlib import Path
from typing import Optional

from prefect import flow, task
from prefect.cache_policies import NO_CACHE

from app.core.config import Settings
from app.core.runtime import seed_everything
from app.features.conllu.parsers import read_conllu_file, write_conllu_file
from app.features.pipeline.models import AblationReport, ModelSet, RunManifest, TrainingData
from app.features.pipeline.services import (
    ablate,
    load_embeddings,
    new_manifest,
    run_pipeline,
    save_models,
    train_lemmatizer_stage,
    train_mwt_stage,
    train_parser_stage,
    train_tagger_stage,
    train_tokenizer_stage,
)
from app.features.scorer.services import evaluate, render_table


@task(name="train_tokenizer", cache_policy=NO_CACHE)
def train_tokenizer_task(settings: Settings, data: TrainingData):
    tokenizer, record = train_tokenizer_stage(settings, data)
    print(f"Tokenizer trained: dev unit accuracy {record.best_metric:.4f}")
    return tokenizer, record


@task(name="train_mwt", cache_policy=NO_CACHE)
def train_mwt_task(settings: Settings, data: TrainingData):
    expander, record = train_mwt_stage(settings, data)
    print(f"MWT expander trained: {len(expander.lexicon)} lexicon entries")
    return expander, record


@task(name="train_tagger", cache_policy=NO_CACHE)
def train_tagger_task(settings: Settings, data: TrainingData, embeddings=None):
    tagger, record = train_tagger_stage(settings, data, embeddings)
    print(f"Tagger trained: dev accuracy {record.best_metric:.4f}, switch {record.switch_step}")
    return tagger, record


@task(name="train_lemmatizer", cache_policy=NO_CACHE)
def train_lemmatizer_task(settings: Settings, data: TrainingData):
    lemmatizer, record = train_lemmatizer_stage(settings, data)
    print(f"Lemmatizer trained: best dev {record.best_metric}")
    return lemmatizer, record


@task(name="train_parser", cache_policy=NO_CACHE)
def train_parser_task(settings: Settings, data: TrainingData, tagger=None, embeddings=None):
    parser, record = train_parser_stage(settings, data, tagger, embeddings)
    print(f"Parser trained: dev LAS {record.best_metric:.4f}, switch {record.switch_step}")
    return parser, record


@flow(name="train_all", log_prints=True)
def train_all_flow(settings: Settings, data: TrainingData) -> RunManifest:
    """Train every stage, save the model set and return the run manifest."""
    seed_everything(settings.seed)
    manifest = new_manifest(settings)
    embeddings = load_embeddings(settings)

    tokenizer, manifest.stages["tokenizer"] = train_tokenizer_task(settings, data)
    mwt, manifest.stages["mwt"] = train_mwt_task(settings, data)
    tagger, manifest.stages["tagger"] = train_tagger_task(settings, data, embeddings)
    lemmatizer, manifest.stages["lemmatizer"] = train_lemmatizer_task(settings, data)
    upstream = tagger if settings.pipeline.parser_predicted_tags else None
    parser, manifest.stages["parser"] = train_parser_task(settings, data, upstream, embeddings)

    models = ModelSet(tokenizer, mwt, tagger, lemmatizer, parser)
    directory = save_models(models, manifest, settings)
    print(f"Saved {len(manifest.checksums)} model files to {directory}")
    return manifest


@flow(name="ablate", log_prints=True)
def ablate_flow(settings: Settings, flags: list[str], data: TrainingData) -> AblationReport:
    report = ablate(settings, flags, data)
    for metric, delta in report.deltas.items():
        print(f"{metric}: {delta:+.4f}")
    return report


@flow(name="predict", log_prints=True)
def predict_flow(
    settings: Settings, raw_file: Path, output_file: Optional[Path] = None
) -> Path:
    """Annotate a raw text file and write CoNLL-U next to it (or to ``output_file``)."""
    raw_file = Path(raw_file)
    models = ModelSet.load(settings)
    doc = run_pipeline(models, raw_file.read_text(encoding="utf-8"), settings.pipeline.workers)
    target = Path(output_file) if output_file else raw_file.with_suffix(".conllu")
    write_conllu_file(doc, target)
    print(f"Wrote {len(doc.sentences)} sentences to {target}")
    return target


@flow(name="evaluate", log_prints=True)
def evaluate_flow(gold_file: Path, system_file: Path, raw_file: Optional[Path] = None):
    raw = Path(raw_file).read_text(encoding="utf-8") if raw_file is not None else None
    report = evaluate(read_conllu_file(gold_file), read_conllu_file(system_file), raw)
    print(render_table(report))
    return report
