import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

from loguru import logger

from app.core.config import Settings
from app.core.errors import ConfigError, DataError, StageError
from app.core.runtime import run_directory, seed_everything
from app.features.conllu.models import EMPTY, Document, Sentence, Word
from app.features.conllu.services import NEWPAR, paragraphs, reconstruct_raw_text, train_dev_split
from app.features.lemmatizer.services import Lemmatizer
from app.features.mwt.services import MWTExpander
from app.features.neural.embeddings import PretrainedEmbeddings
from app.features.parser.services import ParserService
from app.features.pipeline.models import (
    MANIFEST_FILE,
    ORACLE_LEVELS,
    AblationReport,
    ModelSet,
    RunManifest,
    StageRecord,
    TrainingData,
    ablation_level,
    apply_ablations,
)
from app.features.scorer.models import EvalReport
from app.features.scorer.services import evaluate
from app.features.tagger.services import TaggerService
from app.features.tokenizer.models import split_paragraphs
from app.features.tokenizer.services import TokenizerService

SentenceStep = Callable[[Sentence], Sentence]


def _sentence_steps(models: ModelSet, stages: Sequence[str]) -> list[tuple[str, SentenceStep]]:
    steps = {
        "expand": models.mwt.expand_sentence,
        "tag": models.tagger.tag_sentence,
        "lemmatize": models.lemmatizer.lemmatize_sentence,
        "parse": models.parser.parse_sentence,
    }
    return [(stage, steps[stage]) for stage in stages]


def _run_paragraph(
    steps: list[tuple[str, SentenceStep]], sentences: list[Sentence], offset: int
) -> list[Sentence]:
    out = []
    for index, sentence in enumerate(sentences, start=offset):
        for stage, step in steps:
            try:
                sentence = step(sentence)
            except Exception as e:
                raise StageError(stage, index, e) from e
        out.append(sentence)
    return out


def _check_trees(doc: Document) -> None:
    for index, sentence in enumerate(doc.sentences):
        if not sentence.has_tree:
            raise StageError("parse", index, DataError("sentence left without a full tree"))


def run_stages(
    models: ModelSet,
    doc: Document,
    stages: Sequence[str] = ("expand", "tag", "lemmatize", "parse"),
    workers: int = 1,
) -> Document:
    """Run sentence-level stages over a tokenized document, paragraph by paragraph.

    Stages are sequential within a paragraph; paragraphs run concurrently when
    ``workers > 1``.

    Raises:
        StageError: Naming the failing stage and the document-level sentence index.
    """
    steps = _sentence_steps(models, stages)
    groups = paragraphs(doc)
    offsets = [0]
    for group in groups[:-1]:
        offsets.append(offsets[-1] + len(group))
    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_paragraph, [steps] * len(groups), groups, offsets))
    else:
        results = [_run_paragraph(steps, g, o) for g, o in zip(groups, offsets)]
    sentences = tuple(s for group in results for s in group)
    return Document(sentences=sentences, raw_text=doc.raw_text)


def _tokenize(tokenizer: TokenizerService, raw: str, workers: int) -> Document:
    def one(text: str) -> list[Sentence]:
        try:
            group = tokenizer.tokenize_paragraph(text)
        except Exception as e:
            raise StageError("tokenize", None, e) from e
        if group:
            first = group[0]
            group[0] = first.model_copy(update={"comments": (NEWPAR, *first.comments)})
        return group

    texts = split_paragraphs(raw)
    if workers > 1 and len(texts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, texts))
    else:
        results = [one(text) for text in texts]
    return Document(sentences=tuple(s for group in results for s in group), raw_text=raw)


def run_pipeline(models: ModelSet, raw: str, workers: int = 1) -> Document:
    """Turn raw text into a fully annotated document.

    Stages run in order tokenize, expand, tag, lemmatize, parse; the lemmatizer sees
    predicted UPOS and the parser sees predicted tags, lemmas and features.

    Args:
        models: The trained stages.
        raw: Raw text; blank lines separate paragraphs.
        workers: Paragraphs processed concurrently.

    Returns:
        Document: One sentence per predicted sentence, every one a complete tree.

    Raises:
        StageError: If any stage fails.
    """
    tokenized = _tokenize(models.tokenizer, raw, workers)
    logger.info(f"Tokenized {len(tokenized.sentences)} sentences")
    doc = run_stages(models, tokenized, workers=workers)
    _check_trees(doc)
    return doc


def _blank(word: Word, keep_tags: bool, keep_lemma: bool) -> Word:
    update = {"head": None, "deprel": EMPTY, "deps": EMPTY}
    if not keep_tags:
        update.update(upos=EMPTY, xpos=EMPTY, ufeats=EMPTY)
    if not keep_lemma:
        update["lemma"] = ""
    return word.model_copy(update=update)


def oracle_input(gold: Document, level: str) -> Document:
    """Gold annotations up to ``level``, everything downstream of it removed."""
    keep_tags = level in ("tag", "lemma")
    keep_lemma = level == "lemma"
    sentences = tuple(
        s.model_copy(update={"words": tuple(_blank(w, keep_tags, keep_lemma) for w in s.words)})
        for s in gold.sentences
    )
    return Document(sentences=sentences, raw_text=gold.raw_text)


def run_with_oracle(
    models: ModelSet,
    gold: Document,
    raw: Optional[str] = None,
    level: str = "none",
    workers: int = 1,
) -> Document:
    """Run the pipeline with gold annotations replacing every stage up to ``level``.

    ``none`` is the plain pipeline, ``tokenize`` starts from gold words, ``tag`` also
    keeps gold tags and ``lemma`` also keeps gold lemmas, leaving only the parser.
    """
    if level not in ORACLE_LEVELS:
        raise ConfigError(f"Unknown oracle level '{level}', expected one of {ORACLE_LEVELS}")
    if level == "none":
        text = raw if raw is not None else reconstruct_raw_text(gold)
        return run_pipeline(models, text, workers)
    stages = {"tokenize": ("tag", "lemmatize", "parse"), "tag": ("lemmatize", "parse")}
    doc = run_stages(models, oracle_input(gold, level), stages.get(level, ("parse",)), workers)
    _check_trees(doc)
    return doc


def evaluate_models(
    models: ModelSet,
    gold: Document,
    raw: Optional[str] = None,
    level: str = "none",
    workers: int = 1,
) -> EvalReport:
    return evaluate(gold, run_with_oracle(models, gold, raw, level, workers))


def prepare_training_data(
    train: Document,
    dev: Optional[Document] = None,
    train_raw: Optional[str] = None,
    dev_raw: Optional[str] = None,
    ratio: int = 8,
) -> TrainingData:
    """Bundle the training inputs, splitting a dev set off ``train`` when none is given.

    With an automatic split both raw texts are rebuilt from the documents.
    """
    if dev is None:
        logger.info(f"No dev set given; holding out every {ratio}th training sentence")
        train, dev = train_dev_split(train, ratio)
        train_raw = dev_raw = None
    return TrainingData(train=train, dev=dev, train_raw=train_raw, dev_raw=dev_raw)


def load_embeddings(settings: Settings) -> Optional[PretrainedEmbeddings]:
    if settings.embeddings_file is None:
        return None
    if not Path(settings.embeddings_file).exists():
        raise ConfigError(f"Embeddings file not found: {settings.embeddings_file}")
    return PretrainedEmbeddings.from_file(settings.embeddings_file, settings.embeddings_limit)


def _epoch_record(stage: str, log: list, seconds: float) -> StageRecord:
    metrics = [entry.dev for entry in log if entry.dev is not None]
    return StageRecord(
        stage=stage,
        seconds=seconds,
        best_metric=max(metrics) if metrics else None,
        log=[entry.model_dump() for entry in log],
    )


def _schedule_record(stage: str, result, seconds: float) -> StageRecord:
    return StageRecord(
        stage=stage,
        seconds=seconds,
        best_metric=result.best_metric,
        switch_step=result.switch_step,
        log=[entry.model_dump() for entry in result.log],
    )


def train_tokenizer_stage(
    settings: Settings, data: TrainingData
) -> tuple[TokenizerService, StageRecord]:
    started = time.perf_counter()
    service, result = TokenizerService.train(
        data.train, data.dev, settings.tokenizer, data.train_raw, data.dev_raw
    )
    return service, _schedule_record("tokenizer", result, time.perf_counter() - started)


def train_mwt_stage(settings: Settings, data: TrainingData) -> tuple[MWTExpander, StageRecord]:
    started = time.perf_counter()
    expander, log = MWTExpander.train(data.train, data.dev, settings.mwt)
    return expander, _epoch_record("mwt", log, time.perf_counter() - started)


def train_tagger_stage(
    settings: Settings, data: TrainingData, embeddings: Optional[PretrainedEmbeddings] = None
) -> tuple[TaggerService, StageRecord]:
    started = time.perf_counter()
    service, result = TaggerService.train(data.train, data.dev, settings.tagger, embeddings)
    return service, _schedule_record("tagger", result, time.perf_counter() - started)


def train_lemmatizer_stage(
    settings: Settings, data: TrainingData
) -> tuple[Lemmatizer, StageRecord]:
    started = time.perf_counter()
    lemmatizer, log = Lemmatizer.train(data.train, data.dev, settings.lemmatizer)
    return lemmatizer, _epoch_record("lemmatizer", log, time.perf_counter() - started)


def train_parser_stage(
    settings: Settings,
    data: TrainingData,
    tagger: Optional[TaggerService] = None,
    embeddings: Optional[PretrainedEmbeddings] = None,
) -> tuple[ParserService, StageRecord]:
    """Train the parser, on tagger predictions when ``tagger`` is given."""
    started = time.perf_counter()
    train, dev = data.train, data.dev
    if tagger is not None:
        workers = settings.pipeline.workers
        train = tagger.tag_document(_nonempty(train), workers)
        dev = tagger.tag_document(_nonempty(dev), workers)
    service, result = ParserService.train(train, dev, settings.parser, embeddings)
    return service, _schedule_record("parser", result, time.perf_counter() - started)


def _nonempty(doc: Document) -> Document:
    return doc.model_copy(update={"sentences": tuple(s for s in doc.sentences if s.words)})


def new_manifest(settings: Settings) -> RunManifest:
    return RunManifest(seed=settings.seed, config=settings.model_dump(mode="json"))


def train_all(settings: Settings, data: TrainingData) -> tuple[ModelSet, RunManifest]:
    """Train every stage in pipeline order.

    Upstream stages are trained on gold annotations; the parser is trained on predicted
    tags when ``pipeline.parser_predicted_tags`` is set.

    Args:
        settings: Full configuration; ``seed`` is applied first.
        data: Training and development treebanks.

    Returns:
        tuple[ModelSet, RunManifest]: The trained models and the run record (checksums
        are filled in by ``save_models``).
    """
    seed_everything(settings.seed)
    manifest = new_manifest(settings)
    embeddings = load_embeddings(settings)

    tokenizer, manifest.stages["tokenizer"] = train_tokenizer_stage(settings, data)
    mwt, manifest.stages["mwt"] = train_mwt_stage(settings, data)
    tagger, manifest.stages["tagger"] = train_tagger_stage(settings, data, embeddings)
    lemmatizer, manifest.stages["lemmatizer"] = train_lemmatizer_stage(settings, data)
    upstream = tagger if settings.pipeline.parser_predicted_tags else None
    parser, manifest.stages["parser"] = train_parser_stage(settings, data, upstream, embeddings)

    for name, record in manifest.stages.items():
        logger.info(f"{name}: best dev {record.best_metric} in {record.seconds:.1f}s")
    return ModelSet(tokenizer, mwt, tagger, lemmatizer, parser), manifest


def save_models(models: ModelSet, manifest: RunManifest, settings: Settings) -> Path:
    """Write all stages and the manifest to the model directory in one transaction."""
    with run_directory(settings.model_dir) as workdir:
        manifest.checksums = models.save(workdir, settings.pipeline)
        manifest.write(workdir / MANIFEST_FILE)
    logger.info(f"Saved models to {settings.model_dir}")
    return Path(settings.model_dir)


def ablate(settings: Settings, flags: Sequence[str], data: TrainingData) -> AblationReport:
    """Train the full system and the flagged variant on the same data and compare.

    Each variant is scored with gold inputs up to the most upstream flagged component.

    Raises:
        ConfigError: If a flag is unknown; checked before any training.
    """
    flags = list(dict.fromkeys(flags))
    variant_settings = apply_ablations(settings, flags)
    level = ablation_level(flags)
    baseline_models, _ = train_all(settings, data)
    baseline = evaluate_models(
        baseline_models, data.dev, data.dev_raw, level, settings.pipeline.workers
    )
    if not flags:
        variant = baseline
    else:
        variant_models, _ = train_all(variant_settings, data)
        variant = evaluate_models(
            variant_models, data.dev, data.dev_raw, level, settings.pipeline.workers
        )
    deltas = variant.delta(baseline)
    logger.info(f"Ablation {flags or 'none'}: LAS delta {deltas.get('LAS', 0.0):+.4f}")
    return AblationReport(
        flags=flags, level=level, baseline=baseline, variant=variant, deltas=deltas
    )
