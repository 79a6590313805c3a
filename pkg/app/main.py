import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.core.config import Settings, load_settings, parse_override
from app.core.errors import EXIT_OK, ConfigError, UDFlowError
from app.core.logging import configure_logging
from app.core.runtime import seed_everything
from app.features.conllu.models import Document
from app.features.conllu.parsers import read_conllu_file, write_conllu
from app.features.lemmatizer.services import Lemmatizer
from app.features.mwt.services import MWTExpander
from app.features.parser.services import ParserService
from app.features.pipeline.models import ABLATIONS, ModelSet
from app.features.pipeline.services import (
    ablate,
    prepare_training_data,
    run_pipeline,
    save_models,
    train_all,
)
from app.features.scorer.services import evaluate, render_key_values, render_table
from app.features.tagger.services import TaggerService
from app.features.tokenizer.services import TokenizerService


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _read_text(path: Optional[Path]) -> Optional[str]:
    return Path(path).read_text(encoding="utf-8") if path is not None else None


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(text, encoding="utf-8")


def _emit_doc(doc: Document, output: Optional[Path]) -> None:
    _emit(write_conllu(doc), output)


def _training_data(args: argparse.Namespace, settings: Settings):
    return prepare_training_data(
        read_conllu_file(args.train),
        read_conllu_file(args.dev) if args.dev else None,
        _read_text(args.train_raw),
        _read_text(args.dev_raw),
        settings.pipeline.dev_ratio,
    )


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    models, manifest = train_all(settings, _training_data(args, settings))
    save_models(models, manifest, settings)
    for stage, switch in manifest.switch_steps.items():
        if switch is not None:
            print(f"{stage}_switch_step={switch}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, settings: Settings) -> int:
    models = ModelSet.load(settings)
    doc = run_pipeline(models, _read_text(args.input), settings.pipeline.workers)
    _emit_doc(doc, args.output)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    report = evaluate(
        read_conllu_file(args.gold), read_conllu_file(args.system), _read_text(args.raw)
    )
    print(render_table(report))
    print(render_key_values(report), end="")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, settings: Settings) -> int:
    report = ablate(settings, args.flag or [], _training_data(args, settings))
    print(f"level={report.level}")
    for metric, delta in report.deltas.items():
        print(f"{metric.lower()}_delta={delta:+.6f}")
    return EXIT_OK


def _model(args: argparse.Namespace, settings: Settings, name: str) -> Path:
    return args.model if args.model is not None else settings.model_path(name)


def _lexicon(args: argparse.Namespace, settings: Settings, name: str) -> Path:
    return args.lexicon if args.lexicon is not None else settings.model_path(name)


def cmd_tokenize(args: argparse.Namespace, settings: Settings) -> int:
    tokenizer = TokenizerService.load(
        _model(args, settings, settings.pipeline.tokenizer_model), unit_mode=args.mode
    )
    doc = tokenizer.tokenize_text(_read_text(args.input), settings.pipeline.workers)
    _emit_doc(doc, args.output)
    return EXIT_OK


def cmd_expand_mwt(args: argparse.Namespace, settings: Settings) -> int:
    names = settings.pipeline
    expander = MWTExpander.load(
        _model(args, settings, names.mwt_model), _lexicon(args, settings, names.mwt_lexicon)
    )
    _emit_doc(expander.expand_document(read_conllu_file(args.input), names.workers), args.output)
    return EXIT_OK


def cmd_tag(args: argparse.Namespace, settings: Settings) -> int:
    tagger = TaggerService.load(_model(args, settings, settings.pipeline.tagger_model))
    doc = tagger.tag_document(read_conllu_file(args.input), settings.pipeline.workers)
    _emit_doc(doc, args.output)
    return EXIT_OK


def cmd_lemmatize(args: argparse.Namespace, settings: Settings) -> int:
    names = settings.pipeline
    lemmatizer = Lemmatizer.load(
        _model(args, settings, names.lemmatizer_model),
        _lexicon(args, settings, names.lemma_lexicon),
    )
    doc = lemmatizer.lemmatize_document(read_conllu_file(args.input), names.workers)
    _emit_doc(doc, args.output)
    return EXIT_OK


def cmd_parse(args: argparse.Namespace, settings: Settings) -> int:
    parser = ParserService.load(_model(args, settings, settings.pipeline.parser_model))
    doc = parser.parse_document(read_conllu_file(args.input), settings.pipeline.workers)
    _emit_doc(doc, args.output)
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="udflow", description="Raw text to Universal Dependencies.")
    parser.add_argument("--config", type=Path, help="TOML file with stage.param keys")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one setting, e.g. --set tagger.lr=0.002",
    )
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    def training_args(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--train", type=Path, required=True, help="Gold training CoNLL-U")
        sub.add_argument("--dev", type=Path, help="Gold dev CoNLL-U; split off --train if absent")
        sub.add_argument("--train-raw", type=Path, help="Raw text of the training set")
        sub.add_argument("--dev-raw", type=Path, help="Raw text of the dev set")

    def io_args(sub: argparse.ArgumentParser, kind: str) -> None:
        sub.add_argument("--input", type=Path, required=True, help=f"Input {kind} file")
        sub.add_argument("--output", type=Path, help="Output CoNLL-U; stdout if absent")

    train = commands.add_parser("train", help="Train all stages")
    training_args(train)
    train.set_defaults(handler=cmd_train)

    predict = commands.add_parser("predict", help="Annotate raw text with the full pipeline")
    io_args(predict, "raw text")
    predict.set_defaults(handler=cmd_predict)

    score = commands.add_parser("evaluate", help="Score a system file against gold")
    score.add_argument("--gold", type=Path, required=True)
    score.add_argument("--system", type=Path, required=True)
    score.add_argument("--raw", type=Path, help="Raw text the system output was produced from")
    score.set_defaults(handler=cmd_evaluate)

    ablation = commands.add_parser("ablate", help="Compare a component ablation to the full system")
    training_args(ablation)
    ablation.add_argument("--flag", action="append", choices=sorted(ABLATIONS))
    ablation.set_defaults(handler=cmd_ablate)

    def stage(name: str, handler, kind: str, lexicon: bool = False) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=f"Run the {name} stage alone")
        flags = ("--raw-text", "--input") if name == "tokenize" else ("--input",)
        sub.add_argument(*flags, dest="input", type=Path, required=True, help=f"Input {kind} file")
        sub.add_argument("--output", type=Path, help="Output CoNLL-U; stdout if absent")
        sub.add_argument("--model", type=Path, help="Model file; model_dir default if absent")
        if lexicon:
            sub.add_argument("--lexicon", type=Path, help="Dictionary file saved with the model")
        sub.set_defaults(handler=handler)
        return sub

    tokenize = stage("tokenize", cmd_tokenize, "raw text")
    tokenize.add_argument(
        "--mode", choices=["char", "syllable"], help="Unit mode; the trained one if absent"
    )
    stage("expand-mwt", cmd_expand_mwt, "CoNLL-U", lexicon=True)
    stage("tag", cmd_tag, "CoNLL-U")
    stage("lemmatize", cmd_lemmatize, "CoNLL-U", lexicon=True)
    stage("parse", cmd_parse, "CoNLL-U")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        overrides = dict(parse_override(value) for value in args.overrides)
        settings = load_settings(args.config, overrides)
        configure_logging(settings.log_level)
        seed_everything(settings.seed)
        return args.handler(args, settings)
    except UDFlowError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
