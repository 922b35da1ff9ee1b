"""
Command-line surface: synth, train, eval, predict and gradcheck.

Every option may also come from a `key = value` config file (keys are the
long option names with dashes as underscores). Precedence is flag, then
file, then built-in default. Results go to stdout, diagnostics to stderr.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from dotenv import dotenv_values
from pydantic import ValidationError

from htr.core.tensor import anomaly_detection_enabled, detect_anomaly
from htr.data.manifest import load_manifest
from htr.data.synth import GlyphSet, write_synthetic_corpus
from htr.errors import HTRError, UsageError
from htr.models.checkpoint import load_checkpoint
from htr.models.pydantic_models import ModelConfig, ResNetConfig, TrainConfig, TransformerConfig
from htr.preprocessing.image_prep import prepare_line
from htr.text.codec import normalize_text
from htr.training.trainer import CHECKPOINT_NAME, LOG_NAME, evaluate_model, fit, model_from_checkpoint, transcribe
from htr.verification import CASE_NAMES, run_gradcheck_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def parse_bool(value: str) -> bool:
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass(frozen=True)
class Option:
    flag: str
    type: Callable[[str], Any] = str
    default: Any = None
    required: bool = False
    help: str = ""
    switch: bool = False

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


COMMON_OPTIONS = [
    Option("--config", help="key = value file supplying option defaults"),
    Option("--detect-anomaly", parse_bool, False, switch=True, help="abort on the first NaN/Inf"),
]

MODEL_OPTIONS = [
    Option("--image-height", int, 64, help="canonical line height"),
    Option("--max-width", int, 1024, help="widest normalized line"),
    Option("--binarize", parse_bool, False, switch=True, help="apply Otsu binarization"),
    Option("--width-scale", float, 0.25, help="ResNet channel multiplier"),
    Option("--d-model", int, 256),
    Option("--heads", int, 4),
    Option("--enc-layers", int, 2),
    Option("--dec-layers", int, 2),
    Option("--d-ff", int, 512),
    Option("--dropout", float, 0.1),
    Option("--max-target-len", int, 128),
    Option("--proj-depth", int, 2),
]

COMMANDS: Dict[str, Tuple[str, List[Option]]] = {
    "synth": (
        "render a synthetic corpus",
        [
            Option("--glyphs", required=True, help="glyph directory, .ttf/.otf font, or 'procedural'"),
            Option("--lexicon", required=True, help="UTF-8 file with one transcription per line"),
            Option("--count", int, 64),
            Option("--out", required=True, help="output directory"),
            Option("--seed", int, 0),
            Option("--noise", float, 0.0, help="standard deviation of additive noise"),
            Option("--height", int, 64),
        ],
    ),
    "train": (
        "train a model on a manifest",
        [
            Option("--manifest", required=True),
            Option("--out", required=True, help="directory for checkpoint and training log"),
            Option("--resume", help="checkpoint to continue from"),
            Option("--seed", int, 0),
            Option("--max-steps", int, 2000),
            Option("--batch-size", int, 8),
            Option("--lr", float, 3e-4),
            Option("--grad-clip", float, 1.0),
            Option("--eval-every", int, 100),
            Option("--val-fraction", float, 0.1),
            Option("--prefetch", int, 2),
            *MODEL_OPTIONS,
        ],
    ),
    "eval": (
        "score a checkpoint on a manifest",
        [
            Option("--manifest", required=True),
            Option("--ckpt", required=True),
            Option("--beam", int, 1, help="beam width; 1 is greedy"),
            Option("--workers", int, 1, help="threads decoding lines in parallel"),
            Option("--json", parse_bool, False, switch=True, help="emit the report as JSON"),
        ],
    ),
    "predict": (
        "transcribe one line image",
        [
            Option("--image", required=True),
            Option("--ckpt", required=True),
            Option("--beam", int, 1),
        ],
    ),
    "gradcheck": (
        "run the finite-difference gradient suite",
        [
            Option("--seed", int, 0),
            Option("--points", int, 10, help="random points per op"),
            Option("--only", help="comma-separated case names"),
        ],
    ),
}


class HTRArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting"""

    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


def build_parser() -> HTRArgumentParser:
    parser = HTRArgumentParser(prog="htr", description="Urdu handwritten line recognition toolkit")
    subparsers = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for name, (summary, options) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=summary, description=summary)
        for option in [*COMMON_OPTIONS, *options]:
            if option.switch:
                sub.add_argument(option.flag, action="store_true", default=None, help=option.help)
            else:
                sub.add_argument(option.flag, type=option.type, default=None, help=option.help)
    return parser


def resolve_settings(command: str, parsed: argparse.Namespace) -> Dict[str, Any]:
    """Merge flags over config-file values over defaults"""
    options = [*COMMON_OPTIONS, *COMMANDS[command][1]]
    by_dest = {option.dest: option for option in options}
    file_values: Dict[str, Optional[str]] = {}
    if parsed.config:
        path = Path(parsed.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        file_values = dotenv_values(path, encoding="utf-8")
        for key in file_values:
            if key not in by_dest or key == "config":
                raise UsageError(f"unknown config key {key!r} for {command}")

    settings: Dict[str, Any] = {}
    for dest, option in by_dest.items():
        value = getattr(parsed, dest)
        if value is None and file_values.get(dest) is not None:
            try:
                value = option.type(file_values[dest])
            except ValueError as exc:
                raise UsageError(f"config key {dest!r}: {exc}") from exc
        if value is None:
            if option.required:
                raise UsageError(f"{command}: {option.flag} is required")
            value = option.default
        settings[dest] = value
    return settings


def model_config_from(settings: Dict[str, Any]) -> ModelConfig:
    return ModelConfig(
        image_height=settings["image_height"],
        max_width=settings["max_width"],
        binarize=settings["binarize"],
        proj_depth=settings["proj_depth"],
        seed=settings["seed"],
        resnet=ResNetConfig(width_scale=settings["width_scale"]),
        transformer=TransformerConfig(
            d_model=settings["d_model"],
            n_heads=settings["heads"],
            enc_layers=settings["enc_layers"],
            dec_layers=settings["dec_layers"],
            d_ff=settings["d_ff"],
            dropout=settings["dropout"],
            max_target_len=settings["max_target_len"],
        ),
    )


def train_config_from(settings: Dict[str, Any]) -> TrainConfig:
    return TrainConfig(
        learning_rate=settings["lr"],
        max_steps=settings["max_steps"],
        batch_size=settings["batch_size"],
        grad_clip=settings["grad_clip"],
        seed=settings["seed"],
        eval_every=settings["eval_every"],
        val_fraction=settings["val_fraction"],
        prefetch=settings["prefetch"],
    )


def read_lexicon(path: Path) -> List[str]:
    if not path.is_file():
        raise FileNotFoundError(f"lexicon not found: {path}")
    lines = [normalize_text(line) for line in path.read_text(encoding="utf-8").splitlines()]
    return [line for line in lines if line]


def load_glyphs(source: str, alphabet: str, seed: int) -> GlyphSet:
    if source == "procedural":
        return GlyphSet.procedural(alphabet, seed=seed)
    path = Path(source)
    if path.suffix.lower() in (".ttf", ".otf"):
        return GlyphSet.from_font(path, alphabet)
    return GlyphSet.from_directory(path)


def cmd_synth(settings: Dict[str, Any]) -> int:
    lexicon = read_lexicon(Path(settings["lexicon"]))
    glyphs = load_glyphs(settings["glyphs"], "".join(lexicon), settings["seed"])
    manifest = write_synthetic_corpus(
        lexicon,
        glyphs,
        count=settings["count"],
        out_dir=settings["out"],
        seed=settings["seed"],
        noise_level=settings["noise"],
        height=settings["height"],
    )
    print(manifest)
    return EXIT_OK


def cmd_train(settings: Dict[str, Any]) -> int:
    try:
        model_config = model_config_from(settings)
        train_config = train_config_from(settings)
    except ValidationError as exc:
        raise UsageError(str(exc)) from exc
    entries = load_manifest(settings["manifest"])
    resume = load_checkpoint(settings["resume"]) if settings["resume"] else None
    result = fit(entries, model_config, train_config, settings["out"], resume=resume)
    last = result.log[-1] if result.log else None
    summary = {
        "checkpoint": str(Path(settings["out"]) / CHECKPOINT_NAME),
        "log": str(Path(settings["out"]) / LOG_NAME),
        "step": result.checkpoint.step,
        "loss": last.loss if last else None,
        "val_cer": last.val_cer if last else None,
    }
    print(json.dumps(summary, ensure_ascii=False))
    return EXIT_OK


def cmd_eval(settings: Dict[str, Any]) -> int:
    entries = load_manifest(settings["manifest"])
    report = evaluate_model(settings["ckpt"], entries, beam_width=settings["beam"], workers=settings["workers"])
    if settings["json"]:
        print(report.model_dump_json(by_alias=True, indent=2))
    else:
        print(report.to_table())
    return EXIT_OK


def cmd_predict(settings: Dict[str, Any]) -> int:
    ckpt = load_checkpoint(settings["ckpt"])
    config = ckpt.architecture
    image = prepare_line(settings["image"], config.image_height, config.max_width, config.binarize)
    model = model_from_checkpoint(ckpt).eval()
    print(transcribe(model, ckpt.vocab, image, beam_width=settings["beam"]))
    return EXIT_OK


def cmd_gradcheck(settings: Dict[str, Any]) -> int:
    names: Sequence[str] = ()
    if settings["only"]:
        names = [name.strip() for name in settings["only"].split(",") if name.strip()]
        unknown = sorted(set(names) - set(CASE_NAMES))
        if unknown:
            raise UsageError(f"unknown gradcheck cases {unknown}; choose from {list(CASE_NAMES)}")
    results = run_gradcheck_suite(seed=settings["seed"], points=settings["points"], names=names)
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name:<24} {result.max_error:.3e}  {result.seconds:6.2f}s  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error("gradient check failed for %s", ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


HANDLERS: Dict[str, Callable[[Dict[str, Any]], int]] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        parsed = parser.parse_args(list(argv))
        if parsed.command is None:
            raise UsageError(f"a subcommand is required\n{parser.format_usage().strip()}")
        settings = resolve_settings(parsed.command, parsed)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        with detect_anomaly(settings["detect_anomaly"] or anomaly_detection_enabled()):
            return HANDLERS[parsed.command](settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HTRError, OSError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
