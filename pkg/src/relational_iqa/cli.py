"""Command line entrypoints for relational-iqa."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import shutil
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, NoReturn, Sequence

try:  # pragma: no cover - fallback when colorama is absent
    from colorama import Fore, Style, init
except ImportError:  # pragma: no cover - fallback used in minimal environments

    class _Color:
        BLACK = BLUE = CYAN = GREEN = MAGENTA = RED = WHITE = YELLOW = ""
        RESET = ""

    class _Style:
        BRIGHT = DIM = RESET_ALL = ""

    def init(*_: object, **__: object) -> None:
        return None

    Fore = _Color()  # type: ignore
    Style = _Style()  # type: ignore

import numpy as np

from . import __version__, config
from .dataset import DatasetContents, read_dataset, write_dataset
from .distortion_bank import DistortionKind
from .errors import RelationalIqaError, ValidationError
from .imagecore import ImageBuffer, Rng, load_png, save_png
from .mask_engine import MaskSet, load_label_map
from .predictor import (
    eval_antisymmetry,
    eval_disentanglement,
    eval_monotonicity,
    load_predictor,
    predict_map,
    save_predictor,
    train_predictor,
)
from .scorer import eval_ranking, load_scorer, save_scorer, train_scorer
from .triplet_synth import (
    TierSet,
    Triplet,
    build_tier_schedule,
    generate_triplets,
    procedural_scene,
    prune_tiers,
    swap_augment,
    tier_magnitudes,
)
from .verification import MODULES, require_passing, run_checks

# Initialize colorama
init(autoreset=True)

logger = logging.getLogger(__name__)

ANSI_ESCAPE_RE = re.compile(r"\x1B\[[0-?]*[ -/]*[@-~]")
REPORT_SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _strip_ansi(text: str) -> str:
    return ANSI_ESCAPE_RE.sub("", text)


def _visible_length(text: str) -> int:
    return len(_strip_ansi(text))


def _ljust_visible(text: str, width: int) -> str:
    padding = max(width - _visible_length(text), 0)
    return text + (" " * padding)


def _wrap_text(text: str, max_width: int) -> list[str]:
    """Wrap text to fit within max_width, breaking on word boundaries."""
    if not text:
        return [""]
    lines: list[str] = []
    current: list[str] = []
    length = 0
    for word in text.split():
        word_length = _visible_length(word)
        needed = word_length + (1 if current else 0)
        if length + needed <= max_width:
            current.append(word)
            length += needed
            continue
        if current:
            lines.append(" ".join(current))
        if word_length > max_width and "\x1b" not in word:
            lines.extend(word[i : i + max_width] for i in range(0, len(word), max_width))
            current, length = [], 0
        else:
            current, length = [word], word_length
    if current:
        lines.append(" ".join(current))
    return lines or [""]


def _table_lines(headers: list[str], rows: Iterable[list[str]]) -> list[str]:
    terminal_width = shutil.get_terminal_size(fallback=(120, 24)).columns
    column_count = len(headers)
    available = max(terminal_width - (column_count * 3) - 4, column_count * 5)
    max_width = max(5, available // column_count)

    split_rows: list[list[list[str]]] = []
    for row in [headers] + list(rows):
        split_rows.append([_wrap_text(str(cell), max_width) for cell in row])

    widths = [0] * column_count
    for row_cells in split_rows:
        for idx, cell_lines in enumerate(row_cells):
            widths[idx] = max(widths[idx], *(_visible_length(line) for line in cell_lines))

    def build_rule(char: str) -> str:
        rule = "+" + "+".join(char * (width + 2) for width in widths) + "+"
        return f"{Fore.CYAN}{rule}{Style.RESET_ALL}"

    def render_row(cell_lines: list[list[str]], is_header: bool = False) -> list[str]:
        rendered: list[str] = []
        for line_idx in range(max(len(lines) for lines in cell_lines)):
            parts: list[str] = []
            for col_idx, lines in enumerate(cell_lines):
                padded = _ljust_visible(lines[line_idx] if line_idx < len(lines) else "", widths[col_idx])
                parts.append(f"{Fore.YELLOW}{Style.BRIGHT}{padded}{Style.RESET_ALL}" if is_header else padded)
            rendered.append(
                f"{Fore.CYAN}|{Style.RESET_ALL} "
                + f" {Fore.CYAN}|{Style.RESET_ALL} ".join(parts)
                + f" {Fore.CYAN}|{Style.RESET_ALL}"
            )
        return rendered

    all_lines = [build_rule("-")]
    all_lines.extend(render_row(split_rows[0], is_header=True))
    all_lines.append(build_rule("="))
    for row_cells in split_rows[1:]:
        all_lines.extend(render_row(row_cells))
    all_lines.append(build_rule("-"))
    return all_lines


def _render_table(headers: list[str], rows: Iterable[list[str]]) -> str:
    return "\n".join(_table_lines(headers, rows))


def _success(message: str) -> None:
    print(f"{Fore.GREEN}{message}{Style.RESET_ALL}")


def _warn(message: str) -> None:
    print(f"{Fore.YELLOW}{message}{Style.RESET_ALL}")


def _error(message: str) -> None:
    print(f"{Fore.RED}ERROR: {message}{Style.RESET_ALL}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Helpers


def _discover_pngs(path: Path) -> list[Path]:
    if not path.is_dir():
        raise ValidationError(f"Image directory {path} does not exist.")
    files = sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() == ".png")
    if not files:
        raise ValidationError(f"No PNG files found in {path}.")
    return files


def _load_rgb_images(files: Sequence[Path]) -> list[ImageBuffer]:
    images = []
    for path in files:
        image = load_png(path)
        if image.channels != 3:
            raise ValidationError(f"{path} is not an RGB image.")
        images.append(image)
    return images


def _output_path(value: Path | None, default: Path) -> Path:
    return value if value is not None else default


def _check_report_path(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ValidationError(f"{path} already exists; pass --force to overwrite.")
    path.parent.mkdir(parents=True, exist_ok=True)


def _write_report(path: Path, kind: str, body: dict[str, Any], force: bool) -> None:
    _check_report_path(path, force)
    report = {"schema_version": REPORT_SCHEMA_VERSION, "report": kind, **body}
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _success(f"Report written to {path}")


def _write_loss_trace(path: Path, trace: Sequence[float]) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(trace, start=1):
            writer.writerow([epoch, repr(float(loss))])


def _report_record_errors(contents: DatasetContents) -> None:
    for error in contents.errors:
        _warn(f"Skipped record {error.index}: {error.message}")


def _load_triplets(directory: Path) -> list[Triplet]:
    contents = read_dataset(directory)
    _report_record_errors(contents)
    if contents.layout != "triplets":
        raise ValidationError(f"{directory} holds a {contents.layout} dataset, expected triplets.")
    if not contents.triplets:
        raise ValidationError(f"No usable triplets in {directory}.")
    return contents.triplets


def _load_tiers(directory: Path) -> TierSet:
    contents = read_dataset(directory)
    _report_record_errors(contents)
    if contents.layout != "tiers" or contents.tiers is None:
        raise ValidationError(f"{directory} does not hold a tier set.")
    return contents.tiers


def _fmt(value: float) -> str:
    return f"{value:.4f}"


# ---------------------------------------------------------------------------
# Commands


def _semantic_sets(labels: Path, image_files: Sequence[Path] | None) -> list[MaskSet]:
    label_files = _discover_pngs(labels)
    if image_files is None:
        return [load_label_map(p) for p in label_files]
    by_stem = {p.stem: p for p in label_files}
    missing = [p.name for p in image_files if p.stem not in by_stem]
    if missing:
        raise ValidationError(f"No label map in {labels} for: {', '.join(missing)}.")
    return [load_label_map(by_stem[p.stem]) for p in image_files]


def run_synth(args: argparse.Namespace, cfg: config.Config) -> int:
    settings = cfg.synth
    count = args.count if args.count is not None else settings.count
    size = args.size if args.size is not None else settings.size
    seed = args.seed if args.seed is not None else settings.master_seed
    images_dir = args.images or cfg.io.images
    labels_dir = args.labels or cfg.io.labels
    out = _output_path(args.out, config.get_datasets_directory() / f"synth-{seed}")

    image_files = _discover_pngs(images_dir) if images_dir else None
    references = _load_rgb_images(image_files) if image_files else None
    semantic = _semantic_sets(labels_dir, image_files) if labels_dir else None

    triplets = generate_triplets(
        count, seed, cfg.engine, size, references, semantic, workers=args.workers or settings.workers
    )
    swap_rng = Rng(seed)
    triplets = [swap_augment(t, swap_rng, settings.p_swap) for t in triplets]
    write_dataset(triplets, out, force=args.force)

    kinds: Counter[int] = Counter()
    alphas: list[float] = []
    for triplet in triplets:
        for assignment in triplet.assignments:
            alphas.append(assignment.alpha)
            if assignment.alpha > 0:
                kinds[int(assignment.kind)] += 1
    rows = [[kind.name.lower(), str(kinds[int(kind)])] for kind in DistortionKind]
    print(_render_table(["Operator", "Distorted regions"], rows))
    mean_alpha = float(np.mean(alphas)) if alphas else 0.0
    swapped = sum(t.swapped for t in triplets)
    _success(f"Wrote {len(triplets)} triplet(s) to {out} (mean alpha {mean_alpha:.4f}, {swapped} swapped)")
    return EXIT_OK


def run_train_predictor(args: argparse.Namespace, cfg: config.Config) -> int:
    train_config = cfg.predictor
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if overrides:
        train_config = replace(train_config, **overrides)
    out = _output_path(args.out, config.get_models_directory() / "predictor")
    if (out / "header.json").exists() and not args.force:
        raise ValidationError(f"{out} already holds a checkpoint; pass --force to overwrite.")
    triplets = _load_triplets(args.data)
    result = train_predictor(triplets, train_config)
    save_predictor(result.model, out, force=args.force, metadata={"seed": train_config.seed})
    _write_loss_trace(out / "loss_trace.csv", result.loss_trace)
    rows = [[str(i), _fmt(loss)] for i, loss in enumerate(result.loss_trace, start=1)]
    print(_render_table(["Epoch", "Loss"], rows))
    _success(f"Predictor checkpoint written to {out}")
    return EXIT_OK


def _map_name(triplet: Triplet, position: int) -> str:
    forward = triplet.unswapped()
    return f"{forward.item_index if forward.item_index is not None else position:06d}"


def _check_map_paths(triplets: Sequence[Triplet], directory: Path, force: bool) -> None:
    if force or not directory.exists():
        return
    for position, triplet in enumerate(triplets):
        for suffix in ("ab", "ba"):
            for kind in DistortionKind:
                path = directory / f"{_map_name(triplet, position)}_{suffix}_{kind.name.lower()}.png"
                if path.exists():
                    raise ValidationError(f"{path} already exists; pass --force to overwrite.")


def _dump_maps(model: Any, triplets: Sequence[Triplet], directory: Path, force: bool) -> None:
    _check_map_paths(triplets, directory, force)
    directory.mkdir(parents=True, exist_ok=True)
    for position, triplet in enumerate(triplets):
        forward = triplet.unswapped()
        name = _map_name(triplet, position)
        for suffix, (a, b) in (("ab", (forward.test, forward.reference)), ("ba", (forward.reference, forward.test))):
            prediction = predict_map(model, a, b)
            for kind in DistortionKind:
                channel = ImageBuffer(prediction.data[int(kind)][None])
                save_png(channel, directory / f"{name}_{suffix}_{kind.name.lower()}.png")


def run_eval_antisym(args: argparse.Namespace, cfg: config.Config) -> int:
    _check_report_path(args.report, args.force)
    model = load_predictor(args.model)
    triplets = _load_triplets(args.data)
    if args.dump_maps:
        _check_map_paths(triplets, args.dump_maps, args.force)
    pairs = [(t.unswapped().test, t.unswapped().reference) for t in triplets]
    report = eval_antisymmetry(model, pairs)
    rows = [[kind.name.lower(), _fmt(v)] for kind, v in zip(DistortionKind, report.per_channel)]
    print(_render_table(["Channel", "Mean |F(A,B)+F(B,A)-1|"], rows))
    print(f"mean {_fmt(report.mean)}  max {_fmt(report.max)}  pairs {report.pairs}")
    if args.dump_maps:
        _dump_maps(model, triplets, args.dump_maps, args.force)
        _success(f"Map visualizations written to {args.dump_maps}")
    _write_report(args.report, "antisymmetry", report.to_dict(), args.force)
    return EXIT_OK


def run_eval_predictor(args: argparse.Namespace, cfg: config.Config) -> int:
    _check_report_path(args.report, args.force)
    model = load_predictor(args.model)
    triplets = _load_triplets(args.data)
    disentanglement = eval_disentanglement(model, triplets)
    bases = [t.unswapped().reference for t in triplets[: args.base_images]]
    monotonicity: dict[str, Any] = {}
    rows = []
    for kind in DistortionKind:
        results = [eval_monotonicity(model, base, kind, constants=cfg.engine.constants) for base in bases]
        mean = float(np.mean([r.correlation for r in results]))
        monotonicity[kind.name.lower()] = {
            "mean_correlation": mean,
            "per_image": [r.correlation for r in results],
            "degenerate": [r.degenerate for r in results],
        }
        rows.append([kind.name.lower(), _fmt(mean)])
    print(_render_table(["Kind", "Monotonicity SRCC"], rows))
    print(f"disentanglement accuracy {_fmt(disentanglement.accuracy)} over {disentanglement.regions} region(s)")
    body = {
        "disentanglement": disentanglement.to_dict(),
        "monotonicity": monotonicity,
        "mean_monotonicity": float(np.mean([m["mean_correlation"] for m in monotonicity.values()])),
    }
    _write_report(args.report, "predictor", body, args.force)
    return EXIT_OK


def run_tiers(args: argparse.Namespace, cfg: config.Config) -> int:
    settings = cfg.scorer
    schedule = config.parse_schedule(args.schedule) if args.schedule else settings.schedule
    seed = args.seed if args.seed is not None else cfg.synth.master_seed
    out = _output_path(args.out, config.get_datasets_directory() / f"tiers-{seed}")
    base_dir = args.base or cfg.io.images
    if base_dir:
        source_files: list[Path] | None = _discover_pngs(base_dir)
        bases = _load_rgb_images(source_files)
    else:
        scenes = args.scenes if args.scenes is not None else settings.scenes
        size = args.size if args.size is not None else settings.size
        scene_rng = Rng(seed)
        source_files = None
        bases = [procedural_scene(size, size, scene_rng.next_u64()) for _ in range(scenes)]

    tiers = build_tier_schedule(bases, schedule, Rng(seed), constants=cfg.engine.constants)
    tiers = replace(tiers, master_seed=seed)
    if args.prune or settings.prune:
        kept_tiers, dropped = prune_tiers(tiers)
        if dropped:
            _warn(f"Pruned scene(s) violating tier order: {', '.join(map(str, dropped))}")
            if source_files is not None:
                source_files = [f for i, f in enumerate(source_files) if i not in dropped]
        tiers = kept_tiers
    write_dataset(tiers, out, force=args.force, source_files=source_files)

    magnitudes = tier_magnitudes(tiers).mean(axis=0)
    rows = [[str(t.tier_id), _fmt(t.intensity), _fmt(m)] for t, m in zip(tiers.tiers, magnitudes)]
    print(_render_table(["Tier", "Intensity", "Mean RMS"], rows))
    _success(f"Wrote {len(tiers.tiers)} tier(s) x {tiers.scene_count} scene(s) to {out}")
    return EXIT_OK


def run_train_scorer(args: argparse.Namespace, cfg: config.Config) -> int:
    train_config = cfg.scorer.train
    overrides = {k: v for k, v in (("epochs", args.epochs), ("seed", args.seed)) if v is not None}
    if overrides:
        train_config = replace(train_config, **overrides)
    out = _output_path(args.out, config.get_models_directory() / "scorer")
    if (out / "header.json").exists() and not args.force:
        raise ValidationError(f"{out} already holds a checkpoint; pass --force to overwrite.")
    tiers = _load_tiers(args.tiers)
    predictor = load_predictor(args.predictor)
    result = train_scorer(tiers, predictor, train_config)
    save_scorer(result.model, out, force=args.force, metadata={"seed": train_config.seed})
    _write_loss_trace(out / "loss_trace.csv", result.loss_trace)
    rows = [[str(i), _fmt(loss)] for i, loss in enumerate(result.loss_trace, start=1)]
    print(_render_table(["Epoch", "Loss"], rows))
    _success(f"Scorer checkpoint written to {out}")
    return EXIT_OK


def run_eval_rank(args: argparse.Namespace, cfg: config.Config) -> int:
    _check_report_path(args.report, args.force)
    scorer = load_scorer(args.scorer)
    predictor = load_predictor(args.predictor)
    tiers = _load_tiers(args.tiers)
    report = eval_ranking(scorer, predictor, tiers)
    rows = [[str(t), _fmt(m)] for t, m in sorted(report.per_tier_means.items(), reverse=True)]
    print(_render_table(["Tier", "Mean score"], rows))
    print(f"pairwise accuracy {_fmt(report.pairwise_accuracy)}  mean SRCC {_fmt(report.mean_srcc)}")
    if report.embedding_separation is not None:
        print(f"embedding separation {_fmt(report.embedding_separation)}")
    _write_report(args.report, "ranking", report.to_dict(), args.force)
    return EXIT_OK


def run_verify_gradients(args: argparse.Namespace, cfg: config.Config) -> int:
    results = run_checks(args.module, args.seed)
    rows = []
    for result in results:
        status = f"{Fore.GREEN}pass{Style.RESET_ALL}" if result.passed else f"{Fore.RED}fail{Style.RESET_ALL}"
        rows.append([result.name, f"{result.max_error:.3e}", f"{result.tolerance:.0e}", status])
    print(_render_table(["Kernel", "Max rel. error", "Tolerance", "Status"], rows))
    require_passing(results)
    _success(f"All {len(results)} gradient check(s) passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with the validation code."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, default=None, help="YAML or JSON configuration file.")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs.")
    common.add_argument(
        "--verbose", "-v", action="count", default=0, help="Log progress (-v info, -vv debug)."
    )

    parser = _Parser(
        prog="riqa",
        description="Synthesize distortion datasets, train the map predictor and the relational scorer, and evaluate them.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    synth = subparsers.add_parser("synth", parents=[common], help="Generate a triplet dataset.")
    synth.add_argument("--out", "-o", type=Path, default=None, help="Dataset directory to create.")
    synth.add_argument("--count", type=int, default=None, help="Number of triplets.")
    synth.add_argument("--size", type=int, default=None, help="Side of procedural scenes in pixels.")
    synth.add_argument("--seed", type=int, default=None, help="Master seed.")
    synth.add_argument("--images", type=Path, default=None, help="Directory of reference PNGs.")
    synth.add_argument("--labels", type=Path, default=None, help="Directory of label-map PNGs.")
    synth.add_argument("--workers", type=int, default=None, help="Parallel item workers.")

    train_pred = subparsers.add_parser("train-predictor", parents=[common], help="Train the distortion-map predictor.")
    train_pred.add_argument("--data", type=Path, required=True, help="Triplet dataset directory.")
    train_pred.add_argument("--out", "-o", type=Path, default=None, help="Checkpoint directory.")
    train_pred.add_argument("--epochs", type=int, default=None)
    train_pred.add_argument("--seed", type=int, default=None)

    antisym = subparsers.add_parser("eval-antisym", parents=[common], help="Measure |F(A,B)+F(B,A)-1|.")
    antisym.add_argument("--model", type=Path, required=True, help="Predictor checkpoint directory.")
    antisym.add_argument("--data", type=Path, required=True, help="Triplet dataset directory.")
    antisym.add_argument("--report", type=Path, required=True, help="JSON report path.")
    antisym.add_argument("--dump-maps", type=Path, default=None, help="Directory for per-channel map PNGs.")

    eval_pred = subparsers.add_parser(
        "eval-predictor", parents=[common], help="Disentanglement and intensity monotonicity of a predictor."
    )
    eval_pred.add_argument("--model", type=Path, required=True, help="Predictor checkpoint directory.")
    eval_pred.add_argument("--data", type=Path, required=True, help="Triplet dataset directory.")
    eval_pred.add_argument("--report", type=Path, required=True, help="JSON report path.")
    eval_pred.add_argument("--base-images", type=int, default=5, help="Reference images used for monotonicity.")

    tiers = subparsers.add_parser("tiers", parents=[common], help="Build a quality-tier set.")
    tiers.add_argument("--base", type=Path, default=None, help="Directory of tier-0 RGB PNGs.")
    tiers.add_argument("--scenes", type=int, default=None, help="Procedural scenes when --base is omitted.")
    tiers.add_argument("--size", type=int, default=None, help="Side of procedural scenes in pixels.")
    tiers.add_argument("--schedule", type=str, default=None, help="Comma-separated increasing intensities.")
    tiers.add_argument("--seed", type=int, default=None)
    tiers.add_argument("--out", "-o", type=Path, default=None, help="Tier set directory to create.")
    tiers.add_argument("--prune", action="store_true", help="Drop scenes whose magnitudes are not increasing.")

    train_sc = subparsers.add_parser("train-scorer", parents=[common], help="Train the relational scorer.")
    train_sc.add_argument("--tiers", type=Path, required=True, help="Tier set directory.")
    train_sc.add_argument("--predictor", type=Path, required=True, help="Frozen predictor checkpoint.")
    train_sc.add_argument("--out", "-o", type=Path, default=None, help="Checkpoint directory.")
    train_sc.add_argument("--epochs", type=int, default=None)
    train_sc.add_argument("--seed", type=int, default=None)

    rank = subparsers.add_parser("eval-rank", parents=[common], help="Ordinal evaluation of a scorer.")
    rank.add_argument("--scorer", type=Path, required=True, help="Scorer checkpoint directory.")
    rank.add_argument("--predictor", type=Path, required=True, help="Predictor checkpoint directory.")
    rank.add_argument("--tiers", type=Path, required=True, help="Held-out tier set directory.")
    rank.add_argument("--report", type=Path, required=True, help="JSON report path.")

    verify = subparsers.add_parser("verify-gradients", parents=[common], help="Run finite-difference checks.")
    verify.add_argument("--module", choices=MODULES, default=None, help="Restrict to one suite.")
    verify.add_argument("--seed", type=int, default=0)

    return parser


# Handlers are looked up by name at dispatch time.
COMMANDS = {
    "synth": "run_synth",
    "train-predictor": "run_train_predictor",
    "eval-antisym": "run_eval_antisym",
    "eval-predictor": "run_eval_predictor",
    "tiers": "run_tiers",
    "train-scorer": "run_train_scorer",
    "eval-rank": "run_eval_rank",
    "verify-gradients": "run_verify_gradients",
}


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION

    _configure_logging(args.verbose)
    try:
        cfg = config.load_config(args.config)
        handler = globals()[COMMANDS[args.command]]
        return handler(args, cfg)
    except ValidationError as exc:
        _error(str(exc))
        return EXIT_VALIDATION
    except RelationalIqaError as exc:
        _error(str(exc))
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - top-level handler
        logger.debug("Unhandled failure", exc_info=True)
        _error(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
