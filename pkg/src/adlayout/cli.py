"""``adlayout`` command line: import, generate, score, judge, render.

Exit codes: 0 ok, 2 configuration or input error, 3 some samples failed,
4 systemic failure (transport or credentials).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .client import BACKENDS, DEFAULT_CONCURRENCY, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, DEFAULT_TOP_P, VLMClient
from .config import FIXTURES, fixture_path, merge, read_toml
from .config import resolve as _resolve
from .dataset import KINDS, Manifest, import_dataset
from .errors import AdLayoutError, AuthMissing, ClientError, ConfigError, TransportError
from .metrics import UTILITY_DENOMINATORS
from .pipeline import (
    ALL_CONDITIONS,
    MAX_REPAIR_ATTEMPTS,
    GenerationSettings,
    ScoringOptions,
    parse_condition,
    rescore_run,
    run_experiment,
)
from .prompting import DEFAULT_TEMPLATE_VERSION, PROMPT_CANVAS, ExemplarStore

log = logging.getLogger("adlayout")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_SYSTEMIC = 0, 2, 3, 4
LIVE_ONLY = ("api_base", "timeout")
CONSTRAINT_MODES = ("ground-truth", "sample")

DEFAULTS = {
    "generate": {
        "dataset": FIXTURES,
        "run": "adlayout-run",
        "conditions": ",".join(ALL_CONDITIONS),
        "shots_store": FIXTURES,
        "n": 100,
        "seed": 0,
        "backend": "replay",
        "concurrency": DEFAULT_CONCURRENCY,
        "temperature": DEFAULT_TEMPERATURE,
        "top_p": DEFAULT_TOP_P,
        "max_tokens": DEFAULT_MAX_TOKENS,
        "max_repairs": MAX_REPAIR_ATTEMPTS,
        "theta": 0.5,
        "utility_denominator": "non-salient",
        "constraint_mode": "ground-truth",
        "template_version": DEFAULT_TEMPLATE_VERSION,
        "timeout": 120.0,
    },
    "score": {"theta": 0.5, "utility_denominator": "non-salient"},
    "judge": {"backend": "replay", "concurrency": DEFAULT_CONCURRENCY, "template_version": DEFAULT_TEMPLATE_VERSION,
              "timeout": 120.0},
    "render": {},
    "import": {"kind": "generic"},
}


# -- parser ------------------------------------------------------------------


def _add_client_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=BACKENDS, help="model backend (default: replay)")
    p.add_argument("--cassette", help="JSON-lines cassette; 'fixtures' selects the shipped one "
                   "(default: <run>/cassette.jsonl, or the shipped fixture cassette when replaying)")
    p.add_argument("--model", help="model id (default: $ADLAYOUT_MODEL or gpt-4o-2024-08-06)")
    p.add_argument("--api-base", help="endpoint base URL, live/record only (default: $ADLAYOUT_API_BASE)")
    p.add_argument("--timeout", type=float, help="per-request timeout in seconds, live/record only (default: 120)")
    p.add_argument("--concurrency", type=int, help="maximum in-flight model requests (default: 4)")
    p.add_argument("--template-version", help="prompt template set (default: v1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adlayout",
        description="Two-step VLM banner-ad layout generation, scoring and judging.",
    )
    parser.add_argument("--version", action="version", version=f"adlayout {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("import", help="normalize a dataset directory into manifest.json")
    p.add_argument("source", help="dataset directory (images/, annotation table, optional saliency/)")
    p.add_argument("--kind", choices=KINDS, help="source layout (default: generic)")
    p.add_argument("--annotations", help="annotation CSV (default: looked up in SOURCE)")
    p.add_argument("--out", help="manifest path (default: SOURCE/manifest.json)")
    p.add_argument("--strict", action="store_true", default=None, help="fail on any missing image or bad row")
    p.add_argument("--config", help="TOML file with default values for these flags")

    p = sub.add_parser("generate", help="run generation conditions over a dataset sample")
    p.add_argument("--config", help="TOML file with default values for these flags (e.g. a previous run.toml)")
    p.add_argument("--dataset", help="manifest.json or its directory; 'fixtures' selects the shipped one (default)")
    p.add_argument("--run", help="run directory (default: ./adlayout-run)")
    p.add_argument("--conditions", help="comma-separated condition names or custom(steps,shots,cot) "
                   f"(default: all of {', '.join(ALL_CONDITIONS)})")
    p.add_argument("--shots-store", help="exemplar store directory; 'fixtures' selects the shipped one (default)")
    p.add_argument("--n", type=int, help="number of test samples drawn with --seed (default: 100)")
    p.add_argument("--seed", type=int, help="sampling seed (default: 0)")
    p.add_argument("--constraint-mode", choices=CONSTRAINT_MODES,
                   help="ground-truth element types, or types sampled from the dataset (default: ground-truth)")
    p.add_argument("--shuffle-exemplars", type=int, metavar="SEED", help="shuffle the exemplar store before taking shots")
    p.add_argument("--temperature", type=float, help="sampling temperature (default: 0.7)")
    p.add_argument("--top-p", type=float, help="nucleus sampling mass (default: 1.0)")
    p.add_argument("--max-tokens", type=int, help="response token cap (default: 2048)")
    p.add_argument("--max-repairs", type=int, help="re-prompts before salvage (default: 2)")
    p.add_argument("--theta", type=float, help="saliency threshold for the utility mask (default: 0.5)")
    p.add_argument("--utility-denominator", choices=UTILITY_DENOMINATORS, help="utility normalization (default: non-salient)")
    _add_client_flags(p)

    p = sub.add_parser("score", help="re-score existing records and rewrite the aggregate files")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--dataset", help="dataset manifest (default: the one named in run.toml)")
    p.add_argument("--theta", type=float, help="saliency threshold for the utility mask (default: 0.5)")
    p.add_argument("--utility-denominator", choices=UTILITY_DENOMINATORS, help="utility normalization (default: non-salient)")
    p.add_argument("--config", help="TOML file with default values for these flags")

    p = sub.add_parser("judge", help="VLM-judge the layouts of a run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--dataset", help="dataset manifest (default: the one named in run.toml)")
    p.add_argument("--conditions", help="comma-separated conditions to judge (default: all in the run)")
    p.add_argument("--compare", metavar="A:B", help="pairwise-judge condition A against condition B, both orders")
    p.add_argument("--against", help="take condition B from this other run directory")
    p.add_argument("--no-absolute", action="store_true", default=None, help="skip absolute 1-10 scoring")
    p.add_argument("--config", help="TOML file with default values for these flags")
    _add_client_flags(p)

    p = sub.add_parser("render", help="render layouts and write the run report")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--dataset", help="dataset manifest for backgrounds (default: the one named in run.toml)")
    p.add_argument("--condition", help="with --sample and --out: render one record")
    p.add_argument("--sample", help="sample id of the record to render")
    p.add_argument("--out", help="PNG path for a single render")
    p.add_argument("--config", help="TOML file with default values for these flags")
    return parser


# -- helpers -----------------------------------------------------------------


def _settings(args: argparse.Namespace, command: str) -> dict:
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    file_values = {}
    if getattr(args, "config", None):
        file_values = {k.replace("-", "_"): v for k, v in read_toml(args.config).items()}
    return merge(DEFAULTS[command], merge(file_values, given))


def _check_backend(cfg: dict, explicit: dict) -> None:
    if cfg["backend"] == "replay":
        bad = [k for k in LIVE_ONLY if explicit.get(k) is not None]
        if bad:
            flags = ", ".join("--" + k.replace("_", "-") for k in bad)
            raise ConfigError(f"{flags} only apply to live/record backends, not replay")


def _client(cfg: dict, local: Path, fixture_cassette: str) -> VLMClient:
    """Client for the configured backend; ``local`` is the run's own cassette."""
    cassette = cfg.get("cassette")
    if cassette is not None:
        cassette = _resolve(cassette, "cassettes", fixture_cassette)
    elif cfg["backend"] != "replay" or local.exists():
        cassette = local
    elif cfg["backend"] == "replay":
        cassette = fixture_path("cassettes", fixture_cassette)
        log.info("replaying the shipped fixture cassette %s", cassette)
    if cfg["backend"] == "replay" and cassette is not None and not Path(cassette).is_file():
        raise ConfigError(f"cassette {cassette} does not exist")
    cfg["cassette"] = str(cassette) if cassette is not None else None
    return VLMClient(
        cfg["backend"],
        cassette=cassette,
        api_base=cfg.get("api_base"),
        model=cfg.get("model"),
        concurrency=int(cfg["concurrency"]),
        timeout=float(cfg["timeout"]),
    )


def _dataset_from_run(run_dir: Path, explicit) -> Manifest:
    if explicit:
        return Manifest.load(_resolve(explicit, "dataset"))
    config = run_dir / "run.toml"
    if config.is_file():
        value = read_toml(config).get("dataset")
        if value:
            return Manifest.load(_resolve(value, "dataset"))
    raise ConfigError(f"no --dataset given and {config} does not name one")


def _conditions(text: str):
    names = [c.strip() for c in _split_top_level(text) if c.strip()]
    if not names:
        raise ConfigError("no conditions given")
    return [parse_condition(n) for n in names]


def _split_top_level(text: str) -> list[str]:
    """Split on commas outside parentheses so custom(2,5,true) stays whole."""
    parts, depth, current = [], 0, []
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


# -- commands ----------------------------------------------------------------


def cmd_import(args: argparse.Namespace) -> int:
    cfg = _settings(args, "import")
    source = Path(cfg["source"])
    manifest = import_dataset(source, cfg["kind"], annotations=cfg.get("annotations"), strict=bool(cfg.get("strict")))
    out = manifest.save(Path(cfg["out"]) if cfg.get("out") else source / "manifest.json")
    print(f"wrote {out}: {len(manifest.entries)} entries, {len(manifest.missing_images)} missing images, "
          f"{len(manifest.malformed_rows)} malformed rows")
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _settings(args, "generate")
    _check_backend(cfg, vars(args))
    conditions = _conditions(cfg["conditions"])
    if int(cfg["n"]) < 1:
        raise ConfigError("--n must be at least 1")
    if not 0.0 <= float(cfg["theta"]) <= 1.0:
        raise ConfigError("--theta must lie in [0, 1]")
    run_dir = Path(cfg["run"])
    manifest = Manifest.load(_resolve(cfg["dataset"], "dataset"))
    store = ExemplarStore.load(_resolve(cfg["shots_store"], "exemplars"))
    client = _client(cfg, run_dir / "cassette.jsonl", "generation.jsonl")
    cfg["model"] = client.model
    settings = GenerationSettings(
        canvas=PROMPT_CANVAS,
        template_version=cfg["template_version"],
        temperature=float(cfg["temperature"]),
        top_p=float(cfg["top_p"]),
        max_tokens=int(cfg["max_tokens"]),
        max_repair_attempts=int(cfg["max_repairs"]),
        shuffle_seed=cfg.get("shuffle_exemplars"),
    )
    scoring = ScoringOptions(float(cfg["theta"]), cfg["utility_denominator"])
    echo = {k: v for k, v in cfg.items() if k not in LIVE_ONLY or cfg["backend"] != "replay"}
    for key in ("dataset", "shots_store"):
        if echo[key] != FIXTURES:
            echo[key] = str(Path(echo[key]).resolve())
    if echo.get("cassette"):
        cassette = Path(echo["cassette"]).resolve()
        echo["cassette"] = FIXTURES if cassette == fixture_path("cassettes", "generation.jsonl").resolve() else str(cassette)
    try:
        result = run_experiment(
            manifest, conditions, int(cfg["n"]), int(cfg["seed"]), client, run_dir, store,
            settings=settings, scoring=scoring, constraint_mode=cfg["constraint_mode"], config=echo,
        )
    finally:
        client.close()
    print(f"{run_dir}: {result.records} records ({result.generated} generated, {result.reused} reused), "
          f"{len(result.failed)} failed")
    for name, reason in sorted(result.aborted.items()):
        print(f"condition {name} aborted: {reason}", file=sys.stderr)
    return result.exit_code


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _settings(args, "score")
    run_dir = Path(cfg["run"])
    if not (run_dir / "records").is_dir():
        raise ConfigError(f"{run_dir} has no records/ directory")
    manifest = _dataset_from_run(run_dir, cfg.get("dataset"))
    rows = rescore_run(run_dir, manifest, ScoringOptions(float(cfg["theta"]), cfg["utility_denominator"]))
    print(f"re-scored {sum(n for _, n, _, _ in rows)} records into {run_dir / 'aggregate.csv'}")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    from .judge import judge_run

    cfg = _settings(args, "judge")
    _check_backend(cfg, vars(args))
    run_dir = Path(cfg["run"])
    manifest = _dataset_from_run(run_dir, cfg.get("dataset"))
    compare = None
    if cfg.get("compare"):
        a, sep, b = cfg["compare"].partition(":")
        if not sep or not a or not b:
            raise ConfigError("--compare expects A:B")
        compare = (parse_condition(a).name, parse_condition(b).name)
    conditions = [parse_condition(c).name for c in _split_top_level(cfg["conditions"])] if cfg.get("conditions") else None
    if compare and conditions is not None:
        conditions = list(dict.fromkeys([*conditions, *compare[:1], *([] if cfg.get("against") else compare[1:])]))
    client = _client(cfg, run_dir / "judge_cassette.jsonl", "judge.jsonl")
    try:
        summary = judge_run(
            run_dir, client, {e.id: e.image for e in manifest.entries},
            conditions=conditions, compare=compare, against=cfg.get("against"),
            absolute=not cfg.get("no_absolute"),
            settings=GenerationSettings(template_version=cfg["template_version"]),
            version=cfg["template_version"],
        )
    finally:
        client.close()
    print(f"judged {run_dir}: {len(summary['errors'])} unusable answers")
    return EXIT_PARTIAL if summary["errors"] else EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    from .pipeline import load_record, record_key
    from .render import render_on_background, save_png, write_run_report

    cfg = _settings(args, "render")
    run_dir = Path(cfg["run"])
    if cfg.get("out") or cfg.get("sample"):
        if not (cfg.get("out") and cfg.get("sample") and cfg.get("condition")):
            raise ConfigError("single renders need --condition, --sample and --out")
        manifest = _dataset_from_run(run_dir, cfg.get("dataset"))
        seed = int(read_toml(run_dir / "run.toml").get("seed", 0)) if (run_dir / "run.toml").is_file() else 0
        path = run_dir / "records" / f"{record_key(cfg['condition'], cfg['sample'], seed)}.json"
        if not path.is_file():
            raise ConfigError(f"no record {path}")
        record = load_record(path, condition=cfg["condition"], sample_id=cfg["sample"])
        layout = record.layout_obj()
        if layout is None:
            raise ConfigError(f"record {path.name} has no layout ({record.error})")
        out = save_png(render_on_background(manifest.get(record.sample_id).image, layout), cfg["out"])
        print(f"wrote {out}")
        return EXIT_OK
    backgrounds = None
    if cfg.get("dataset"):
        backgrounds = {e.id: e.image for e in _dataset_from_run(run_dir, cfg["dataset"]).entries}
    print(f"wrote {write_run_report(run_dir, backgrounds)}")
    return EXIT_OK


COMMANDS = {"import": cmd_import, "generate": cmd_generate, "score": cmd_score, "judge": cmd_judge, "render": cmd_render}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (TransportError, AuthMissing) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYSTEMIC
    except ClientError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYSTEMIC
    except AdLayoutError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
