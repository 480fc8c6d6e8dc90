"""Command-line surface: dataset synthesis, augmentation, the full
pipeline (augment -> transcribe -> consensus -> evaluate -> report),
figure-series emission, and the voting-theory simulation sweep.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .augment import Category, IMAGE_CATEGORIES, AugmentationSpec, apply_augmentation, build_grid
from .core import (
    FIELD_NAMES,
    Dataset,
    DocumentImage,
    FieldSet,
    generate_synthetic_dataset,
    load_dataset,
    load_image,
    normalize_text,
    save_image,
)
from .rng import stable_hash
from .report import (
    consensus_cer_series,
    method_comparison_series,
    pr_series,
    read_outcomes_csv,
    write_aggregate_json,
    write_csv,
    write_report,
)
from .selection import CandidatePool, FieldKey, FoldPlan, run_cv_experiment
from .theory import correlation_sweep_rows
from .transcriber import (
    GenerationParams,
    NoiseModel,
    RateLimiter,
    RemoteTranscriber,
    TranscriptionCache,
    simulate_transcribe,
    temperature_pool_params,
)

logger = logging.getLogger(__name__)

DEFAULT_LEXICON = (
    "ada clara edith frank george harold irene john lydia mabel martha "
    "myrtle nydia oscar pearl ruth samuel thomas viola walter anna carl "
    "dora elmer flora grace henry ida jacob kate"
).split()

TEMPERATURE_CATEGORIES = {
    "temperature-0.5": 0.5,
    "temperature-1.0": 1.0,
    "temperature-2.0": 2.0,
}

API_KEY_ENV = "TTAVOTE_API_KEY"


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ValueError, FileNotFoundError, IOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ttavote", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ttavote {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-records", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon", type=Path, help="text file with one name per line")
    p.add_argument("--blank-rate", type=float, default=0.0)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("augment", help="write augmented images for inspection")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--categories", nargs="*", default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_augment)

    p = sub.add_parser("run", help="full pipeline incl. evaluation and reports")
    p.add_argument("--config", type=Path, help="experiment config JSON; flags override its values")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--mode", choices=("live", "offline", "simulate"))
    p.add_argument("--categories", nargs="*", default=None)
    p.add_argument("--ensemble-sizes", type=int, nargs="*", default=[5, 10])
    p.add_argument("--k-folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--noise-eps", type=float, default=0.2, help="simulate: char error rate")
    p.add_argument("--noise-rho", type=float, default=0.3, help="simulate: error correlation")
    p.add_argument("--noise-op-mix", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--drop-field-rate", type=float, default=0.02)
    p.add_argument("--noise-profile", type=Path, help="JSON: category -> noise overrides")
    p.add_argument("--endpoint-config", type=Path, help="JSON: {url, model} for live mode")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("report", help="figure data series from existing outcomes")
    p.add_argument("--out", type=Path, required=True, help="run output directory")
    p.add_argument("--categories", nargs="*", default=None)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("simulate", help="correlated majority-voting sweep")
    p.add_argument("--eps", type=float, nargs="*", default=[0.1, 0.3])
    p.add_argument("--rho", type=float, nargs="*", default=[0.0, 0.3, 0.7])
    p.add_argument("--n", type=int, nargs="*", default=[5, 10, 20])
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_simulate)
    return parser


def cmd_synth(args) -> int:
    lexicon = DEFAULT_LEXICON
    if args.lexicon:
        lexicon = [line.strip() for line in args.lexicon.read_text().splitlines() if line.strip()]
    dataset = generate_synthetic_dataset(
        args.n_records, lexicon, args.seed, args.out, blank_rate=args.blank_rate
    )
    print(f"wrote {len(dataset)} records to {args.out}")
    return 0


def _parse_categories(names) -> list[str]:
    valid = [c.value for c in IMAGE_CATEGORIES] + list(TEMPERATURE_CATEGORIES)
    if not names:
        return [c.value for c in IMAGE_CATEGORIES]
    for name in names:
        if name not in valid:
            raise ValueError(f"unknown category {name!r}; valid: {', '.join(valid)}")
    return list(names)


def cmd_augment(args) -> int:
    dataset = load_dataset(args.manifest)
    categories = [c for c in _parse_categories(args.categories) if c not in TEMPERATURE_CATEGORIES]
    aug_dir = args.out / "cache" / "aug"
    index: dict[str, dict] = {}
    written = skipped = 0
    for name in categories:
        grid = build_grid(Category(name))
        for spec in grid.specs:
            index[spec.spec_hash] = {"label": spec.label, "spec": json.loads(spec.to_json())}
            for record in dataset.records:
                path = aug_dir / record.record_id / f"{spec.spec_hash}.png"
                if path.exists():
                    skipped += 1
                    continue
                img = load_image(record.image_path, record_id=record.record_id)
                save_image(apply_augmentation(img, spec), path)
                written += 1
    index_path = args.out / "cache" / "aug-index.json"
    index_path.parent.mkdir(parents=True, exist_ok=True)
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"augmented images: {written} written, {skipped} already present, index at {index_path}")
    return 0


def _derive_seed(*parts) -> int:
    return int(stable_hash(*parts)[:12], 16)


def _noise_for(args, category: str, profile: dict) -> NoiseModel:
    params = {
        "char_error_rate": args.noise_eps,
        "correlation": args.noise_rho,
        "op_mix": tuple(args.noise_op_mix),
        "drop_field_rate": args.drop_field_rate,
    }
    overrides = profile.get(category, {})
    for key in ("char_error_rate", "correlation", "drop_field_rate"):
        if key in overrides:
            params[key] = overrides[key]
    if "op_mix" in overrides:
        params["op_mix"] = tuple(overrides["op_mix"])
    return NoiseModel(seed=_derive_seed("noise", args.seed, category), **params)


def _category_plan(categories: list[str]) -> dict[str, list[tuple[str, AugmentationSpec, GenerationParams]]]:
    """Per category: ordered (spec_key, augmentation, generation params) tasks."""
    plan: dict[str, list[tuple[str, AugmentationSpec, GenerationParams]]] = {}
    for name in categories:
        entries = []
        if name in TEMPERATURE_CATEGORIES:
            spec = AugmentationSpec(Category.IDENTITY, post_scale=0.5)
            for params in temperature_pool_params(TEMPERATURE_CATEGORIES[name]):
                entries.append((f"{name}/s{params.sample_index:02d}", spec, params))
        else:
            for spec in build_grid(Category(name)).specs:
                entries.append((spec.label, spec, GenerationParams()))
        plan[name] = entries
    return plan


def _baseline_entry() -> tuple[str, AugmentationSpec, GenerationParams]:
    return ("baseline/identity", AugmentationSpec(Category.IDENTITY, post_scale=0.5), GenerationParams())


def _truth_fields(dataset: Dataset) -> dict[FieldKey, str]:
    out: dict[FieldKey, str] = {}
    for record in dataset.records:
        for name in FIELD_NAMES:
            value = record.truth.get(name)
            if value is not None and normalize_text(value):
                out[(record.record_id, name)] = value
    return out


def _pool_from_fieldsets(
    dataset: Dataset,
    spec_keys: list[str],
    results: dict[tuple[str, str], FieldSet],
    truths: dict[FieldKey, str],
) -> CandidatePool:
    samples: dict[str, dict[FieldKey, str | None]] = {}
    for key in spec_keys:
        preds: dict[FieldKey, str | None] = {}
        for record in dataset.records:
            fields = results[(key, record.record_id)]
            for name in FIELD_NAMES:
                if (record.record_id, name) in truths:
                    preds[(record.record_id, name)] = fields.get(name)
        samples[key] = preds
    return CandidatePool(
        spec_keys=spec_keys,
        samples=samples,
        truths=truths,
        record_ids=dataset.record_ids(),
    )


# Parser defaults for the run subcommand; config-file values apply only
# where the command line left the default in place.
_RUN_DEFAULTS = {
    "manifest": None,
    "mode": None,
    "categories": None,
    "ensemble_sizes": [5, 10],
    "k_folds": 5,
    "seed": 0,
    "out": None,
    "parallelism": 1,
    "noise_eps": 0.2,
    "noise_rho": 0.3,
    "noise_op_mix": [0.8, 0.1, 0.1],
    "drop_field_rate": 0.02,
    "noise_profile": None,
    "endpoint_config": None,
}
_RUN_PATH_KEYS = ("manifest", "out", "noise_profile", "endpoint_config")


def _apply_run_config(args) -> None:
    """Merge an experiment config JSON (or a run manifest) into args."""
    config = json.loads(args.config.read_text(encoding="utf-8"))
    if isinstance(config.get("config"), dict):  # a previous run-manifest.json
        config = config["config"]
    base = args.config.parent
    for key, default in _RUN_DEFAULTS.items():
        if key not in config or getattr(args, key) != default:
            continue
        value = config[key]
        if key in _RUN_PATH_KEYS and value is not None:
            value = Path(value)
            if not value.is_absolute():
                value = base / value
        setattr(args, key, value)


def cmd_run(args) -> int:
    started = time.time()
    if args.config:
        _apply_run_config(args)
    for required in ("manifest", "mode", "out"):
        if getattr(args, required) is None:
            raise ValueError(f"run requires --{required} (on the command line or in --config)")
    dataset = load_dataset(args.manifest)
    categories = _parse_categories(args.categories)
    plan = _category_plan(categories)
    profile = {}
    if args.noise_profile:
        profile = json.loads(args.noise_profile.read_text(encoding="utf-8"))

    n_requests = sum(len(entries) for entries in plan.values()) * len(dataset) + len(dataset)
    if args.dry_run:
        print(f"dry run: would make {n_requests} transcription requests "
              f"({len(dataset)} records x {sum(len(e) for e in plan.values()) + 1} samples)")
        return 0

    if args.mode == "simulate":
        pools, baseline_pool = _run_simulate(args, dataset, plan, profile)
    else:
        pools, baseline_pool = _run_transcribe(args, dataset, plan)

    fold_plan = None
    if dataset.folds is not None:
        fold_plan = FoldPlan(k=max(dataset.folds.values()) + 1, assignment=dict(dataset.folds), seed=args.seed)
        logger.info("using the %d-fold assignment from the dataset manifest", fold_plan.k)

    report = run_cv_experiment(
        pools,
        k_folds=args.k_folds,
        ensemble_sizes=list(args.ensemble_sizes),
        seed=args.seed,
        baseline_pool=baseline_pool,
        fold_plan=fold_plan,
    )
    paths = write_report(report, args.out)
    write_aggregate_json(report, args.out / "report" / "aggregate.json")
    _write_run_manifest(args, dataset, started)
    print("reports written:")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def _run_simulate(args, dataset, plan, profile):
    truths = {record.record_id: record.truth for record in dataset.records}
    truth_fields = _truth_fields(dataset)

    jobs = []
    for category, entries in plan.items():
        noise = _noise_for(args, category, profile)
        for index, (spec_key, _spec, _params) in enumerate(entries):
            for record_id in truths:
                jobs.append((category, spec_key, record_id, noise, index))
    baseline_key, _, _ = _baseline_entry()
    baseline_noise = _noise_for(args, "baseline", profile)
    for record_id in truths:
        jobs.append(("baseline", baseline_key, record_id, baseline_noise, 0))

    def work(job):
        category, spec_key, record_id, noise, index = job
        return (category, spec_key, record_id, simulate_transcribe(truths[record_id], noise, index))

    if args.parallelism > 1:
        with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
            done = list(pool.map(work, jobs))
    else:
        done = [work(job) for job in jobs]

    results: dict[str, dict[tuple[str, str], object]] = {}
    for category, spec_key, record_id, fields in done:
        results.setdefault(category, {})[(spec_key, record_id)] = fields

    pools = {}
    for category, entries in plan.items():
        spec_keys = [key for key, _, _ in entries]
        pools[category] = _pool_from_fieldsets(dataset, spec_keys, results[category], truth_fields)
    baseline_pool = _pool_from_fieldsets(dataset, [baseline_key], results["baseline"], truth_fields)
    return pools, baseline_pool


def _run_transcribe(args, dataset, plan):
    """Live or offline transcription through the cache."""
    cache = TranscriptionCache(args.out / "cache" / "transcriptions.jsonl")
    transcriber = None
    if args.mode == "live":
        if not args.endpoint_config:
            raise ValueError("live mode requires --endpoint-config")
        endpoint = json.loads(args.endpoint_config.read_text(encoding="utf-8"))
        transcriber = RemoteTranscriber(
            endpoint_url=endpoint["url"],
            api_key=os.environ.get(API_KEY_ENV),
            cache=cache,
            limiter=RateLimiter(endpoint.get("min_interval", 0.0)),
        )
        model_name = endpoint.get("model", "default")
    else:
        model_name = "default"

    truth_fields = _truth_fields(dataset)
    images: dict[str, DocumentImage] = {}

    def record_image(record):
        if record.record_id not in images:
            images[record.record_id] = load_image(record.image_path, record_id=record.record_id)
        return images[record.record_id]

    jobs = []
    for category, entries in plan.items():
        for spec_key, spec, params in entries:
            params = GenerationParams(
                temperature=params.temperature,
                top_p=params.top_p,
                model_name=model_name,
                sample_index=params.sample_index,
            )
            for record in dataset.records:
                jobs.append((category, spec_key, spec, params, record))
    baseline_key, baseline_spec, baseline_params = _baseline_entry()
    for record in dataset.records:
        jobs.append(
            (
                "baseline",
                baseline_key,
                baseline_spec,
                GenerationParams(model_name=model_name),
                record,
            )
        )

    missing = []
    results: dict[str, dict[tuple[str, str], object]] = {}

    def work(job):
        category, spec_key, spec, params, record = job
        hit = cache.lookup(record.record_id, spec.spec_hash, params)
        if hit is not None:
            return (category, spec_key, record.record_id, hit.fields)
        if transcriber is None:
            return (category, spec_key, record.record_id, None)
        augmented = apply_augmentation(record_image(record), spec)
        fields = transcriber.transcribe(
            augmented, params, record_id=record.record_id, spec_hash=spec.spec_hash
        )
        return (category, spec_key, record.record_id, fields)

    if args.parallelism > 1 and args.mode == "live":
        with ThreadPoolExecutor(max_workers=args.parallelism) as pool:
            done = list(pool.map(work, jobs))
    else:
        done = [work(job) for job in jobs]

    for category, spec_key, record_id, fields in done:
        if fields is None:
            missing.append((category, spec_key, record_id))
        else:
            results.setdefault(category, {})[(spec_key, record_id)] = fields

    if missing:
        coverage_path = args.out / "coverage_missing.csv"
        write_csv(
            coverage_path,
            ["category", "spec_key", "record_id"],
            [dict(zip(("category", "spec_key", "record_id"), row)) for row in missing],
        )
        print(
            f"offline cache incomplete: {len(missing)} transcriptions missing; see {coverage_path}",
            file=sys.stderr,
        )
        raise SystemExit(2)

    pools = {}
    for category, entries in plan.items():
        spec_keys = [key for key, _, _ in entries]
        pools[category] = _pool_from_fieldsets(dataset, spec_keys, results[category], truth_fields)
    baseline_pool = _pool_from_fieldsets(dataset, [baseline_key], results["baseline"], truth_fields)
    return pools, baseline_pool


def _write_run_manifest(args, dataset, started: float) -> None:
    import numpy
    import scipy

    manifest_bytes = args.manifest.read_bytes()
    image_hash = stable_hash(
        *(record.image_path.read_bytes() for record in dataset.records)
    )
    payload = {
        "config": {
            key: (str(value) if isinstance(value, Path) else value)
            for key, value in sorted(vars(args).items())
            if key != "handler"
        },
        "seed": args.seed,
        "input_hashes": {
            "manifest": stable_hash(manifest_bytes),
            "images": image_hash,
        },
        "versions": {
            "ttavote": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "started": started,
        "finished": time.time(),
    }
    path = args.out / "run-manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_report(args) -> int:
    outcomes_path = args.out / "outcomes.csv"
    if not outcomes_path.is_file():
        print(f"error: missing input: {outcomes_path}", file=sys.stderr)
        return 1
    rows = read_outcomes_csv(outcomes_path)
    categories = args.categories or None
    report_dir = args.out / "report"
    series = {
        "fig2_consensus_cer_vs_samples.csv": (
            ["category", "ensemble_size", "consensus_cer", "field_accuracy", "n_fields"],
            consensus_cer_series(rows, categories),
        ),
        "fig3_selection_methods.csv": (
            ["method", "ensemble_size", "consensus_cer", "field_accuracy", "n_fields"],
            method_comparison_series(rows),
        ),
        "fig4_pr_unanimous.csv": (
            ["category", "ensemble_size", "precision", "recall", "f1", "n_fields"],
            pr_series(rows, categories),
        ),
    }
    for filename, (columns, data) in series.items():
        write_csv(report_dir / filename, columns, data)
        print(f"wrote {report_dir / filename}")
    return 0


def cmd_simulate(args) -> int:
    rows = correlation_sweep_rows(args.eps, args.rho, args.n, trials=args.trials, seed=args.seed)
    columns = [
        "error_rate",
        "rho_param",
        "rho_empirical",
        "n_voters",
        "n_eff",
        "var_analytic",
        "var_empirical",
        "failure_rate",
    ]
    write_csv(args.out, columns, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
