"""Ensemble selection strategies and the cross-validation harness.

A candidate pool holds every configuration's per-field predictions.
Selection either ranks configurations by their individual validation CER
or greedily grows the set that most improves the consensus transcription;
the oracle variant runs the same greedy search on the evaluation records
as an upper reference.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .consensus import SampleSet, field_confidence, progressive_consensus
from .core import FIELD_NAMES, FieldSet, normalize_text
from .metrics import (
    EvalOutcome,
    MetricError,
    ace,
    brier,
    calibration_curve,
    cer,
    ece,
    error_correlation,
    evaluate_field,
    field_accuracy,
    isotonic_fit,
    unanimous_precision_recall,
)
from .rng import keyed_generator
from .transcriber import NoiseModel, simulate_transcribe

logger = logging.getLogger(__name__)

FieldKey = tuple[str, str]  # (record_id, field_name)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict[str, int]
    seed: int

    def fold_records(self, fold: int) -> list[str]:
        return [r for r, f in self.assignment.items() if f == fold]

    def other_records(self, fold: int) -> list[str]:
        return [r for r, f in self.assignment.items() if f != fold]


def kfold_split(record_ids: list[str], k: int, seed: int) -> FoldPlan:
    """Deterministic shuffled partition into k folds of near-equal size."""
    if k < 2:
        raise ValueError(f"k must be >= 2: {k}")
    if k > len(record_ids):
        raise ValueError(f"k={k} exceeds record count {len(record_ids)}")
    order = keyed_generator("kfold", seed).permutation(len(record_ids))
    assignment = {record_ids[int(idx)]: pos % k for pos, idx in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass
class CandidatePool:
    """Per-configuration predictions over a shared set of (record, field) keys."""

    spec_keys: list[str]
    samples: dict[str, dict[FieldKey, str | None]]  # spec key -> predictions
    truths: dict[FieldKey, str]  # non-blank ground truth per field key
    record_ids: list[str]

    def __post_init__(self):
        for key in self.spec_keys:
            if key not in self.samples:
                raise ValueError(f"pool missing samples for spec key {key!r}")

    def field_keys(self, records: list[str] | None = None) -> list[FieldKey]:
        if records is None:
            wanted = set(self.record_ids)
        else:
            wanted = set(records)
        return [fk for fk in sorted(self.truths) if fk[0] in wanted]

    def individual_cer(self, spec_key: str, records: list[str] | None = None) -> float:
        preds = self.samples[spec_key]
        keys = self.field_keys(records)
        if not keys:
            raise ValueError("no evaluable fields in the requested records")
        return sum(cer(preds.get(fk), self.truths[fk]) for fk in keys) / len(keys)

    def mean_individual_cer(self, records: list[str] | None = None) -> float:
        return sum(self.individual_cer(k, records) for k in self.spec_keys) / len(self.spec_keys)

    def consensus_outcomes(self, ensemble: list[str], records: list[str] | None = None) -> list[EvalOutcome]:
        """Progressive-consensus evaluation of an ordered ensemble."""
        outcomes = []
        for record_id, field_name in self.field_keys(records):
            samples = tuple(self.samples[k].get((record_id, field_name)) for k in ensemble)
            result = progressive_consensus(SampleSet(samples=samples, provenance=tuple(ensemble)))
            outcomes.append(
                evaluate_field(
                    record_id,
                    field_name,
                    result.consensus,
                    self.truths[(record_id, field_name)],
                    confidence=field_confidence(result),
                    unanimous=result.unanimous,
                )
            )
        return outcomes

    def consensus_cer(self, ensemble: list[str], records: list[str] | None = None) -> float:
        outcomes = self.consensus_outcomes(ensemble, records)
        return sum(o.cer for o in outcomes) / len(outcomes)

    def mean_pairwise_error_correlation(self, records: list[str] | None = None) -> float | None:
        """Mean pairwise Pearson correlation of per-spec exact-match failures."""
        keys = self.field_keys(records)
        vectors = {}
        for spec_key in self.spec_keys:
            preds = self.samples[spec_key]
            vectors[spec_key] = [
                0
                if preds.get(fk) is not None
                and normalize_text(preds[fk]) == normalize_text(self.truths[fk])
                else 1
                for fk in keys
            ]
        values = []
        for i, a in enumerate(self.spec_keys):
            for b in self.spec_keys[i + 1 :]:
                try:
                    values.append(error_correlation(vectors[a], vectors[b]))
                except MetricError:
                    continue
        if not values:
            return None
        return sum(values) / len(values)


def merge_pools(pools: dict[str, CandidatePool]) -> CandidatePool:
    """Union of several pools over the same records; keys prefixed by pool name."""
    names = sorted(pools)
    first = pools[names[0]]
    spec_keys: list[str] = []
    samples: dict[str, dict[FieldKey, str | None]] = {}
    for name in names:
        pool = pools[name]
        if set(pool.record_ids) != set(first.record_ids):
            raise ValueError("pools must cover the same records to merge")
        for key in pool.spec_keys:
            merged_key = f"{name}:{key}"
            spec_keys.append(merged_key)
            samples[merged_key] = pool.samples[key]
    truths: dict[FieldKey, str] = {}
    for name in names:
        truths.update(pools[name].truths)
    return CandidatePool(
        spec_keys=spec_keys, samples=samples, truths=truths, record_ids=list(first.record_ids)
    )


def build_simulated_pool(
    truths: dict[str, FieldSet],
    spec_keys: list[str],
    noise: NoiseModel,
) -> CandidatePool:
    """Pool of simulated transcriptions, one sample index per spec key."""
    record_ids = list(truths)
    truth_fields: dict[FieldKey, str] = {}
    for record_id, fieldset in truths.items():
        for name in FIELD_NAMES:
            value = fieldset.get(name)
            if value is not None and normalize_text(value):
                truth_fields[(record_id, name)] = value
    samples: dict[str, dict[FieldKey, str | None]] = {}
    for index, spec_key in enumerate(spec_keys):
        preds: dict[FieldKey, str | None] = {}
        for record_id, fieldset in truths.items():
            simulated = simulate_transcribe(fieldset, noise, sample_index=index)
            for name in FIELD_NAMES:
                if (record_id, name) in truth_fields:
                    preds[(record_id, name)] = simulated.get(name)
        samples[spec_key] = preds
    return CandidatePool(
        spec_keys=list(spec_keys), samples=samples, truths=truth_fields, record_ids=record_ids
    )


def select_top_individual(pool: CandidatePool, k: int, records: list[str] | None = None) -> list[str]:
    """The k configurations with the lowest mean individual CER."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(pool.spec_keys):
        raise ValueError(f"k={k} exceeds pool size {len(pool.spec_keys)}")
    ranked = sorted(pool.spec_keys, key=lambda s: (pool.individual_cer(s, records), s))
    return ranked[:k]


def select_greedy_consensus(pool: CandidatePool, k: int, records: list[str] | None = None) -> list[str]:
    """Greedy forward selection minimizing consensus CER at each step."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(pool.spec_keys):
        raise ValueError(f"k={k} exceeds pool size {len(pool.spec_keys)}")
    selected: list[str] = []
    remaining = list(pool.spec_keys)
    while len(selected) < k:
        best_key = None
        best_score = None
        for candidate in remaining:
            score = pool.consensus_cer(selected + [candidate], records)
            if best_score is None or score < best_score or (score == best_score and candidate < best_key):
                best_key, best_score = candidate, score
        selected.append(best_key)
        remaining.remove(best_key)
    return selected


def select_oracle(pool: CandidatePool, k: int, eval_records: list[str]) -> list[str]:
    """Greedy selection scored directly on the evaluation records.

    An upper reference only: selecting on the test set is leakage and is
    labeled as such in reports.
    """
    return select_greedy_consensus(pool, k, eval_records)


SELECTION_METHODS = {
    "top_individual": select_top_individual,
    "greedy_consensus": select_greedy_consensus,
    "oracle": select_oracle,
}


@dataclass
class ExperimentReport:
    """Aggregated rows for the report CSVs plus the flat outcome table."""

    table1_rows: list[dict] = field(default_factory=list)
    table2_rows: list[dict] = field(default_factory=list)
    calibration_rows: list[dict] = field(default_factory=list)
    reliability_rows: list[dict] = field(default_factory=list)
    pr_rows: list[dict] = field(default_factory=list)
    outcome_rows: list[dict] = field(default_factory=list)


def run_cv_experiment(
    pools: dict[str, CandidatePool],
    k_folds: int,
    ensemble_sizes: list[int],
    seed: int,
    baseline_pool: CandidatePool | None = None,
    n_bins: int = 10,
    fold_plan: FoldPlan | None = None,
) -> ExperimentReport:
    """Cross-validated selection and evaluation over per-category pools.

    Per fold: ensembles are selected on the other folds and scored on the
    held-out fold; outcomes are pooled across folds before aggregation.
    Isotonic recalibration is fit on the selection folds and applied to
    the held-out fold. A preset ``fold_plan`` overrides the seeded split.
    """
    sizes = sorted(set(ensemble_sizes))
    report = ExperimentReport()
    categories = sorted(pools)
    if not categories:
        raise ValueError("run_cv_experiment requires at least one pool")

    first_pool = pools[categories[0]]
    if fold_plan is not None:
        if set(fold_plan.assignment) != set(first_pool.record_ids):
            raise ValueError("fold plan does not cover the pool's records")
        plan = fold_plan
    else:
        plan = kfold_split(sorted(first_pool.record_ids), k_folds, seed)

    if baseline_pool is not None:
        base_key = baseline_pool.spec_keys[0]
        base_outcomes = baseline_pool.consensus_outcomes([base_key])
        base_cer = sum(o.cer for o in base_outcomes) / len(base_outcomes)
        base_acc = field_accuracy(base_outcomes)
        row = {"category": "baseline", "avg_individual_cer": base_cer, "error_correlation": None}
        for size in sizes:
            row[f"consensus_cer_{size}"] = base_cer
            row[f"field_accuracy_{size}"] = base_acc
        report.table1_rows.append(row)
        report.table2_rows.append(
            {
                "method": "baseline",
                **{f"consensus_cer_{size}": base_cer for size in sizes},
                **{f"field_accuracy_{size}": base_acc for size in sizes},
            }
        )
        _append_outcomes(report, base_outcomes, "baseline", "baseline", 1)

    for category in categories:
        pool = pools[category]
        max_size = min(max(sizes), len(pool.spec_keys))
        per_size_outcomes: dict[int, list[EvalOutcome]] = {s: [] for s in sizes}
        calib_pairs: dict[str, list[tuple[float, int]]] = {"raw": [], "isotonic": []}

        for fold in range(plan.k):
            train = plan.other_records(fold)
            test = plan.fold_records(fold)
            chosen = select_greedy_consensus(pool, max_size, train)
            for size in sizes:
                ensemble = chosen[: min(size, max_size)]
                outcomes = pool.consensus_outcomes(ensemble, test)
                per_size_outcomes[size].extend(outcomes)
                if size == max(sizes):
                    val_outcomes = pool.consensus_outcomes(ensemble, train)
                    cal_map = isotonic_fit(
                        [o.confidence for o in val_outcomes],
                        [1 if o.exact_match else 0 for o in val_outcomes],
                    )
                    for o in outcomes:
                        calib_pairs["raw"].append((o.confidence, 1 if o.exact_match else 0))
                        calib_pairs["isotonic"].append(
                            (cal_map.apply_one(o.confidence), 1 if o.exact_match else 0)
                        )

        row: dict = {
            "category": category,
            "avg_individual_cer": pool.mean_individual_cer(),
            "error_correlation": pool.mean_pairwise_error_correlation(),
        }
        for size in sizes:
            outcomes = per_size_outcomes[size]
            row[f"consensus_cer_{size}"] = sum(o.cer for o in outcomes) / len(outcomes)
            row[f"field_accuracy_{size}"] = field_accuracy(outcomes)
            _append_outcomes(report, outcomes, category, "greedy_consensus", size)
            precision, recall, f1 = unanimous_precision_recall(outcomes)
            report.pr_rows.append(
                {
                    "category": category,
                    "ensemble_size": size,
                    "precision": precision,
                    "recall": recall,
                    "f1": f1,
                }
            )
        report.table1_rows.append(row)
        report.calibration_rows.append(
            _calibration_row(category, len(per_size_outcomes[max(sizes)]), calib_pairs, n_bins)
        )
        raw_pairs = calib_pairs["raw"]
        for center, mean_conf, accuracy, count in calibration_curve(
            [c for c, _ in raw_pairs], [y for _, y in raw_pairs], n_bins
        ):
            report.reliability_rows.append(
                {
                    "category": category,
                    "bin_center": center,
                    "mean_confidence": None if count == 0 else mean_conf,
                    "accuracy": None if count == 0 else accuracy,
                    "count": count,
                }
            )

    if len(categories) > 1:
        method_pool = merge_pools(pools)
        method_label = "all"
    else:
        method_pool = pools[categories[0]]
        method_label = categories[0]
    _method_comparison(report, method_pool, method_label, plan, sizes)
    return report


def _calibration_row(category: str, n: int, calib_pairs: dict, n_bins: int) -> dict:
    row: dict = {"category": category, "n_fields": n}
    for label, pairs in calib_pairs.items():
        confs = [c for c, _ in pairs]
        outs = [y for _, y in pairs]
        try:
            corr = error_correlation(confs, outs)
        except MetricError:
            corr = None
        row[f"correlation_{label}"] = corr
        row[f"ece_{label}"] = ece(confs, outs, n_bins)
        row[f"ace_{label}"] = ace(confs, outs, n_bins)
        row[f"brier_{label}"] = brier(confs, outs)
    return row


def _method_comparison(
    report: ExperimentReport,
    pool: CandidatePool,
    category: str,
    plan: FoldPlan,
    sizes: list[int],
) -> None:
    """Table-2 rows: selection strategies compared on one pool."""
    max_size = min(max(sizes), len(pool.spec_keys))
    for method in ("top_individual", "greedy_consensus", "oracle"):
        per_size: dict[int, list[EvalOutcome]] = {s: [] for s in sizes}
        for fold in range(plan.k):
            train = plan.other_records(fold)
            test = plan.fold_records(fold)
            if method == "top_individual":
                chosen = select_top_individual(pool, max_size, train)
            elif method == "greedy_consensus":
                chosen = select_greedy_consensus(pool, max_size, train)
            else:
                chosen = select_oracle(pool, max_size, test)
            for size in sizes:
                outcomes = pool.consensus_outcomes(chosen[: min(size, max_size)], test)
                per_size[size].extend(outcomes)
        row: dict = {"method": method, "category": category}
        for size in sizes:
            outcomes = per_size[size]
            row[f"consensus_cer_{size}"] = sum(o.cer for o in outcomes) / len(outcomes)
            row[f"field_accuracy_{size}"] = field_accuracy(outcomes)
            _append_outcomes(report, outcomes, category, method, size)
        report.table2_rows.append(row)


def _append_outcomes(
    report: ExperimentReport,
    outcomes: list[EvalOutcome],
    category: str,
    method: str,
    size: int,
) -> None:
    for o in outcomes:
        report.outcome_rows.append(
            {
                "record_id": o.record_id,
                "field": o.field_name,
                "category": category,
                "method": method,
                "ensemble_size": size,
                "predicted": o.predicted,
                "truth": o.truth,
                "exact_match": int(o.exact_match),
                "cer": o.cer,
                "confidence": o.confidence,
                "unanimous": int(o.unanimous),
            }
        )
