"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
status lines.
"""

import itertools
import math
import time

import pytest
from scipy.stats import binom, spearmanr

from ttavote.augment import IMAGE_CATEGORIES, AugmentationSpec, build_grid
from ttavote.cli import main
from ttavote.consensus import SampleSet, nw_align, progressive_consensus
from ttavote.core import FieldSet
from ttavote.metrics import ace, brier, cer, ece, isotonic_fit, levenshtein
from ttavote.rng import keyed_generator
from ttavote.selection import (
    build_simulated_pool,
    select_greedy_consensus,
    select_oracle,
    select_top_individual,
)
from ttavote.theory import VoteModel, analytic_variance, effective_sample_size, simulate_majority_error
from ttavote.transcriber import NoiseModel, simulate_transcribe

from oracles import all_strings, best_alignment_score, best_monotone_fit, levenshtein_full_matrix


def report(criterion: str, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    print(f"[PASS] {criterion}{suffix}")


def random_pairs(max_len: int, count: int, seed: str):
    rng = keyed_generator("acceptance-pairs", seed)
    alphabet = "abcdefgh"
    pairs = []
    for _ in range(count):
        la = int(rng.integers(0, max_len + 1))
        lb = int(rng.integers(0, max_len + 1))
        a = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), la))
        b = "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), lb))
        pairs.append((a, b))
    return pairs


def sample_field_texts(n_fields: int, min_len=6, max_len=12, seed="fields"):
    rng = keyed_generator("acceptance", seed)
    texts = []
    for _ in range(n_fields):
        length = int(rng.integers(min_len, max_len + 1))
        texts.append("".join("abcdefghijklmnopqrstuvwxyz"[int(i)] for i in rng.integers(0, 26, length)))
    return texts


def test_criterion_01_nw_optimality():
    start = time.monotonic()
    strings = list(all_strings("abc", 5))
    for a in strings:
        for b in strings:
            assert nw_align(a, b).score == best_alignment_score(a, b)
    n_exhaustive = len(strings) ** 2
    for a, b in random_pairs(12, 500, "nw"):
        assert nw_align(a, b).score == best_alignment_score(a, b)
    elapsed = time.monotonic() - start
    assert elapsed < 30.0
    report("1 NW optimality", f"{n_exhaustive} exhaustive + 500 random pairs in {elapsed:.1f}s")


def test_criterion_02_levenshtein_oracle():
    strings = list(all_strings("abc", 5))
    for a in strings:
        for b in strings:
            assert levenshtein(a, b) == levenshtein_full_matrix(a, b)
    assert cer("lydia", "nydia") == 0.2
    report("2 Levenshtein/CER oracle equivalence", 'cer("lydia","nydia") = 0.200')


def test_criterion_03_consensus_majority_recovery():
    start = time.monotonic()
    noise = NoiseModel(char_error_rate=0.2, correlation=0.0, op_mix=(1.0, 0.0, 0.0), seed=42)
    texts = sample_field_texts(500)
    individual_total = 0.0
    consensus_total = 0.0
    n_samples = 10
    for text in texts:
        truth = FieldSet(self_given_name=text)
        samples = tuple(
            simulate_transcribe(truth, noise, sample_index=n).get("SelfGivenName")
            for n in range(n_samples)
        )
        individual_total += sum(cer(s, text) for s in samples) / n_samples
        result = progressive_consensus(SampleSet(samples=samples))
        consensus_total += cer(result.consensus, text)
    mean_individual = individual_total / len(texts)
    mean_consensus = consensus_total / len(texts)
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    assert mean_consensus <= 0.25 * mean_individual
    report(
        "3 Consensus majority recovery",
        f"individual CER {mean_individual:.3f} -> consensus {mean_consensus:.4f} in {elapsed:.1f}s",
    )


def test_criterion_04_missed_field_recovery():
    noise = NoiseModel(
        char_error_rate=0.2, correlation=0.0, op_mix=(1.0, 0.0, 0.0), drop_field_rate=0.1, seed=43
    )
    texts = sample_field_texts(500, seed="drop")
    eligible = 0
    recovered = 0
    for text in texts:
        truth = FieldSet(self_given_name=text)
        samples = tuple(
            simulate_transcribe(truth, noise, sample_index=n).get("SelfGivenName") for n in range(10)
        )
        if all(s is None for s in samples):
            continue
        eligible += 1
        result = progressive_consensus(SampleSet(samples=samples))
        if result.consensus is not None:
            recovered += 1
    assert eligible > 400
    assert recovered / eligible >= 0.99
    report("4 Missed-field recovery", f"{recovered}/{eligible} fields with >=1 sample recovered")


def test_criterion_05_variance_formula():
    start = time.monotonic()
    checked = 0
    for eps in (0.1, 0.3):
        for rho in (0.0, 0.3, 0.7):
            for n in (5, 10, 20):
                model = VoteModel(error_rate=eps, correlation=rho, n_voters=n, trials=100_000, seed=44)
                result = simulate_majority_error(model)
                predicted = analytic_variance(
                    model, rho=result.rho_empirical, error_rate=result.mean_error
                )
                tolerance = 3 * max(result.var_standard_error, 1e-12)
                assert abs(result.var_mean_error - predicted) <= tolerance, (eps, rho, n)
                checked += 1
    elapsed = time.monotonic() - start
    assert elapsed < 120.0
    report("5 Variance formula", f"{checked} (eps, rho, N) combinations in {elapsed:.1f}s")


def test_criterion_06_majority_vote_binomial():
    model = VoteModel(error_rate=0.2, correlation=0.0, n_voters=11, trials=100_000, seed=45)
    result = simulate_majority_error(model)
    exact = float(1.0 - binom.cdf(5, 11, 0.2))
    assert exact == pytest.approx(0.01165, abs=5e-5)
    se = math.sqrt(exact * (1.0 - exact) / model.trials)
    assert abs(result.failure_rate - exact) <= 3 * se
    report(
        "6 Majority-vote binomial check",
        f"empirical {result.failure_rate:.5f} vs exact {exact:.5f}",
    )


def test_criterion_07_neff_limits_and_rho_trend():
    assert effective_sample_size(10, 0.0) == 10.0
    assert effective_sample_size(10, 1.0) == 1.0
    rhos = [0.0, 0.25, 0.5, 0.75, 1.0]
    rates = []
    for rho in rhos:
        model = VoteModel(error_rate=0.2, correlation=rho, n_voters=11, trials=100_000, seed=46)
        rates.append(simulate_majority_error(model).failure_rate)
    trend, _ = spearmanr(rhos, rates)
    assert trend > 0
    report("7 N_eff limits + rho trend", f"failure rates {['%.4f' % r for r in rates]}")


def test_criterion_08_calibration_fixtures():
    tol = 1e-12
    assert abs(ece([0.9, 0.9, 0.6, 0.6], [1, 1, 1, 0], 2) - 0.0) <= tol
    assert abs(ece([1.0, 1.0], [0, 0], 10) - 1.0) <= tol
    assert abs(ece([1.0], [1], 10) - 0.0) <= tol
    assert abs(ace([0.7, 0.7, 0.7, 0.7], [1, 0, 1, 1], 1) - 0.05) <= tol
    assert abs(ace([0.9, 0.9, 0.6, 0.6], [1, 1, 1, 0], 2) - 0.1) <= tol
    assert abs(brier([1.0], [1]) - 0.0) <= tol
    assert abs(brier([0.5], [0]) - 0.25) <= tol
    assert abs(brier([0.8, 0.4], [1, 0]) - 0.10) <= tol
    assert isotonic_fit([0.1, 0.2, 0.3], [0, 1, 1]).fitted == (0.0, 1.0, 1.0)
    assert isotonic_fit([0.2, 0.8], [1, 0]).fitted == (0.5, 0.5)
    assert isotonic_fit([0.3, 0.6], [1, 1]).fitted == (1.0, 1.0)

    n_vectors = 0
    for n in range(1, 7):
        confs = [(i + 1) / (n + 1) for i in range(n)]
        for bits in itertools.product([0, 1], repeat=n):
            fitted = isotonic_fit(confs, list(bits)).fitted
            assert all(a <= b + tol for a, b in zip(fitted, fitted[1:]))
            oracle_fit, oracle_err = best_monotone_fit(list(map(float, bits)))
            err = sum((f - y) ** 2 for f, y in zip(fitted, bits))
            assert abs(err - oracle_err) <= tol
            assert all(abs(f - o) <= tol for f, o in zip(fitted, oracle_fit))
            n_vectors += 1
    report("8 Calibration fixtures", f"hand values exact; {n_vectors} isotonic vectors vs oracle")


def test_criterion_09_correlation_diversity():
    improvements = {}
    individual_cers = {}
    for rho in (0.3, 0.9):
        deltas = []
        cers = []
        for seed in range(10):
            noise = NoiseModel(
                char_error_rate=0.25, correlation=rho, op_mix=(1.0, 0.0, 0.0), seed=900 + seed
            )
            fieldsets = {
                f"r{i:02d}": FieldSet(self_given_name="margaret", mother_given_name="helena")
                for i in range(10)
            }
            pool = build_simulated_pool(fieldsets, [f"s{i}" for i in range(10)], noise)
            individual = pool.mean_individual_cer()
            consensus = pool.consensus_cer(pool.spec_keys)
            deltas.append(individual - consensus)
            cers.append(individual)
        improvements[rho] = sum(deltas) / len(deltas)
        individual_cers[rho] = sum(cers) / len(cers)
    # matched difficulty: same marginal error rate in both pools
    assert individual_cers[0.3] == pytest.approx(individual_cers[0.9], rel=0.15)
    assert improvements[0.3] > improvements[0.9]
    report(
        "9 Correlation-diversity phenomenon",
        f"improvement rho=0.3: {improvements[0.3]:.3f} > rho=0.9: {improvements[0.9]:.3f}",
    )


def test_criterion_10_grid_cardinalities():
    total = 0
    for category in IMAGE_CATEGORIES:
        grid = build_grid(category)
        assert len(grid) == 20
        for spec in grid.specs:
            assert AugmentationSpec.from_json(spec.to_json()) == spec
        total += len(grid)
    assert total == 100
    report("10 Grid cardinalities", "20 per category, 100 in union, JSON round-trip")


def test_criterion_11_selection_sanity():
    # part 1: disjoint-failure fixture
    truths = {}
    for i in range(10):
        truths[(f"r{i:02d}", "SelfGivenName")] = "margaret"
        truths[(f"r{i:02d}", "SelfSurname")] = "kowalski"
    subset_a = {("r00", "SelfGivenName"), ("r01", "SelfGivenName")}
    subset_b = {("r02", "SelfSurname"), ("r03", "SelfSurname"), ("r04", "SelfSurname")}
    from ttavote.selection import CandidatePool

    pool = CandidatePool(
        spec_keys=["a", "b", "c"],
        samples={
            "a": {k: (None if k in subset_a else v) for k, v in truths.items()},
            "b": {k: (None if k in subset_b else v) for k, v in truths.items()},
            "c": {k: (None if k in subset_a else v) for k, v in truths.items()},
        },
        truths=truths,
        record_ids=sorted({rec for rec, _ in truths}),
    )
    greedy = select_greedy_consensus(pool, 2)
    top = select_top_individual(pool, 2)
    assert pool.consensus_cer(greedy) < pool.consensus_cer(top)

    # part 2: oracle at least matches greedy on the evaluation set
    wins = 0
    for seed in range(10):
        noise = NoiseModel(char_error_rate=0.3, correlation=0.3, op_mix=(0.8, 0.1, 0.1), seed=1100 + seed)
        fieldsets = {
            f"r{i:02d}": FieldSet(self_given_name="margaret", self_surname="kowalski")
            for i in range(12)
        }
        sim_pool = build_simulated_pool(fieldsets, [f"s{i:02d}" for i in range(10)], noise)
        val = [f"r{i:02d}" for i in range(6)]
        test = [f"r{i:02d}" for i in range(6, 12)]
        greedy_keys = select_greedy_consensus(sim_pool, 4, val)
        oracle_keys = select_oracle(sim_pool, 4, test)
        if sim_pool.consensus_cer(oracle_keys, test) <= sim_pool.consensus_cer(greedy_keys, test):
            wins += 1
    assert wins >= 8
    report(
        "11 Selection sanity",
        f"greedy {pool.consensus_cer(greedy):.3f} < top-individual {pool.consensus_cer(top):.3f}; "
        f"oracle wins {wins}/10",
    )


def test_criterion_12_end_to_end_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--n-records", "8", "--seed", "21"]) == 0

    def run(out, parallelism):
        args = [
            "run",
            "--manifest",
            str(data / "manifest.json"),
            "--mode",
            "simulate",
            "--categories",
            "grid_warp",
            "--ensemble-sizes",
            "2",
            "3",
            "--k-folds",
            "2",
            "--seed",
            "33",
            "--out",
            str(out),
            "--parallelism",
            str(parallelism),
        ]
        assert main(args) == 0
        names = ["table1.csv", "table2.csv", "calibration.csv", "pr_unanimous.csv"]
        blobs = {name: (out / "report" / name).read_bytes() for name in names}
        blobs["outcomes.csv"] = (out / "outcomes.csv").read_bytes()
        return blobs

    first = run(tmp_path / "run1", parallelism=1)
    second = run(tmp_path / "run2", parallelism=1)
    parallel = run(tmp_path / "run8", parallelism=8)
    assert first == second
    assert first == parallel
    report("12 End-to-end determinism", "byte-identical across reruns and parallelism {1, 8}")
