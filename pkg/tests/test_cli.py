import json
import time

import pytest

from ttavote.cli import _baseline_entry, _category_plan, main
from ttavote.core import load_dataset
from ttavote.transcriber import GenerationParams, RunRecord, TranscriptionCache, simulate_transcribe, NoiseModel


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--n-records", "6", "--seed", "11"]) == 0
    return out


def run_reports(out_dir):
    names = ["table1.csv", "table2.csv", "calibration.csv", "pr_unanimous.csv"]
    return {name: (out_dir / "report" / name).read_bytes() for name in names}


class TestSynth:
    def test_creates_loadable_dataset(self, dataset_dir):
        dataset = load_dataset(dataset_dir / "manifest.json")
        assert len(dataset) == 6


class TestAugment:
    def test_pad_writes_twenty_then_idempotent(self, tmp_path, dataset_dir):
        single = tmp_path / "single"
        single.mkdir()
        manifest = dataset_dir / "manifest.json"
        dataset = load_dataset(manifest)
        first = dataset.records[0]
        mini = {
            "records": [
                {
                    "id": first.record_id,
                    "image": str(first.image_path.resolve()),
                    "truth": first.truth.to_dict(),
                }
            ]
        }
        mini_manifest = single / "manifest.json"
        mini_manifest.write_text(json.dumps(mini))

        out = tmp_path / "aug"
        assert main(["augment", "--manifest", str(mini_manifest), "--categories", "pixel_shift_pad", "--out", str(out)]) == 0
        rec_dir = out / "cache" / "aug" / first.record_id
        assert len(list(rec_dir.glob("*.png"))) == 20

        before = sorted(p.stat().st_mtime_ns for p in rec_dir.glob("*.png"))
        assert main(["augment", "--manifest", str(mini_manifest), "--categories", "pixel_shift_pad", "--out", str(out)]) == 0
        after = sorted(p.stat().st_mtime_ns for p in rec_dir.glob("*.png"))
        assert before == after  # idempotent: no rewrites

        assert main(["augment", "--manifest", str(mini_manifest), "--out", str(out)]) == 0
        assert len(list(rec_dir.glob("*.png"))) == 100  # all five categories
        index = json.loads((out / "cache" / "aug-index.json").read_text())
        assert len(index) == 100

    def test_unknown_category_rejected(self, tmp_path, dataset_dir):
        code = main(
            [
                "augment",
                "--manifest",
                str(dataset_dir / "manifest.json"),
                "--categories",
                "sharpen",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 1


def simulate_args(dataset_dir, out, parallelism=1, seed=5):
    return [
        "run",
        "--manifest",
        str(dataset_dir / "manifest.json"),
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
        str(seed),
        "--out",
        str(out),
        "--parallelism",
        str(parallelism),
    ]


class TestRunSimulate:
    def test_produces_reports_and_manifest(self, tmp_path, dataset_dir):
        out = tmp_path / "run"
        assert main(simulate_args(dataset_dir, out)) == 0
        for name in ("table1.csv", "table2.csv", "calibration.csv", "pr_unanimous.csv"):
            assert (out / "report" / name).exists()
        assert (out / "outcomes.csv").exists()
        manifest = json.loads((out / "run-manifest.json").read_text())
        assert manifest["seed"] == 5
        assert "input_hashes" in manifest and "versions" in manifest

    def test_byte_identical_across_runs(self, tmp_path, dataset_dir):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(simulate_args(dataset_dir, out1)) == 0
        assert main(simulate_args(dataset_dir, out2)) == 0
        assert run_reports(out1) == run_reports(out2)
        assert (out1 / "outcomes.csv").read_bytes() == (out2 / "outcomes.csv").read_bytes()

    def test_byte_identical_across_parallelism(self, tmp_path, dataset_dir):
        out1, out8 = tmp_path / "p1", tmp_path / "p8"
        assert main(simulate_args(dataset_dir, out1, parallelism=1)) == 0
        assert main(simulate_args(dataset_dir, out8, parallelism=8)) == 0
        assert run_reports(out1) == run_reports(out8)
        assert (out1 / "outcomes.csv").read_bytes() == (out8 / "outcomes.csv").read_bytes()

    def test_dry_run_counts_requests(self, tmp_path, dataset_dir, capsys):
        out = tmp_path / "dry"
        args = simulate_args(dataset_dir, out) + ["--dry-run"]
        assert main(args) == 0
        captured = capsys.readouterr().out
        # 6 records x (20 grid specs + 1 baseline) = 126 requests
        assert "126" in captured
        assert not out.exists()


class TestRunOffline:
    def test_missing_cache_exits_with_coverage(self, tmp_path, dataset_dir):
        out = tmp_path / "off"
        args = simulate_args(dataset_dir, out)
        args[args.index("simulate")] = "offline"
        with pytest.raises(SystemExit) as err:
            main(args)
        assert err.value.code == 2
        coverage = out / "coverage_missing.csv"
        assert coverage.exists()
        assert len(coverage.read_text().strip().splitlines()) > 1

    def test_full_cache_runs_without_network(self, tmp_path, dataset_dir):
        out = tmp_path / "off-full"
        dataset = load_dataset(dataset_dir / "manifest.json")
        plan = _category_plan(["grid_warp"])
        entries = list(plan["grid_warp"]) + [_baseline_entry()]
        noise = NoiseModel(char_error_rate=0.15, seed=3)
        cache = TranscriptionCache(out / "cache" / "transcriptions.jsonl")
        for index, (spec_key, spec, params) in enumerate(entries):
            for record in dataset.records:
                fields = simulate_transcribe(record.truth, noise, sample_index=index)
                cache.put(
                    RunRecord(
                        record_id=record.record_id,
                        spec_hash=spec.spec_hash,
                        params=GenerationParams(
                            temperature=params.temperature,
                            top_p=params.top_p,
                            model_name="default",
                            sample_index=params.sample_index,
                        ),
                        fields=fields,
                        timestamp=time.time(),
                    )
                )
        args = simulate_args(dataset_dir, out)
        args[args.index("simulate")] = "offline"
        assert main(args) == 0
        assert (out / "report" / "table1.csv").exists()


class TestRunConfigFile:
    def test_config_json_drives_run(self, tmp_path, dataset_dir):
        out = tmp_path / "cfg-run"
        config = {
            "manifest": str((dataset_dir / "manifest.json").resolve()),
            "mode": "simulate",
            "categories": ["grid_warp"],
            "ensemble_sizes": [2, 3],
            "k_folds": 2,
            "seed": 5,
            "out": str(out),
        }
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps(config))
        assert main(["run", "--config", str(config_path)]) == 0
        assert (out / "report" / "table1.csv").exists()

    def test_flags_override_config(self, tmp_path, dataset_dir):
        out_a = tmp_path / "a"
        config = {
            "manifest": str((dataset_dir / "manifest.json").resolve()),
            "mode": "simulate",
            "categories": ["grid_warp"],
            "ensemble_sizes": [2, 3],
            "k_folds": 2,
            "seed": 5,
            "out": str(tmp_path / "ignored"),
        }
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps(config))
        assert main(["run", "--config", str(config_path), "--out", str(out_a)]) == 0
        assert (out_a / "report" / "table1.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_rerun_from_run_manifest_reproduces(self, tmp_path, dataset_dir):
        out1 = tmp_path / "orig"
        assert main(simulate_args(dataset_dir, out1)) == 0
        out2 = tmp_path / "replay"
        manifest = out1 / "run-manifest.json"
        assert main(["run", "--config", str(manifest), "--out", str(out2)]) == 0
        assert run_reports(out1) == run_reports(out2)

    def test_missing_required_after_config(self, tmp_path):
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps({"mode": "simulate"}))
        assert main(["run", "--config", str(config_path)]) == 1


class TestPresetFolds:
    def test_manifest_folds_used(self, tmp_path, dataset_dir):
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        records = manifest["records"]
        for record in records:
            record["image"] = str((dataset_dir / record["image"]).resolve())
        manifest["folds"] = {r["id"]: i % 2 for i, r in enumerate(records)}
        manifest_path = tmp_path / "manifest.json"
        manifest_path.write_text(json.dumps(manifest))

        dataset = load_dataset(manifest_path)
        assert dataset.folds is not None

        out = tmp_path / "run"
        args = simulate_args(dataset_dir, out)
        args[args.index("--manifest") + 1] = str(manifest_path)
        assert main(args) == 0
        assert (out / "report" / "table1.csv").exists()


class TestOfflineNetworkSentinel:
    def test_offline_never_touches_the_network(self, tmp_path, dataset_dir, monkeypatch):
        import ttavote.cli as cli_module

        class ExplodingTranscriber:
            def __init__(self, *args, **kwargs):
                raise AssertionError("offline mode must not construct a network client")

        monkeypatch.setattr(cli_module, "RemoteTranscriber", ExplodingTranscriber)
        out = tmp_path / "off"
        args = simulate_args(dataset_dir, out)
        args[args.index("simulate")] = "offline"
        with pytest.raises(SystemExit):  # cache empty: coverage failure, but no network
            main(args)


class TestReport:
    def test_emits_figure_series(self, tmp_path, dataset_dir):
        out = tmp_path / "run"
        assert main(simulate_args(dataset_dir, out)) == 0
        assert main(["report", "--out", str(out)]) == 0
        fig2 = (out / "report" / "fig2_consensus_cer_vs_samples.csv").read_text().splitlines()
        assert fig2[0] == "category,ensemble_size,consensus_cer,field_accuracy,n_fields"
        # baseline plus one category at two ensemble sizes
        assert len(fig2) >= 3
        fig3 = (out / "report" / "fig3_selection_methods.csv").read_text().splitlines()
        assert any("oracle" in line for line in fig3)
        assert (out / "report" / "fig4_pr_unanimous.csv").exists()

    def test_missing_outcomes_reported(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path)]) == 1
        assert "outcomes.csv" in capsys.readouterr().err

    def test_malformed_row_names_line(self, tmp_path, dataset_dir):
        out = tmp_path / "run"
        assert main(simulate_args(dataset_dir, out)) == 0
        outcomes = out / "outcomes.csv"
        lines = outcomes.read_text().splitlines()
        lines[2] = lines[2].replace(lines[2].split(",")[4], "not-a-number", 1)
        outcomes.write_text("\n".join(lines) + "\n")
        code = main(["report", "--out", str(out)])
        assert code == 1


class TestSimulateCommand:
    def test_writes_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(
            [
                "simulate",
                "--eps",
                "0.2",
                "--rho",
                "0.0",
                "0.5",
                "--n",
                "5",
                "--trials",
                "2000",
                "--seed",
                "1",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("error_rate,rho_param,rho_empirical")
        assert len(lines) == 3
