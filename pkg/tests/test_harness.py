import numpy as np
import pytest

import hardlabel.harness as harness
from hardlabel.core import Criterion, Image, l2_distance
from hardlabel.errors import ProtocolInfeasibleError
from hardlabel.harness import (
    ProtocolConfig,
    ProtocolMode,
    build_hard_set,
    enumerate_pairs,
    read_summary_csv,
    run_attack,
    run_campaign,
    start_sensitivity_rows,
    summary_csv_text,
    synthesize_dataset,
    write_report,
)
from hardlabel.oracles import plateau_model
from hardlabel.presets import preset


def mini_factory():
    return plateau_model("mini")


@pytest.fixture(scope="module")
def mini_dataset():
    return synthesize_dataset(mini_factory(), 8, seed=5)


def cfg_for(mode, **kw):
    base = dict(mode=mode, n_source_classes=3, n_samples_per_class=2,
                m_targets_per_group=2, starts_per_pair=1, budget=200,
                hard_threshold=1.0, master_seed=4)
    base.update(kw)
    return ProtocolConfig(**base)


class TestEnumeratePairs:
    def test_exhaustive_count_follows_protocol_arithmetic(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.EXHAUSTIVE, n_samples_per_class=5)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        # 3 classes x 5 samples x 2 other classes
        assert len(pairs) == 3 * 5 * 2
        for p in pairs:
            assert p.target_label != p.source_label

    def test_exhaustive_four_class_arithmetic(self):
        # 4-class synthetic set, 5 samples per class: 4 * 5 * 3 = 60 pairs
        factory = lambda: plateau_model("default")  # noqa: E731
        dataset = synthesize_dataset(factory(), 6, seed=2)
        cfg = cfg_for(ProtocolMode.EXHAUSTIVE, n_samples_per_class=5)
        pairs = enumerate_pairs(cfg, dataset, factory())
        assert len(pairs) == 4 * 5 * 3

    def test_balanced_count_is_n_times_n_times_m(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED, n_source_classes=3,
                      n_samples_per_class=4, m_targets_per_group=2)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        assert len(pairs) == 3 * 4 * 2

    def test_balanced_targets_distinct_within_group(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED, n_source_classes=3,
                      n_samples_per_class=2, m_targets_per_group=2)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        by_group = {}
        for p in pairs:
            by_group.setdefault(p.source_label, set()).add(p.target_label)
        for source_label, targets in by_group.items():
            assert len(targets) == 2
            assert source_label not in targets

    def test_determinism_under_master_seed(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        a = enumerate_pairs(cfg, mini_dataset, mini_factory())
        b = enumerate_pairs(cfg, mini_dataset, mini_factory())
        assert a == b

    def test_infeasible_class_is_named(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.EXHAUSTIVE, n_samples_per_class=1000)
        with pytest.raises(ProtocolInfeasibleError) as err:
            enumerate_pairs(cfg, mini_dataset, mini_factory())
        assert "class" in str(err.value)
        assert err.value.class_label is not None

    def test_untargeted_mode_uses_auto_starts(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.UNTARGETED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        assert len(pairs) == 3 * 2
        assert all(p.target_label is None and p.start_id == "auto" for p in pairs)

    def test_start_sensitivity_expands_starts(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.START_SENSITIVITY, n_source_classes=2,
                      starts_per_pair=3)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        assert len(pairs) == 2 * 2 * 3
        by_source = {}
        for p in pairs:
            by_source.setdefault(p.source_id, set()).add(p.start_id)
        assert all(len(starts) == 3 for starts in by_source.values())

    def test_start_sensitivity_needs_at_least_two_starts(self):
        with pytest.raises(Exception):
            cfg_for(ProtocolMode.START_SENSITIVITY, starts_per_pair=1)


class TestGenericDataset:
    def test_uniform_draws_bucketed_by_oracle_decision(self):
        from hardlabel.oracles import make_random_mlp

        oracle = make_random_mlp(3, dims=(1, 3, 3), hidden=8, classes=3)
        dataset = synthesize_dataset(oracle, 4, seed=1)
        checker = make_random_mlp(3, dims=(1, 3, 3), hidden=8, classes=3)
        assert dataset
        for item in dataset:
            assert checker.decide(item.image) == item.label


class TestRunCampaign:
    def test_budget_zero_reports_initialization_distortion(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 0,
                              preset("plateau"), hard_threshold=1.0)
        by_id = {d.image_id: d for d in mini_dataset}
        for outcome in report.outcomes:
            init = l2_distance(by_id[outcome.pair.source_id].image,
                               by_id[outcome.pair.start_id].image)
            assert outcome.final_distortion == pytest.approx(init)
            assert outcome.queries_used == 0

    def test_reports_are_deterministic_across_worker_counts(self, mini_dataset, tmp_path):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        blobs = []
        for workers in (1, 4, 1):
            report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 120,
                                  preset("plateau"), hard_threshold=1.0,
                                  workers=workers)
            out = tmp_path / f"w{workers}-{len(blobs)}"
            write_report(report, str(out))
            blobs.append(tuple(
                (out / name).read_bytes()
                for name in ("summary.csv", "aggregate.json", "traces.ndjson")
            ))
        assert blobs[0] == blobs[1] == blobs[2]

    def test_per_pair_queries_respect_budget(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "rambo-sopt", mini_factory, 150,
                              preset("plateau"), hard_threshold=1.0)
        for outcome in report.outcomes:
            assert outcome.queries_used <= 150

    def test_aggregates_shape(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 100,
                              preset("plateau"), eps_grid=(0.5, 1.0),
                              hard_threshold=1.0)
        agg = report.aggregates()
        assert agg["pair_count"] == len(pairs)
        assert [entry["epsilon"] for entry in agg["asr"]] == [0.5, 1.0]
        assert agg["asr"][0]["rate"] <= agg["asr"][1]["rate"]


class TestHardSet:
    def make_report(self, finals, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())[: len(finals)]
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 0,
                              preset("plateau"), hard_threshold=0.9)
        outcomes = []
        for outcome, final in zip(report.outcomes, finals):
            outcomes.append(harness.PairOutcome(
                outcome.pair, final, outcome.queries_used,
                final >= 0.9, outcome.failed, outcome.trace))
        report.outcomes = outcomes
        return report

    def test_counting_with_inclusive_threshold(self, mini_dataset):
        report = self.make_report([0.89, 0.90, 1.3], mini_dataset)
        assert len(build_hard_set(report, 0.9)) == 2

    def test_all_below_threshold_gives_empty_set(self, mini_dataset):
        report = self.make_report([0.1, 0.2], mini_dataset)
        assert build_hard_set(report, 0.9) == []

    def test_sizes_non_increasing_in_threshold(self, mini_dataset):
        rng = np.random.default_rng(3)
        report = self.make_report(list(rng.uniform(0.5, 1.3, 12)), mini_dataset)
        sweep = [0.7, 0.8, 0.9, 1.0, 1.1]
        sizes = [len(build_hard_set(report, t)) for t in sweep]
        assert sizes == sorted(sizes, reverse=True)
        lowest = build_hard_set(report, 0.7)
        highest = build_hard_set(report, 1.1)
        assert set(p.pair_id for p in highest) <= set(p.pair_id for p in lowest)


class TestStartSensitivity:
    def test_stub_attack_ignoring_start_has_zero_std(self, mini_dataset, monkeypatch):
        cfg = cfg_for(ProtocolMode.START_SENSITIVITY, n_source_classes=2,
                      starts_per_pair=3)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())

        fixed = mini_dataset[0].image

        def stub(name, oracle, x, x_start, criterion, settings, budget, rng, **kw):
            from hardlabel.metrics import AttackTrace
            return fixed, AttackTrace(pair_id=kw.get("pair_id", "p"), records=[],
                                      best_image=fixed, queries_used=1)

        monkeypatch.setattr(harness, "run_attack", stub)
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 50,
                              preset("plateau"), hard_threshold=1.0)
        rows = start_sensitivity_rows(report)
        assert rows
        for _, _, std in rows:
            assert std == 0.0


class TestReportSerialization:
    def test_summary_csv_round_trip(self, mini_dataset, tmp_path):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 0,
                              preset("plateau"), hard_threshold=1.0)
        path = tmp_path / "summary.csv"
        path.write_text(summary_csv_text(report))
        rows = read_summary_csv(str(path))
        assert len(rows) == len(pairs)
        assert rows[0]["pair_id"] == pairs[0].pair_id
        assert float(rows[0]["final_distortion"]) == report.outcomes[0].final_distortion


class TestUntargetedCampaign:
    def test_detector_sources_flip_to_background(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.UNTARGETED, n_source_classes=3)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 200,
                              preset("plateau"), hard_threshold=1.0)
        # detector-class sources flip easily (a uniform draw fires nothing);
        # background-class sources may fail to initialize, never fatally
        assert any(not o.failed for o in report.outcomes)
        for outcome in report.outcomes:
            assert outcome.queries_used <= 200


class TestDefendedOracle:
    def test_attack_runs_against_region_voting_wrapper(self, mini_dataset):
        from hardlabel.oracles import RegionBasedWrapper

        def defended():
            return RegionBasedWrapper(mini_factory(), radius=0.01,
                                      sample_count=5, rng_seed=3)

        by_label = {}
        for item in mini_dataset:
            by_label.setdefault(item.label, []).append(item)
        source = by_label[2][0].image  # background sample
        start = by_label[0][0].image
        oracle = defended()
        best, trace = run_attack(
            "signopt", oracle, source, start,
            Criterion(targeted=True, reference_label=0), preset("plateau"),
            150, np.random.default_rng(0),
        )
        assert oracle.query_count <= 150
        assert oracle.inner.query_count == 5 * oracle.query_count
        assert trace.queries_used == oracle.query_count


class TestHardCaseRecords:
    def test_records_mirror_outcomes(self, mini_dataset):
        cfg = cfg_for(ProtocolMode.BALANCED)
        pairs = enumerate_pairs(cfg, mini_dataset, mini_factory())
        report = run_campaign(mini_dataset, pairs, "signopt", mini_factory, 0,
                              preset("plateau"), hard_threshold=1.0)
        records = report.hard_cases()
        assert len(records) == len(report.outcomes)
        for rec, outcome in zip(records, report.outcomes):
            assert rec.pair_id == outcome.pair.pair_id
            assert rec.is_hard == (rec.final_distortion >= rec.threshold)
            assert rec.budget == 0


class TestRunAttackPreconditions:
    def test_start_on_wrong_side_is_recorded_not_fatal(self, mini_dataset):
        # feed a background-class start into a targeted pair: precondition
        # fails, campaign keeps going
        by_label = {}
        for item in mini_dataset:
            by_label.setdefault(item.label, []).append(item)
        background = mini_factory().background_label
        pair = harness.PairSpec(
            pair_id="bad", source_id=by_label[background][0].image_id,
            source_label=background, target_label=0,
            start_id=by_label[background][1].image_id, seed=1,
        )
        report = run_campaign(mini_dataset, [pair], "signopt", mini_factory, 100,
                              preset("plateau"), hard_threshold=1.0)
        assert report.outcomes[0].failed
