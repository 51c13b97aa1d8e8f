from __future__ import annotations

import pytest

from vidplan.backends import RuleBasedMockBackend
from vidplan.datasets import (
    PromptRecord,
    default_coref_entities,
    episodes_to_prompt_records,
    gen_actionbench_direction,
    gen_coref_sv,
    load_episode_templates,
)
from vidplan.evalrun import (
    random_direction_baseline,
    run_consistency_suite,
    run_movement_suite,
    run_vpeval_suite,
    score_detection_file,
)
from vidplan.metrics import Detection, write_detections
from vidplan.plan import BoundingBox


def direction_records(n_per_direction=10):
    seeds = [f"a pear {i} moving from left to right" for i in range(n_per_direction)]
    records, _ = gen_actionbench_direction(seeds)
    return records


class TestClosedLoopMovement:
    def test_mock_planner_scores_100_percent(self):
        records = direction_records(10)  # 40 prompts, balanced
        report = run_movement_suite(records)
        assert report.counts["movement"] == 40
        assert report.aggregates["movement"] == 1.0

    def test_reversed_layouts_score_0_percent(self):
        records = direction_records(10)
        report = run_movement_suite(
            records, backend_factory=lambda i, p: RuleBasedMockBackend(reverse_directions=True)
        )
        assert report.aggregates["movement"] == 0.0

    def test_compile_failure_scored_zero_with_reason(self):
        records = direction_records(1)
        report = run_movement_suite(
            records, backend_factory=lambda i, p: RuleBasedMockBackend(corrupt_step2=True)
        )
        assert report.aggregates["movement"] == 0.0
        assert all(i.details["reason"] == "COMPILE_FAILED" for i in report.per_item)

    def test_deterministic_end_to_end(self):
        records = direction_records(3)
        a = run_movement_suite(records)
        b = run_movement_suite(records)
        assert a.as_dict() == b.as_dict()


class TestRandomBaseline:
    def test_around_25_percent(self):
        acc = random_direction_baseline(10_000, seed=7)
        assert abs(acc - 0.25) < 0.03


class TestConsistencySuite:
    def test_shared_embeddings_give_exactly_one(self):
        episodes = gen_coref_sv(load_episode_templates()[:3], default_coref_entities()[:3])
        records = episodes_to_prompt_records(episodes)
        report = run_consistency_suite(records)
        assert report.counts["consistency"] == 9
        assert report.aggregates["consistency"] == 1.0

    def test_literal_mode_below_one(self):
        episodes = gen_coref_sv(load_episode_templates()[:1], ["mouse"])
        records = episodes_to_prompt_records(episodes)
        report = run_consistency_suite(records, literal_paper_denominator=True)
        assert 0.0 < report.aggregates["consistency"] < 1.0


class TestVpevalSuite:
    def test_object_skill_on_mock_plan(self):
        records = [
            PromptRecord(id="v1", text="a single ripe pear", skill="object",
                         args={"target": "pear"}),
            PromptRecord(id="v2", text="a single ripe pear", skill="object",
                         args={"target": "zeppelin"}),
        ]
        report = run_vpeval_suite(records)
        scores = {i.prompt_id: i.score for i in report.per_item}
        assert scores == {"v1": 1, "v2": 0}
        assert report.aggregates["vpeval_object"] == 0.5


def test_score_detection_file(tmp_path):
    records = [PromptRecord(id="p1", text="x", expected_direction="left to right", target_entity="pear")]
    path = tmp_path / "d.jsonl"
    write_detections(
        path,
        [
            ("p1", 0, Detection("pear", BoundingBox(0.1, 0.4, 0.2, 0.6))),
            ("p1", 15, Detection("pear", BoundingBox(0.7, 0.4, 0.8, 0.6))),
        ],
    )
    report = score_detection_file(records, path)
    assert report.aggregates["movement"] == 1.0
