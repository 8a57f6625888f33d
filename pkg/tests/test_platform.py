from __future__ import annotations

import json
from datetime import datetime, timezone

import numpy as np
import pytest

from crowdlab.platforms.base import UnsupportedElementError
from crowdlab.platforms.filebased import FILE_SUPPORTED_ELEMENTS, FileAdapter
from crowdlab.platforms.sim import (
    ALL_ELEMENTS,
    PopulationProfile,
    SimulatedPlatform,
    simulate_arrivals,
    simulate_worker_behavior,
)
from crowdlab.platforms.translate import translate_template
from crowdlab.model import Paging, TaskTemplate, UiElement
from conftest import choice_template


def utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


class TestTranslate:
    def test_text_and_choice_fragments(self):
        payload = translate_template(choice_template(), "sim", supported_elements=ALL_ELEMENTS)
        kinds = [f["type"] for f in payload["elements"]]
        assert kinds == ["display-text", "choice"]
        assert payload["elements"][1]["multiple"] is False
        assert payload["elements"][1]["options"] == ["in", "out"]
        assert payload["paging"]["units_per_page"] == 3

    def test_highlightable_text_sets_span_flag(self):
        template = TaskTemplate(
            title="t",
            instructions="i",
            elements=(UiElement(kind="highlightable-text", binding="text"),),
            paging=Paging(),
        )
        payload = translate_template(template, "sim", supported_elements=ALL_ELEMENTS)
        assert payload["elements"][0]["selectable_spans"] is True

    def test_unsupported_element_names_the_element(self):
        template = TaskTemplate(
            title="t",
            instructions="i",
            elements=(UiElement(kind="highlightable-image", binding="img"),),
            paging=Paging(),
        )
        with pytest.raises(UnsupportedElementError, match="highlightable-image"):
            translate_template(template, "file", supported_elements=FILE_SUPPORTED_ELEMENTS)

    def test_eligibility_hook_embedded(self):
        hook = {"url": "/runs/r/eligibility", "token": "tok", "block_id": "b"}
        payload = translate_template(
            choice_template(), "sim", supported_elements=ALL_ELEMENTS, eligibility_hook=hook
        )
        assert payload["eligibility"] == hook


class TestArrivals:
    def test_zero_diurnal_multipliers_zero_arrivals(self):
        profile = PopulationProfile(
            country_mix={"US": 1.0},
            diurnal_curves={"US": tuple([0.0] * 24)},
            arrival_rate_per_hour=50.0,
            seed=5,
        )
        events = simulate_arrivals(profile, (utc(2020, 6, 1, 0), utc(2020, 6, 1, 6)))
        assert events == []

    def test_flat_curve_rate_matches_expectation(self):
        """Single country, flat curve, rate r, 2-hour window: mean arrivals
        over many seeds must land within 3 sigma of 2r."""
        r = 6.0
        total = 0
        n_seeds = 1000
        for seed in range(n_seeds):
            profile = PopulationProfile(
                country_mix={"US": 1.0},
                diurnal_curves={"US": tuple([1.0] * 24)},
                arrival_rate_per_hour=r,
                seed=seed,
            )
            total += len(simulate_arrivals(profile, (utc(2020, 6, 1, 3), utc(2020, 6, 1, 5))))
        mean = total / n_seeds
        sigma_of_mean = (2 * r) ** 0.5 / n_seeds**0.5
        assert abs(mean - 2 * r) < 3 * sigma_of_mean

    def test_opposite_timezones_flip_country_mix(self):
        day_curve = tuple([0.0] * 8 + [1.0] * 12 + [0.0] * 4)  # awake 08:00-20:00 local
        profile = PopulationProfile(
            country_mix={"AA": 0.5, "BB": 0.5},
            country_utc_offsets={"AA": 0.0, "BB": 12.0},
            diurnal_curves={"AA": day_curve, "BB": day_curve},
            arrival_rate_per_hour=40.0,
            seed=11,
        )
        morning = simulate_arrivals(profile, (utc(2020, 6, 1, 9), utc(2020, 6, 1, 13)))
        evening = simulate_arrivals(profile, (utc(2020, 6, 1, 21), utc(2020, 6, 2, 1)))
        morning_mix = {c: sum(1 for e in morning if e.payload["country"] == c) for c in ("AA", "BB")}
        evening_mix = {c: sum(1 for e in evening if e.payload["country"] == c) for c in ("AA", "BB")}
        assert morning_mix["AA"] > 0 and morning_mix["BB"] == 0
        assert evening_mix["BB"] > 0 and evening_mix["AA"] == 0

    def test_deterministic_per_seed(self):
        profile = PopulationProfile(seed=21)
        a = simulate_arrivals(profile, (utc(2020, 6, 1, 0), utc(2020, 6, 1, 12)))
        b = simulate_arrivals(profile, (utc(2020, 6, 1, 0), utc(2020, 6, 1, 12)))
        assert [(e.time, e.payload) for e in a] == [(e.time, e.payload) for e in b]

    def test_bad_window_rejected(self):
        with pytest.raises(ValueError):
            simulate_arrivals(PopulationProfile(), (utc(2020, 6, 2), utc(2020, 6, 1)))


class TestWorkerBehavior:
    def test_sigma_zero_new_worker_hits_median(self):
        profile = PopulationProfile(decision_time_sigma=0.0, base_decision_time_median_s=24.0, seed=1)
        rng = np.random.Generator(np.random.PCG64(1))
        t, _ = simulate_worker_behavior(profile, "g", {"is_returning": False}, rng)
        assert t == pytest.approx(24.0)

    def test_returning_same_speedup_gives_fourteen_seconds(self):
        profile = PopulationProfile(
            decision_time_sigma=0.0,
            base_decision_time_median_s=24.0,
            returning_same_speedup=14.0 / 24.0,
            seed=1,
        )
        rng = np.random.Generator(np.random.PCG64(1))
        t, _ = simulate_worker_behavior(
            profile, "g", {"is_returning": True, "from_group": "g"}, rng
        )
        assert t == pytest.approx(14.0)

    def test_bad_to_good_crossover_slower_than_new(self):
        profile = PopulationProfile(decision_time_sigma=0.4, seed=3)
        kinds = {"gb": "bad", "gg": "good"}
        rng = np.random.Generator(np.random.PCG64(3))
        new_times, cross_times = [], []
        for _ in range(500):
            t, _ = simulate_worker_behavior(profile, "gg", {"is_returning": False}, rng, kinds)
            new_times.append(t)
            t, _ = simulate_worker_behavior(
                profile, "gg", {"is_returning": True, "from_group": "gb"}, rng, kinds
            )
            cross_times.append(t)
        assert sum(cross_times) / len(cross_times) > sum(new_times) / len(new_times)

    def test_accuracy_unaffected_by_returning(self):
        profile = PopulationProfile(base_accuracy=0.8, seed=5)
        rng = np.random.Generator(np.random.PCG64(5))
        new_hits = sum(
            simulate_worker_behavior(profile, "g", {"is_returning": False}, rng)[1]
            for _ in range(4000)
        )
        ret_hits = sum(
            simulate_worker_behavior(profile, "g", {"is_returning": True, "from_group": "g"}, rng)[1]
            for _ in range(4000)
        )
        assert abs(new_hits / 4000 - ret_hits / 4000) < 0.05


class TestSimPlatformAdapter:
    def _task(self, platform):
        payload = {
            "block_id": "b1",
            "group_id": "A",
            "votes_per_unit": 1,
            "elements": [{"type": "choice", "options": ["in", "out"]}],
            "paging": {"units_per_page": 3, "gold_per_page": 1, "max_pages": 6},
        }
        units = [{"id": f"u{i}", "payload": {"text": "x"}} for i in range(6)]
        units.append({"id": "g0", "payload": {"text": "g"}, "gold": {"expected-answer": "in"}})
        return platform.publish(payload, units, "tok-1")

    def test_publish_idempotent_under_token(self):
        platform = SimulatedPlatform(PopulationProfile(seed=1), utc(2020, 6, 1))
        h1 = self._task(platform)
        h2 = self._task(platform)
        assert h1 == h2
        assert platform.publish_counts == {"b1": 1}

    def test_cursor_monotone_replay_yields_exact_suffix(self):
        platform = SimulatedPlatform(PopulationProfile(seed=2, arrival_rate_per_hour=20.0), utc(2020, 6, 1))
        handle = self._task(platform)
        platform.advance(utc(2020, 6, 1, 12))
        all_rows, end = platform.fetch_judgments(handle, 0)
        assert len(all_rows) > 0 and end == len(all_rows)
        mid = len(all_rows) // 2
        suffix, end2 = platform.fetch_judgments(handle, mid)
        assert suffix == all_rows[mid:]
        assert end2 == end
        again, _ = platform.fetch_judgments(handle, 0)
        assert again == all_rows

    def test_identical_seed_identical_log(self):
        logs = []
        for _ in range(2):
            platform = SimulatedPlatform(
                PopulationProfile(seed=9, arrival_rate_per_hour=15.0), utc(2020, 6, 1)
            )
            handle = self._task(platform)
            platform.advance(utc(2020, 6, 1, 8))
            rows, _ = platform.fetch_judgments(handle, 0)
            logs.append(json.dumps(rows, sort_keys=True))
        assert logs[0] == logs[1]

    def test_paused_task_attracts_no_sessions(self):
        platform = SimulatedPlatform(
            PopulationProfile(seed=3, arrival_rate_per_hour=15.0), utc(2020, 6, 1)
        )
        handle = self._task(platform)
        platform.pause(handle)
        platform.advance(utc(2020, 6, 1, 10))
        rows, _ = platform.fetch_judgments(handle, 0)
        assert rows == []
        platform.resume(handle)
        platform.advance(utc(2020, 6, 2, 10))
        rows, _ = platform.fetch_judgments(handle, 0)
        assert len(rows) > 0


class TestFileAdapter:
    def test_round_trip_with_external_judgments(self, tmp_path):
        adapter = FileAdapter(tmp_path)
        handle = adapter.publish(
            {"title": "t", "block_id": "b"}, [{"id": "u1", "payload": {"x": 1}}], "tok"
        )
        task_dir = tmp_path / handle.platform_task_id
        assert (task_dir / "task.json").exists()
        line = {
            "uid": "j1",
            "unit_id": "u1",
            "worker_id": "w1",
            "fingerprint": "fp1",
            "answer": "in",
            "decision_time_ms": 1200,
            "timestamp": "2020-06-01T10:00:00+00:00",
        }
        with (task_dir / "judgments.ndjson").open("a") as fh:
            fh.write(json.dumps(line) + "\n")
        rows, cursor = adapter.fetch_judgments(handle, 0)
        assert rows == [line] and cursor == 1
        rows2, cursor2 = adapter.fetch_judgments(handle, cursor)
        assert rows2 == [] and cursor2 == 1

    def test_publish_idempotent(self, tmp_path):
        adapter = FileAdapter(tmp_path)
        h1 = adapter.publish({"title": "t"}, [], "tok")
        h2 = adapter.publish({"title": "t"}, [], "tok")
        assert h1.platform_task_id == h2.platform_task_id

    def test_pause_marker(self, tmp_path):
        adapter = FileAdapter(tmp_path)
        handle = adapter.publish({"title": "t"}, [], "tok")
        adapter.pause(handle)
        assert adapter.status(handle).paused
        adapter.resume(handle)
        assert not adapter.status(handle).paused

    def test_profile_json_round_trip(self):
        profile = PopulationProfile(seed=42, arrival_rate_per_hour=3.5)
        text = profile.to_json()
        again = PopulationProfile.from_json(text)
        assert again == profile

    def test_profile_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown fields"):
            PopulationProfile.from_json('{"surprise": 1}')
