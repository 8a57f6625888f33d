"""Bias diagnostics over a judgment log.

The reference population for all cohort comparisons is the valid
contributions: judgments from trusted, policy-compliant, first-time
participations. Per-contribution values are standardized against that
reference with a robust z-score, (x - median) / (scale * MAD), which keeps
one prolific outlier from dominating the picture. Accuracy comparisons are
per worker, not per judgment, for the same reason.

Cohorts partition worker participations: new, returning to the same
condition, the named crossover directions, other crossovers, and untrusted.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable

REPORT_VERSION = 1
MAD_SCALE = 1.4826  # consistent-with-normal scaling for the MAD
MIN_COHORT_N = 5

COHORT_NEW = "new"
COHORT_RETURNING_SAME = "returning-same"
COHORT_SUPPORT_TO_BASE = "support-to-base"
COHORT_BASE_TO_SUPPORT = "base-to-support"
COHORT_BAD_TO_GOOD = "bad-to-good"
COHORT_OTHER_CROSS = "other-crossover"
COHORT_UNTRUSTED = "untrusted"

COHORTS = (
    COHORT_NEW,
    COHORT_RETURNING_SAME,
    COHORT_SUPPORT_TO_BASE,
    COHORT_BASE_TO_SUPPORT,
    COHORT_BAD_TO_GOOD,
    COHORT_OTHER_CROSS,
    COHORT_UNTRUSTED,
)


class DegenerateReferenceError(ValueError):
    """Reference sample has zero MAD (or is too small) and cannot scale z-scores."""


@dataclass(frozen=True)
class ReportConfig:
    top_k_countries: int = 3
    mad_scale: float = MAD_SCALE
    group_kinds: dict[str, str] = field(default_factory=dict)
    per_condition_z: bool = False  # pool first by default; per-condition behind this flag
    n_windows: int = 0


def robust_z(
    values: Iterable[float],
    reference: Iterable[float],
    scale: float = MAD_SCALE,
) -> list[float]:
    """z_i = (x_i - median(ref)) / (scale * MAD(ref)).

    MAD is the median absolute deviation from the reference median. Raises
    DegenerateReferenceError when the reference is constant; callers fall
    back to IQR scaling and flag the result.
    """
    ref = list(reference)
    if len(ref) < MIN_COHORT_N:
        raise DegenerateReferenceError(f"reference needs >= {MIN_COHORT_N} values, got {len(ref)}")
    med = statistics.median(ref)
    mad = statistics.median(abs(x - med) for x in ref)
    if mad == 0:
        raise DegenerateReferenceError("degenerate reference: MAD is zero")
    denom = scale * mad
    return [(x - med) / denom for x in values]


def iqr_z(values: Iterable[float], reference: Iterable[float]) -> list[float]:
    """Fallback scaling when the MAD degenerates: (x - median) / IQR."""
    ref = sorted(reference)
    if len(ref) < MIN_COHORT_N:
        raise DegenerateReferenceError("reference too small for IQR fallback")
    q1 = _quantile(ref, 0.25)
    q3 = _quantile(ref, 0.75)
    iqr = q3 - q1
    if iqr == 0:
        raise DegenerateReferenceError("degenerate reference: IQR is zero")
    med = statistics.median(ref)
    return [(x - med) / iqr for x in values]


def _quantile(sorted_values: list[float], q: float) -> float:
    n = len(sorted_values)
    pos = q * (n - 1)
    lo = int(pos)
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


# -- participation structure ----------------------------------------------------


@dataclass
class Participation:
    worker_id: str
    session: int
    group_id: str
    judgments: list[dict[str, Any]] = field(default_factory=list)


def participations(log: list[dict[str, Any]]) -> list[Participation]:
    """Group judgments into (worker, session) participations."""
    order: list[tuple[str, int]] = []
    by_key: dict[tuple[str, int], Participation] = {}
    for j in log:
        key = (j["worker_id"], int(j.get("session", 0)))
        if key not in by_key:
            by_key[key] = Participation(
                worker_id=key[0], session=key[1], group_id=j.get("group_id", "")
            )
            order.append(key)
        by_key[key].judgments.append(j)
    return [by_key[k] for k in order]


def cohort_fractions(log: list[dict[str, Any]]) -> dict[str, float]:
    """Returning and crossover fractions over distinct workers.

    Returning = workers with at least two participations; crossover = workers
    seen in at least two distinct groups (always a subset of returning).
    """
    if not log:
        raise ValueError("empty judgment log")
    sessions: dict[str, set[int]] = {}
    groups: dict[str, set[str]] = {}
    for j in log:
        w = j["worker_id"]
        sessions.setdefault(w, set()).add(int(j.get("session", 0)))
        groups.setdefault(w, set()).add(j.get("group_id", ""))
    n = len(sessions)
    returning = sum(1 for s in sessions.values() if len(s) >= 2)
    crossover = sum(
        1 for w, g in groups.items() if len(g) >= 2 and len(sessions[w]) >= 2
    )
    return {
        "returning_fraction": returning / n,
        "crossover_fraction": crossover / n,
        "workers": n,
    }


def dominance(log: list[dict[str, Any]], k: int = 3) -> dict[str, Any]:
    """Judgment share per country, ordered share desc then country asc."""
    counts: dict[str, int] = {}
    for j in log:
        c = j.get("country")
        if c is None:
            raise ValueError("every judgment must carry a country")
        counts[c] = counts.get(c, 0) + 1
    total = sum(counts.values())
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    shares = [(c, n / total) for c, n in ordered]
    return {
        "total": total,
        "per_country": {c: s for c, s in shares},
        "top_k": [{"country": c, "share": s} for c, s in shares[:k]],
        "top_k_share": sum(s for _, s in shares[:k]),
    }


DISCARD_POLICIES = ("drop-returning", "drop-crossover", "drop-untrusted")


def estimate_discard(log: list[dict[str, Any]], policies: set[str]) -> dict[str, Any]:
    """Fraction of judgments a cleanup policy would discard.

    drop-returning and drop-crossover discard every judgment of a matching
    worker (their first session is contaminated for analysis purposes too);
    drop-untrusted discards judgments made while untrusted.
    """
    unknown = set(policies) - set(DISCARD_POLICIES)
    if unknown:
        raise ValueError(f"unknown cleanup policies: {sorted(unknown)}")
    if not log:
        return {"fraction": 0.0, "per_policy": {}, "total": 0}
    sessions: dict[str, set[int]] = {}
    groups: dict[str, set[str]] = {}
    for j in log:
        w = j["worker_id"]
        sessions.setdefault(w, set()).add(int(j.get("session", 0)))
        groups.setdefault(w, set()).add(j.get("group_id", ""))
    returning = {w for w, s in sessions.items() if len(s) >= 2}
    crossover = {w for w in returning if len(groups[w]) >= 2}

    dropped: set[int] = set()
    per_policy: dict[str, int] = {}
    for policy in sorted(policies):
        hits = set()
        for i, j in enumerate(log):
            if policy == "drop-returning" and j["worker_id"] in returning:
                hits.add(i)
            elif policy == "drop-crossover" and j["worker_id"] in crossover:
                hits.add(i)
            elif policy == "drop-untrusted" and not j.get("trusted_at_submission", True):
                hits.add(i)
        per_policy[policy] = len(hits)
        dropped |= hits
    return {
        "fraction": len(dropped) / len(log),
        "per_policy": per_policy,
        "total": len(log),
    }


# -- cohort assignment ------------------------------------------------------------


def assign_cohort(
    part: Participation,
    first_group: str,
    trusted: bool,
    group_kinds: dict[str, str],
) -> str:
    if not trusted:
        return COHORT_UNTRUSTED
    if part.session == 0:
        return COHORT_NEW
    if part.group_id == first_group:
        return COHORT_RETURNING_SAME
    from_kind = group_kinds.get(first_group, "base")
    to_kind = group_kinds.get(part.group_id, "base")
    if from_kind in ("good", "bad") and to_kind == "base":
        return COHORT_SUPPORT_TO_BASE
    if from_kind == "base" and to_kind in ("good", "bad"):
        return COHORT_BASE_TO_SUPPORT
    if from_kind == "bad" and to_kind == "good":
        return COHORT_BAD_TO_GOOD
    return COHORT_OTHER_CROSS


def _participation_trusted(part: Participation) -> bool:
    """Trust standing when the visit ended.

    Early-warmup dips (one missed gold out of three) recover as more gold
    accumulates; classifying by the final judgment keeps a momentary dip
    from relabeling the whole participation, while per-judgment validity
    flags stay strict.
    """
    if not part.judgments:
        return True
    return bool(part.judgments[-1].get("trusted_at_submission", True))


def cohort_partition(
    log: list[dict[str, Any]], group_kinds: dict[str, str]
) -> dict[str, list[Participation]]:
    """Partition participations into cohorts; sizes sum to the total."""
    parts = participations(log)
    first_group: dict[str, str] = {}
    for p in sorted(parts, key=lambda p: p.session):
        first_group.setdefault(p.worker_id, p.group_id)
    out: dict[str, list[Participation]] = {c: [] for c in COHORTS}
    for p in parts:
        cohort = assign_cohort(p, first_group[p.worker_id], _participation_trusted(p), group_kinds)
        out[cohort].append(p)
    return out


def _decision_times(parts: list[Participation], valid_only: bool = False) -> list[float]:
    values = []
    for p in parts:
        for j in p.judgments:
            if valid_only and not j.get("valid", False):
                continue
            values.append(float(j.get("decision_time_s", 0.0)))
    return values


def _worker_accuracies(parts: list[Participation]) -> list[float]:
    per_worker: dict[str, tuple[int, int]] = {}
    for p in parts:
        for j in p.judgments:
            if not j.get("is_gold"):
                continue
            correct, total = per_worker.get(p.worker_id, (0, 0))
            per_worker[p.worker_id] = (correct + (1 if j.get("gold_correct") else 0), total + 1)
    return [c / t for c, t in per_worker.values() if t > 0]


@dataclass(frozen=True)
class ZScoreSummary:
    cohort: str
    metric: str
    median_z: float
    iqr: float
    n: int
    scaling: str = "mad"  # "mad" | "iqr-fallback"

    def to_doc(self) -> dict[str, Any]:
        return {
            "cohort": self.cohort,
            "metric": self.metric,
            "median_z": self.median_z,
            "iqr": self.iqr,
            "n": self.n,
            "scaling": self.scaling,
        }


def _summarize(
    cohort: str, metric: str, values: list[float], reference: list[float], scale: float
) -> tuple[ZScoreSummary | None, bool]:
    """Returns (summary, degenerate_flag)."""
    if len(values) < MIN_COHORT_N:
        return None, False
    try:
        zs = robust_z(values, reference, scale=scale)
        scaling = "mad"
        degenerate = False
    except DegenerateReferenceError:
        try:
            zs = iqr_z(values, reference)
        except DegenerateReferenceError:
            return None, True
        scaling = "iqr-fallback"
        degenerate = True
    zs_sorted = sorted(zs)
    return (
        ZScoreSummary(
            cohort=cohort,
            metric=metric,
            median_z=statistics.median(zs),
            iqr=_quantile(zs_sorted, 0.75) - _quantile(zs_sorted, 0.25),
            n=len(values),
            scaling=scaling,
        ),
        degenerate,
    )


def _z_pool_per_condition(
    parts: list[Participation],
    reference_parts: list[Participation],
    scale: float,
) -> tuple[list[float], bool]:
    """Standardize within each condition against that condition's reference,
    then pool the z-values (the flag-gated alternative to pooled-first)."""
    by_group: dict[str, list[float]] = {}
    for p in parts:
        by_group.setdefault(p.group_id, []).extend(
            float(j.get("decision_time_s", 0.0)) for j in p.judgments
        )
    ref_by_group: dict[str, list[float]] = {}
    for p in reference_parts:
        ref_by_group.setdefault(p.group_id, []).extend(
            float(j.get("decision_time_s", 0.0)) for j in p.judgments if j.get("valid")
        )
    pooled: list[float] = []
    degenerate = False
    for group, values in sorted(by_group.items()):
        reference = ref_by_group.get(group, [])
        if len(reference) < MIN_COHORT_N or not values:
            continue
        try:
            pooled.extend(robust_z(values, reference, scale=scale))
        except DegenerateReferenceError:
            try:
                pooled.extend(iqr_z(values, reference))
                degenerate = True
            except DegenerateReferenceError:
                degenerate = True
    return pooled, degenerate


def build_report(
    log: list[dict[str, Any]],
    config: ReportConfig | None = None,
    window_counts: dict[str, dict[int, int]] | None = None,
) -> dict[str, Any]:
    """Assemble the full bias report; deterministic and JSON-serializable."""
    if not log:
        raise ValueError("empty judgment log")
    config = config or ReportConfig()
    fractions = cohort_fractions(log)
    dom = dominance(log, config.top_k_countries)
    cohorts = cohort_partition(log, config.group_kinds)

    reference_parts = [
        p for p in cohorts[COHORT_NEW] if any(j.get("valid") for j in p.judgments)
    ]
    ref_times = _decision_times(reference_parts, valid_only=True)
    ref_acc = _worker_accuracies(reference_parts)

    z_summaries: list[dict[str, Any]] = []
    degenerate = False
    for cohort_name, parts in cohorts.items():
        if not parts:
            continue
        if config.per_condition_z:
            zs, deg = _z_pool_per_condition(parts, reference_parts, config.mad_scale)
            degenerate = degenerate or deg
            if len(zs) >= MIN_COHORT_N:
                zs_sorted = sorted(zs)
                z_summaries.append(
                    ZScoreSummary(
                        cohort=cohort_name,
                        metric="decision-time",
                        median_z=statistics.median(zs),
                        iqr=_quantile(zs_sorted, 0.75) - _quantile(zs_sorted, 0.25),
                        n=len(zs),
                        scaling="mad-per-condition",
                    ).to_doc()
                )
        else:
            times = _decision_times(parts)
            summary, deg = _summarize(cohort_name, "decision-time", times, ref_times, config.mad_scale)
            degenerate = degenerate or deg
            if summary:
                z_summaries.append(summary.to_doc())
        accs = _worker_accuracies(parts)
        summary, deg = _summarize(cohort_name, "accuracy", accs, ref_acc, config.mad_scale)
        degenerate = degenerate or deg
        if summary:
            z_summaries.append(summary.to_doc())

    discard = estimate_discard(log, {"drop-returning", "drop-crossover", "drop-untrusted"})
    balance = None
    if window_counts is not None and config.n_windows:
        from .scheduling import window_balance

        balance = window_balance(window_counts, config.n_windows)

    return {
        "report_version": REPORT_VERSION,
        "reference_definition": (
            "valid contributions: judgments from trusted, policy-compliant, "
            "first-time participations"
        ),
        "total_judgments": len(log),
        "total_workers": fractions["workers"],
        "returning_worker_fraction": fractions["returning_fraction"],
        "crossover_worker_fraction": fractions["crossover_fraction"],
        "country_dominance": dom,
        "cohort_sizes": {name: len(parts) for name, parts in cohorts.items()},
        "z_summaries": z_summaries,
        "estimated_discard": discard,
        "window_balance": balance,
        "degenerate_reference": degenerate,
        "valid_judgment_count": sum(1 for j in log if j.get("valid")),
    }


def render_text(report: dict[str, Any]) -> str:
    """Plain-text summary table for terminals."""
    lines = [
        f"bias report v{report['report_version']}",
        f"reference: {report['reference_definition']}",
        "",
        f"judgments: {report['total_judgments']}   workers: {report['total_workers']}",
        f"returning workers: {report['returning_worker_fraction']:.1%}",
        f"crossover workers: {report['crossover_worker_fraction']:.1%}",
        f"valid judgments:   {report['valid_judgment_count']}",
        "",
        "top countries by judgment share:",
    ]
    for row in report["country_dominance"]["top_k"]:
        lines.append(f"  {row['country']}: {row['share']:.1%}")
    lines.append(
        f"  top-{len(report['country_dominance']['top_k'])} combined: "
        f"{report['country_dominance']['top_k_share']:.1%}"
    )
    lines.append("")
    lines.append("cohorts (participations):")
    for name, size in report["cohort_sizes"].items():
        if size:
            lines.append(f"  {name}: {size}")
    if report["z_summaries"]:
        lines.append("")
        lines.append(f"{'cohort':<18} {'metric':<14} {'median z':>9} {'IQR':>7} {'n':>6}")
        for s in report["z_summaries"]:
            lines.append(
                f"{s['cohort']:<18} {s['metric']:<14} {s['median_z']:>9.3f} "
                f"{s['iqr']:>7.3f} {s['n']:>6}"
            )
    discard = report["estimated_discard"]
    lines.append("")
    lines.append(f"estimated discard under full cleanup: {discard['fraction']:.1%}")
    for policy, count in sorted(discard["per_policy"].items()):
        lines.append(f"  {policy}: {count} judgments")
    if report.get("window_balance"):
        lines.append(f"window balance score: {report['window_balance']['score']:.3f}")
    if report.get("degenerate_reference"):
        lines.append("warning: degenerate reference; IQR fallback scaling used")
    return "\n".join(lines) + "\n"


def report_json(report: dict[str, Any]) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
