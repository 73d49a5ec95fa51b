"""Distributions, cross-tabs, diversity scores and session statistics."""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import entropy as _scipy_entropy
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dialogue import SUCCESS, DialogueSession
from .generator import persona_values, sorted_counts
from .persona import Persona, PersonaTemplate, template_default
from .validation import EmptyInput, UnknownAttribute, check_attribute, check_personas

# Reported enrolment shares used as the reference population for gender.
TUB_GENDER_REFERENCE = {"male": 0.652, "female": 0.347, "diverse": 0.001}

PROB_TOLERANCE = 1e-9


class EmptyDistribution(ValueError):
    pass


class MissingExpectedCategory(KeyError):
    pass


class OrphanSession(KeyError):
    pass


@dataclass(frozen=True)
class Distribution:
    attribute: str
    counts: Mapping[str, int]
    total: int

    def __post_init__(self):
        if self.total != sum(self.counts.values()):
            raise ValueError("total must equal the sum of counts")

    def sorted(self) -> list[tuple[str, int]]:
        return sorted_counts(self.counts)


def _values(p: Persona, attribute: str) -> list[str]:
    return persona_values(p, attribute)


def attribute_distribution(personas: Iterable[Persona], attribute: str) -> Distribution:
    attribute = check_attribute(attribute)
    counts: Counter = Counter()
    for p in check_personas(personas):
        counts.update(_values(p, attribute))
    return Distribution(attribute, dict(counts), sum(counts.values()))


@dataclass(frozen=True)
class TimePoint:
    index: int
    persona_id: str
    value: str | tuple[str, ...]
    cumulative: Mapping[str, int]


def distribution_over_time(personas: Sequence[Persona], attribute: str) -> list[TimePoint]:
    """Per-persona values in generation order with running counts (1-based index)."""
    attribute = check_attribute(attribute)
    running: Counter = Counter()
    series = []
    for i, p in enumerate(check_personas(personas), 1):
        values = _values(p, attribute)
        running.update(values)
        value = values[0] if len(values) == 1 else tuple(values)
        series.append(TimePoint(i, p.id, value, dict(running)))
    return series


@dataclass(frozen=True)
class CrossTab:
    row_attr: str
    col_attr: str
    cells: Mapping[tuple[str, str], int]
    top_n: int | None = None

    def row_values(self) -> list[str]:
        return sorted({r for r, _ in self.cells})

    def row(self, value: str) -> dict[str, int]:
        return {c: n for (r, c), n in self.cells.items() if r == value}

    def top(self, value: str, n: int | None = None) -> list[tuple[str, int]]:
        n = self.top_n if n is None else n
        ranked = sorted_counts(self.row(value))
        return ranked if n is None else ranked[:n]

    def row_marginals(self) -> dict[str, int]:
        out: Counter = Counter()
        for (r, _), n in self.cells.items():
            out[r] += n
        return dict(out)

    def col_marginals(self) -> dict[str, int]:
        out: Counter = Counter()
        for (_, c), n in self.cells.items():
            out[c] += n
        return dict(out)


def cross_tab(personas: Iterable[Persona], row_attr: str, col_attr: str, top_n: int | None = None) -> CrossTab:
    """Count co-occurrences; multi-valued attributes count each distinct value once per persona."""
    row_attr, col_attr = check_attribute(row_attr), check_attribute(col_attr)
    cells: Counter = Counter()
    for p in check_personas(personas):
        for r in _values(p, row_attr):
            for c in _values(p, col_attr):
                cells[(r, c)] += 1
    return CrossTab(row_attr, col_attr, dict(cells), top_n)


@dataclass(frozen=True)
class DiversityScore:
    attribute: str
    entropy_bits: float
    normalized_entropy: float
    chi_square_uniform: float | None = None
    chi_square_reference: float | None = None
    n_values: int = 0


def shannon_entropy(d: Distribution) -> DiversityScore:
    """Entropy in bits of the empirical distribution, normalised by log2 of the observed support."""
    counts = np.array([c for c in d.counts.values() if c > 0], dtype=float)
    if d.total <= 0 or counts.size == 0:
        raise EmptyDistribution(f"distribution of {d.attribute!r} is empty")
    h = float(_scipy_entropy(counts, base=2))
    k = counts.size
    normalized = h / math.log2(k) if k >= 2 else 0.0
    return DiversityScore(d.attribute, max(h, 0.0), min(max(normalized, 0.0), 1.0), n_values=k)


def chi_square(d: Distribution, expected: Mapping[str, float]) -> float:
    """Pearson statistic of the observed counts against category probabilities."""
    total_p = math.fsum(expected.values())
    if abs(total_p - 1.0) > PROB_TOLERANCE:
        raise ValueError(f"expected probabilities sum to {total_p}, not 1")
    if any(p < 0 for p in expected.values()):
        raise ValueError("expected probabilities must be non-negative")
    for value, count in d.counts.items():
        if count and expected.get(value, 0.0) <= 0.0:
            raise MissingExpectedCategory(value)
    cats = [c for c, p in expected.items() if p > 0]
    observed = np.array([d.counts.get(c, 0) for c in cats], dtype=float)
    exp = np.array([expected[c] for c in cats], dtype=float) * d.total
    return float(np.sum((observed - exp) ** 2 / exp))


def uniform(support: Iterable[str]) -> dict[str, float]:
    support = list(dict.fromkeys(support))
    return {v: 1.0 / len(support) for v in support}


def diversity_score(
    d: Distribution,
    support: Iterable[str] | None = None,
    reference: Mapping[str, float] | None = None,
) -> DiversityScore:
    """Entropy plus chi-square against a uniform over ``support`` (default: observed values)."""
    base = shannon_entropy(d)
    support = list(support) if support is not None else list(d.counts)
    support = list(dict.fromkeys([*support, *(v for v, c in d.counts.items() if c)]))
    chi_u = chi_square(d, uniform(support))
    chi_r = chi_square(d, reference) if reference is not None else None
    return DiversityScore(
        d.attribute, base.entropy_bits, base.normalized_entropy, chi_u, chi_r, base.n_values
    )


@dataclass(frozen=True)
class SessionMetrics:
    n_sessions: int
    n_success: int
    success_rate: float
    avg_total_turns_success: float | None
    avg_user_turns_success: float | None
    avg_user_words_by_comm_type: Mapping[str, float] = field(default_factory=dict)
    n_user_utterances_by_comm_type: Mapping[str, int] = field(default_factory=dict)
    outcomes: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["avg_user_words_by_comm_type"] = dict(self.avg_user_words_by_comm_type)
        out["n_user_utterances_by_comm_type"] = dict(self.n_user_utterances_by_comm_type)
        out["outcomes"] = dict(self.outcomes)
        return out


def round_half_up(x: float, places: int = 2) -> float:
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def word_count(utterance: str) -> int:
    return len(utterance.split())


def _persona_index(sessions: Sequence[DialogueSession], personas: Iterable[Persona]) -> dict[str, Persona]:
    index = {p.id: p for p in check_personas(personas)}
    for s in sessions:
        if s.persona_id not in index:
            raise OrphanSession(f"session {s.session_id} refers to unknown persona {s.persona_id!r}")
    return index


def session_metrics(sessions: Sequence[DialogueSession], personas: Iterable[Persona]) -> SessionMetrics:
    sessions = list(sessions)
    if not sessions:
        raise EmptyInput("no sessions to summarise")
    index = _persona_index(sessions, personas)
    successes = [s for s in sessions if s.outcome == SUCCESS]
    n_success = len(successes)
    rate = round_half_up(100.0 * n_success / len(sessions), 2)

    words: Counter = Counter()
    utterances: Counter = Counter()
    for s in sessions:
        style = index[s.persona_id].communication_type
        for t in s.turns:
            if t.speaker == "user":
                words[style] += word_count(t.utterance)
                utterances[style] += 1
    avg_words = {style: words[style] / utterances[style] for style in sorted(utterances)}

    avg_total = sum(s.total_turn_count for s in successes) / n_success if successes else None
    avg_user = sum(s.user_turn_count for s in successes) / n_success if successes else None
    return SessionMetrics(
        n_sessions=len(sessions),
        n_success=n_success,
        success_rate=rate,
        avg_total_turns_success=avg_total,
        avg_user_turns_success=avg_user,
        avg_user_words_by_comm_type=avg_words,
        n_user_utterances_by_comm_type=dict(sorted(utterances.items())),
        outcomes=dict(sorted(Counter(s.outcome for s in sessions).items())),
    )


FACETS = {"secondary_goal": "secondary_goals", "general_interest": "general_interests"}


def goal_outcome_table(
    sessions: Sequence[DialogueSession],
    personas: Iterable[Persona],
    facet: str,
    achieved: bool,
    top_n: int | None = 3,
) -> list[tuple[str, int]]:
    if facet not in FACETS:
        raise ValueError(f"facet must be one of {sorted(FACETS)}")
    index = _persona_index(sessions, personas)
    counts: Counter = Counter()
    for s in sessions:
        if (s.outcome == SUCCESS) == achieved:
            counts.update(persona_values(index[s.persona_id], FACETS[facet]))
    ranked = sorted_counts(counts)
    return ranked if top_n is None else ranked[:top_n]


class DistributionProfiler(TransformerMixin, BaseEstimator):
    """Fit attribute distributions on one persona population, score others against it.

    ``transform`` returns one row per attribute with columns
    ``entropy_bits``, ``normalized_entropy`` and ``chi_square_fitted``
    (the new population against the fitted distribution; NaN when it has
    values the fitted population never produced).
    """

    def __init__(self, attributes=("gender", "region", "desired_degree", "communication_type")):
        self.attributes = attributes

    def fit(self, X, y=None):
        personas = check_personas(X, allow_empty=False)
        self.attributes_ = tuple(check_attribute(a) for a in self.attributes)
        self.distributions_ = {a: attribute_distribution(personas, a) for a in self.attributes_}
        self.expected_ = {
            a: {v: c / d.total for v, c in d.counts.items()} for a, d in self.distributions_.items()
        }
        self.scores_ = {a: shannon_entropy(d) for a, d in self.distributions_.items()}
        self.n_personas_ = len(personas)
        return self

    def transform(self, X):
        check_is_fitted(self)
        personas = check_personas(X, allow_empty=False)
        rows = []
        for a in self.attributes_:
            d = attribute_distribution(personas, a)
            h = shannon_entropy(d)
            try:
                chi = chi_square(d, self.expected_[a])
            except MissingExpectedCategory:
                chi = float("nan")
            rows.append([h.entropy_bits, h.normalized_entropy, chi])
        return np.array(rows, dtype=float)

    def get_feature_names_out(self, input_features=None):
        return np.array(["entropy_bits", "normalized_entropy", "chi_square_fitted"], dtype=object)


# --------------------------------------------------------------------------- report bundle

REPORT_DISTRIBUTIONS = (
    "age", "gender", "region", "nationality", "desired_degree", "language_preference",
    "communication_type", "openness", "conscientiousness", "extraversion", "agreeableness",
    "neuroticism", "general_interests", "secondary_goals",
)
OVER_TIME = ("gender", "region")
CROSS_TABS = (("gender", "general_interests", 5), ("region", "general_interests", 2))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _write_json(path: Path, data) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    os.replace(tmp, path)


def _short(attr: str) -> str:
    return "interests" if attr == "general_interests" else attr


def write_report(
    personas: Sequence[Persona],
    sessions: Sequence[DialogueSession] | None,
    out_dir,
    template: PersonaTemplate | None = None,
) -> dict:
    """Write the CSV tables and ``summary.json``; returns the summary.

    File names:
    ``distribution_<attr>.csv``, ``over_time_<attr>.csv``,
    ``crosstab_<row>_x_interests.csv``, ``top<N>_interests_by_<row>.csv``,
    ``goal_outcome_<facet>_<achieved|not_achieved>.csv`` and ``summary.json``.
    """
    personas = check_personas(personas, allow_empty=False)
    template = template or template_default()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []

    diversity = {}
    for attr in REPORT_DISTRIBUTIONS:
        d = attribute_distribution(personas, attr)
        name = f"distribution_{_short(attr)}.csv"
        _write_csv(out / name, ["value", "count"], d.sorted())
        files.append(name)
        support = template.enum_fields.get(attr)
        if support is None and attr in template.numeric_fields and attr != "age":
            lo, hi = template.numeric_fields[attr]
            support = [str(v) for v in range(lo, hi + 1)]
        reference = TUB_GENDER_REFERENCE if attr == "gender" else None
        score = diversity_score(d, support=support, reference=reference)
        diversity[attr] = asdict(score)

    for attr in OVER_TIME:
        series = distribution_over_time(personas, attr)
        values = sorted({v for tp in series for v in tp.cumulative})
        name = f"over_time_{attr}.csv"
        _write_csv(
            out / name,
            ["index", "persona_id", "value", *values],
            ([tp.index, tp.persona_id, tp.value, *(tp.cumulative.get(v, 0) for v in values)] for tp in series),
        )
        files.append(name)

    for row_attr, col_attr, n in CROSS_TABS:
        ct = cross_tab(personas, row_attr, col_attr, top_n=n)
        name = f"crosstab_{row_attr}_x_{_short(col_attr)}.csv"
        _write_csv(out / name, [row_attr, _short(col_attr), "count"],
                   sorted(((r, c, k) for (r, c), k in ct.cells.items()), key=lambda x: (x[0], -x[2], x[1])))
        files.append(name)
        name = f"top{n}_{_short(col_attr)}_by_{row_attr}.csv"
        _write_csv(
            out / name,
            [row_attr, "rank", _short(col_attr), "count"],
            ([r, i, v, k] for r in ct.row_values() for i, (v, k) in enumerate(ct.top(r), 1)),
        )
        files.append(name)

    summary = {
        "n_personas": len(personas),
        "diversity": diversity,
        "gender_reference": TUB_GENDER_REFERENCE,
    }
    if sessions:
        metrics = session_metrics(sessions, personas)
        summary["session_metrics"] = metrics.to_dict()
        summary["success_rate"] = metrics.success_rate
        for facet in FACETS:
            for achieved in (True, False):
                table = goal_outcome_table(sessions, personas, facet, achieved, top_n=3)
                name = f"goal_outcome_{facet}_{'achieved' if achieved else 'not_achieved'}.csv"
                _write_csv(out / name, [facet, "count"], table)
                files.append(name)
    else:
        summary["session_metrics"] = None
    summary["files"] = sorted(files)
    _write_json(out / "summary.json", summary)
    return summary
