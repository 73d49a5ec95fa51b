"""Keyword-lexicon intent recognizer with program/degree entity extraction.

The recognizer follows the scikit-learn estimator API: ``fit`` indexes a
program catalog, ``predict`` maps utterances to intent labels, and
``score`` (from :class:`~sklearn.base.ClassifierMixin`) gives accuracy on
labelled utterances.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .catalog import ProgramCatalog

FALLBACK = "fallback"

DEFAULT_LEXICON: dict[str, tuple[str, ...]] = {
    "program_description": ("tell me about", "describe", "description", "overview", "more about", "what is"),
    "ects_points": ("ects", "ects points", "credit points", "credits"),
    "admission_requirements": (
        "admission requirements", "requirements", "requirement", "prerequisites", "eligible", "qualifications",
    ),
    "admission_restriction": (
        "admission restriction", "admission restrictions", "restricted", "restriction", "numerus clausus", "nc",
    ),
    "standard_period_of_study": ("how long", "duration", "semesters", "period of study", "standard period"),
    "language_of_instruction": ("language of instruction", "taught in", "language", "languages"),
    "start_of_studies": ("start of studies", "start", "begin", "starting"),
    "application_deadline": ("deadline", "application deadline", "apply by", "when to apply", "apply"),
    "module_contents": ("module contents", "modules", "module", "courses", "curriculum", "subjects"),
    "acquired_skills": ("skills", "acquired skills", "learn", "competencies", "competences"),
    "structure_of_the_program": ("structure", "program structure", "study plan", "organized", "organised"),
    "career_prospects": ("career", "careers", "career prospects", "job", "jobs", "work after"),
    "faculty": ("faculty", "department"),
    "tuition_fees": ("tuition", "tuition fees", "fees", "fee", "cost", "how much"),
    "study_location": ("location", "campus", "where is", "located"),
    "contact": ("contact", "email", "advisor", "advisory", "phone"),
    "list_programs": ("programs", "programmes", "study programs", "which programs", "list", "offer", "options"),
    "search_by_interest": ("interested in", "interest", "interests", "related to", "passionate about"),
    "greeting": ("hello", "hi", "hey", "good morning", "good evening"),
    "goodbye": ("thank you", "thanks", "bye", "goodbye"),
}

ATTRIBUTE_INTENTS = frozenset(
    k for k in DEFAULT_LEXICON
    if k not in ("list_programs", "search_by_interest", "greeting", "goodbye")
)

DEGREE_ALIASES = {
    "bachelor": "Bachelor",
    "bachelors": "Bachelor",
    "bachelor's": "Bachelor",
    "undergraduate": "Bachelor",
    "master": "Master",
    "masters": "Master",
    "master's": "Master",
    "graduate": "Master",
}

STOPWORDS = frozenset(
    """a about all am an and any are as at be can could do does for from have i i'm
    in is it its like me more my of on or please show some study studies that the
    there these this to university want what which with would you your program
    degree tu berlin also really know interested looking find offered available
    related get give tell""".split()
)

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _phrase_pattern(phrase: str) -> re.Pattern:
    return re.compile(r"(?<![a-z0-9])" + re.escape(phrase.lower()) + r"(?![a-z0-9])")


@dataclass(frozen=True)
class DialogueAct:
    intent: str
    entities: Mapping[str, str] = field(default_factory=dict)
    confidence: float = 0.0

    def __post_init__(self):
        if not self.intent:
            raise ValueError("intent must be non-empty")
        object.__setattr__(self, "entities", MappingProxyType(dict(self.entities)))

    def to_dict(self) -> dict:
        return {"intent": self.intent, "entities": dict(self.entities), "confidence": self.confidence}


class IntentRecognizer(ClassifierMixin, BaseEstimator):
    """Rule-based intent and entity recognizer.

    Parameters
    ----------
    lexicon : dict, optional
        Intent name to keyword phrases. Defaults to :data:`DEFAULT_LEXICON`.
    carry_over : bool
        Fill a missing program entity from the dialogue state.
    """

    def __init__(self, lexicon=None, carry_over=True):
        self.lexicon = lexicon
        self.carry_over = carry_over

    def fit(self, X: ProgramCatalog, y=None):
        if not isinstance(X, ProgramCatalog):
            raise TypeError(f"fit expects a ProgramCatalog, got {type(X).__name__}")
        lexicon = self.lexicon if self.lexicon is not None else DEFAULT_LEXICON
        self.keyword_patterns_ = [
            (intent, kw, _phrase_pattern(kw))
            for intent, kws in sorted(lexicon.items())
            for kw in kws
        ]
        # longest names first so "Computer Science" is never shadowed by a shorter prefix
        self.program_patterns_ = [
            (name, _phrase_pattern(name)) for name in sorted(X.names, key=lambda n: (-len(n), n))
        ]
        self.degree_patterns_ = [(alias, canon, _phrase_pattern(alias)) for alias, canon in DEGREE_ALIASES.items()]
        self.catalog_ = X
        self.list_keywords_ = frozenset(t for kw in lexicon.get("list_programs", ()) for t in tokenize(kw))
        self.interest_keywords_ = frozenset(
            t for kw in lexicon.get("search_by_interest", ()) for t in tokenize(kw)
        )
        self.classes_ = np.array(sorted({*lexicon, FALLBACK}))
        return self

    def _match_intent(self, text: str) -> tuple[str, str]:
        best_intent, best_kw = FALLBACK, ""
        for intent, kw, pattern in self.keyword_patterns_:
            if not pattern.search(text):
                continue
            if len(kw) > len(best_kw) or (len(kw) == len(best_kw) and intent < best_intent):
                best_intent, best_kw = intent, kw
        return best_intent, best_kw

    def _residual_terms(self, text: str, consumed: list[str]) -> list[str]:
        for span in consumed:
            text = _phrase_pattern(span).sub(" ", text)
        skip = STOPWORDS | self.list_keywords_ | self.interest_keywords_ | set(DEGREE_ALIASES)
        return [t for t in tokenize(text) if t not in skip and len(t) > 1]

    def recognize(self, utterance: str, state=None) -> DialogueAct:
        check_is_fitted(self)
        text = (utterance or "").lower().strip()
        if not text:
            return DialogueAct(FALLBACK, {}, 0.0)

        entities: dict[str, str] = {}
        consumed: list[str] = []
        for name, pattern in self.program_patterns_:
            if pattern.search(text):
                entities["program"] = name
                consumed.append(name.lower())
                break
        for alias, canon, pattern in self.degree_patterns_:
            if pattern.search(text):
                entities["degree"] = canon
                break

        intent, keyword = self._match_intent(text)
        if keyword:
            consumed.append(keyword)

        if intent == "list_programs" and "program" not in entities:
            terms = self._residual_terms(text, consumed)
            if terms:
                intent = "search_by_interest"
        if intent == "search_by_interest":
            terms = self._residual_terms(text, consumed)
            if terms:
                entities["keywords"] = " ".join(terms)
            elif "program" not in entities:
                intent = "list_programs"
        if intent in (FALLBACK, "list_programs", "search_by_interest") and "program" in entities:
            intent = "program_description"
        if intent in (FALLBACK, "greeting") and "degree" in entities:
            intent = "list_programs"

        if (
            self.carry_over
            and intent in ATTRIBUTE_INTENTS
            and "program" not in entities
            and state is not None
            and getattr(state, "active_program", None)
        ):
            entities["program"] = state.active_program

        if intent == FALLBACK and not entities:
            return DialogueAct(FALLBACK, {}, 0.0)
        matched = len(keyword) + sum(len(v) for k, v in entities.items() if k != "keywords")
        confidence = round(min(1.0, 0.5 + 0.5 * matched / max(len(text), 1)), 4)
        return DialogueAct(intent, entities, confidence)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        if isinstance(X, str):
            raise TypeError("predict expects a sequence of utterances, not a single string")
        return np.array([self.recognize(u).intent for u in X], dtype=object)


def recognize(utterance: str, catalog: ProgramCatalog, state=None) -> DialogueAct:
    return _recognizer_for(catalog).recognize(utterance, state)


_CACHE: dict[int, IntentRecognizer] = {}


def _recognizer_for(catalog: ProgramCatalog) -> IntentRecognizer:
    key = id(catalog)
    rec = _CACHE.get(key)
    if rec is None or rec.catalog_ is not catalog:
        rec = IntentRecognizer().fit(catalog)
        _CACHE[key] = rec
    return rec
