"""Input checks shared by the analytics functions and estimators."""

from __future__ import annotations

import os
from typing import Iterable

from .generator import MULTI_VALUED, SINGLE_VALUED
from .persona import Persona, read_personas

ATTRIBUTE_ALIASES = {"interests": "general_interests", "secondary_goal": "secondary_goals", "general_interest": "general_interests"}
ATTRIBUTES = SINGLE_VALUED + MULTI_VALUED


class UnknownAttribute(KeyError):
    pass


class EmptyInput(ValueError):
    pass


def check_attribute(name: str) -> str:
    """Resolve aliases and reject attributes outside the persona schema."""
    canonical = ATTRIBUTE_ALIASES.get(name, name)
    if canonical not in ATTRIBUTES:
        raise UnknownAttribute(f"unknown persona attribute {name!r}; known: {', '.join(ATTRIBUTES)}")
    return canonical


def is_multi_valued(name: str) -> bool:
    return check_attribute(name) in MULTI_VALUED


def check_personas(X, *, allow_empty: bool = True) -> list[Persona]:
    if isinstance(X, (str, os.PathLike)):
        personas = read_personas(X)
    elif isinstance(X, Persona):
        raise TypeError("expected a collection of personas, got a single Persona")
    elif isinstance(X, Iterable):
        personas = list(X)
        bad = [type(p).__name__ for p in personas if not isinstance(p, Persona)]
        if bad:
            raise TypeError(f"expected Persona objects, got {sorted(set(bad))}")
    else:
        raise TypeError(f"cannot read personas from {type(X).__name__}")
    if not allow_empty and not personas:
        raise EmptyInput("no personas given")
    return personas
