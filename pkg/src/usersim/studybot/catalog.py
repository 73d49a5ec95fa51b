from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

ATTRIBUTE_NAMES = (
    "program_description",
    "ects_points",
    "admission_requirements",
    "admission_restriction",
    "standard_period_of_study",
    "language_of_instruction",
    "start_of_studies",
    "application_deadline",
    "module_contents",
    "acquired_skills",
    "structure_of_the_program",
    "career_prospects",
    "faculty",
    "tuition_fees",
    "study_location",
    "contact",
)
N_ATTRIBUTES = len(ATTRIBUTE_NAMES)


class CatalogError(ValueError):
    pass


class MalformedRecord(CatalogError):
    pass


class EmptyCatalog(CatalogError):
    pass


@dataclass(frozen=True)
class ProgramRecord:
    name: str
    degree_type: str
    attributes: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))
        if not self.degree_type:
            raise MalformedRecord(f"program {self.name!r} has no degree_type")


@dataclass(frozen=True)
class ProgramCatalog:
    programs: tuple[ProgramRecord, ...]
    attribute_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "programs", tuple(self.programs))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        names = [p.name for p in self.programs]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise MalformedRecord(f"duplicate program names: {dupes}")
        for p in self.programs:
            missing = set(self.attribute_names) - set(p.attributes)
            if missing:
                raise MalformedRecord(f"{p.name!r} lacks attributes {sorted(missing)}")
        object.__setattr__(self, "_by_name", {p.name: p for p in self.programs})

    def __len__(self):
        return len(self.programs)

    def __contains__(self, name):
        return name in self._by_name

    def get(self, name: str) -> ProgramRecord | None:
        return self._by_name.get(name)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.programs]

    @property
    def degree_types(self) -> list[str]:
        return sorted({p.degree_type for p in self.programs})


def _records_from_rows(rows):
    for lineno, row in rows:
        name = (row.get("name") or "").strip()
        if not name:
            raise MalformedRecord(f"record {lineno} has no name")
        degree = (row.get("degree_type") or "").strip()
        attrs = {k: "" if v is None else str(v) for k, v in row.items() if k not in ("name", "degree_type")}
        yield name, degree, attrs


def load_catalog(source, expected_attributes: int | None = None) -> ProgramCatalog:
    """Read a CSV or JSONL program file (one record per program).

    Attribute names come from the CSV header or the first JSONL record.
    ``expected_attributes`` enforces the attribute count.
    """
    path = Path(source)
    if path.suffix.lower() in (".jsonl", ".json"):
        with open(path, encoding="utf-8") as fh:
            rows = [(i, json.loads(line)) for i, line in enumerate(fh, 1) if line.strip()]
        header = [k for k in rows[0][1] if k not in ("name", "degree_type")] if rows else []
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(enumerate(reader, 2))
            header = [k for k in (reader.fieldnames or []) if k not in ("name", "degree_type")]
    if not rows:
        raise EmptyCatalog(f"{path} holds no programs")
    if expected_attributes is not None and len(header) != expected_attributes:
        raise MalformedRecord(
            f"{path} has {len(header)} attributes, expected {expected_attributes}"
        )
    programs = [
        ProgramRecord(name, degree, {k: attrs.get(k, "") for k in header})
        for name, degree, attrs in _records_from_rows(rows)
    ]
    return ProgramCatalog(programs, header)


def desk_catalog_path() -> Path:
    return Path(str(resources.files("usersim") / "data" / "catalog_desk.csv"))


def load_desk_catalog() -> ProgramCatalog:
    """The bundled 12-program catalog with all 16 attributes."""
    return load_catalog(desk_catalog_path(), expected_attributes=N_ATTRIBUTES)
