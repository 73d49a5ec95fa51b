import json
from pathlib import Path

import pytest

from usersim.dialogue import read_sessions
from usersim.persona import Persona, read_personas, template_default
from usersim.studybot import load_desk_catalog

DATA = Path(__file__).resolve().parents[1] / "src" / "usersim" / "data"
CAMPAIGN = DATA / "campaign"


def make_persona(**overrides) -> Persona:
    base = dict(
        id="p-001",
        age=24,
        gender="female",
        region="german",
        nationality="German",
        desired_degree="Master",
        language_preference="English",
        communication_type="formal",
        personality={"openness": 3, "conscientiousness": 4, "extraversion": 2, "agreeableness": 4, "neuroticism": 2},
        general_interests=("renewable_energy", "urban_planning"),
        secondary_goals=("module_contents", "admission_requirements"),
        initial_knowledge="Has a bachelor in civil engineering.",
        created_at="2025-01-01T00:00:00.000+00:00",
        generator_model="test",
    )
    base.update(overrides)
    return Persona(**base)


def persona_json(**overrides) -> str:
    """The JSON an LLM would return for ``make_persona(**overrides)``."""
    d = make_persona(**overrides).to_dict()
    for key in ("id", "created_at", "generator_model"):
        d.pop(key)
    return json.dumps(d)


@pytest.fixture
def template():
    return template_default()


@pytest.fixture
def persona():
    return make_persona()


@pytest.fixture(scope="session")
def catalog():
    return load_desk_catalog()


@pytest.fixture(scope="session")
def o1_personas():
    return read_personas(DATA / "personas_gpt-o1.jsonl")


@pytest.fixture(scope="session")
def gpt4o_personas():
    return read_personas(DATA / "personas_gpt-4o.jsonl")


@pytest.fixture(scope="session")
def campaign_personas():
    return read_personas(CAMPAIGN / "personas.jsonl")


@pytest.fixture(scope="session")
def campaign_sessions():
    return read_sessions(CAMPAIGN / "sessions.jsonl")


def _template_regex(template: str, choices: dict):
    import re

    parts = re.split(r"\{(\w+)\}", template)
    out = []
    for i, part in enumerate(parts):
        if i % 2 == 0:
            out.append(re.escape(part))
        elif part in choices:
            alts = "|".join(re.escape(c) for c in sorted(choices[part], key=len, reverse=True))
            out.append(f"(?P<{part}>{alts})")
        else:
            out.append(f"(?P<{part}>.+?)")
    return re.compile("^" + "".join(out) + "$", re.S)


def audit_response(text: str, catalog) -> list[str]:
    """Return the factual fragments of a template-mode reply missing from the catalog.

    The reply must match one of the bot templates exactly; every slot value
    is checked against the catalog verbatim.
    """
    from usersim.studybot.bot import ATTRIBUTE_LABELS, TEMPLATES

    choices = {
        "label": list(ATTRIBUTE_LABELS.values()),
        "name": [p.name for p in catalog.programs],
        "degree": sorted({p.degree_type for p in catalog.programs}),
    }
    values = {v for p in catalog.programs for v in p.attributes.values()}
    for key, template in TEMPLATES.items():
        m = _template_regex(template, choices).match(text)
        if not m:
            continue
        missing = []
        for slot, value in m.groupdict().items():
            if slot == "n":
                ok = value.isdigit()
            elif slot == "names":
                ok = all(n in choices["name"] for n in value.split(", "))
            elif slot == "value":
                ok = value in values
            else:
                ok = True  # constrained by the pattern itself
            if not ok:
                missing.append(f"{key}.{slot}={value!r}")
        return missing
    return [f"unmatched reply {text!r}"]


# -- acceptance reporting ---------------------------------------------------
# Tests marked ``acceptance(n, label)`` get one PASS/FAIL line in the terminal
# summary, taken from the real test outcome. ``record_property("detail", ...)``
# adds the measured numbers to the line.

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, label = marker.args
        detail = dict(item.user_properties).get("detail", "")
        status = "PASS" if rep.passed else "FAIL"
        line = f"criterion {n} {status}: {label}" + (f" [{detail}]" if detail else "")
        item.config.stash[_ACCEPTANCE].append((n, line))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(config.stash.get(_ACCEPTANCE, []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in lines:
            terminalreporter.write_line(line)
