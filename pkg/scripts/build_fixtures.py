#!/usr/bin/env python3
"""Rebuild the bundled persona corpora and the 57-session scripted campaign.

The corpora are reconstructions: marginals and top-N tables are pinned to
published counts, every other value is drawn from a seeded RNG. Interest
and goal assignments are found with a small simulated-annealing search
over count constraints. Run from the repository root:

    python scripts/build_fixtures.py
"""

from __future__ import annotations

import json
import math
import random
import shutil
import sys
import tempfile
from collections import Counter
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "usersim" / "data"
CAMPAIGN = DATA / "campaign"
SEED = 20250101

PRIMARY = "find_relevant_study_programs"
GOALS = ["module_contents", "acquired_skills", "admission_requirements", "admission_restriction", "structure_of_the_program"]
DIMS = ["openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"]
REGIONS = ["asian", "non-german european", "south-american", "north-american", "african",
           "middle_east", "south-east asian", "australian", "german"]

NATIONALITIES = {
    "asian": ["Indian", "Chinese", "Japanese", "Korean", "Pakistani", "Bangladeshi"],
    "non-german european": ["French", "Italian", "Spanish", "Polish", "Dutch", "Swedish", "Greek", "Portuguese"],
    "south-american": ["Brazilian", "Argentinian", "Colombian", "Chilean", "Peruvian"],
    "north-american": ["American", "Canadian", "Mexican"],
    "african": ["Nigerian", "Kenyan", "Ghanaian", "Egyptian", "Ethiopian", "South African"],
    "middle_east": ["Turkish", "Iranian", "Lebanese", "Jordanian", "Emirati"],
    "south-east asian": ["Vietnamese", "Indonesian", "Thai", "Filipino", "Malaysian"],
    "australian": ["Australian", "New Zealander"],
    "german": ["German"],
}

# ---------------------------------------------------------------- published tables

O1_GENDER_TOP5 = {
    "female": {"urban_planning": 9, "cybersecurity": 8, "architecture": 8, "computer_science": 7, "environmental_engineering": 6},
    "male": {"telecommunications_engineering": 7, "robotics": 7, "renewable_energy": 6, "industrial_engineering": 6, "mechanical_engineering": 6},
    "diverse": {"architecture": 3, "urban_planning": 3, "media_informatics": 3, "civil_engineering": 2, "cybersecurity": 1},
}
O1_REGION_TOP2 = {
    "asian": {"artificial_intelligence": 6, "cybersecurity": 3},
    "non-german european": {"urban_planning": 5, "architecture": 4},
    "south-american": {"civil_engineering": 3, "environmental_engineering": 3},
    "north-american": {"data_science": 3, "media_informatics": 3},
    "african": {"industrial_engineering": 4, "architecture": 3},
    "middle_east": {"mechanical_engineering": 3, "machine_learning": 2},
    "south-east asian": {"urban_planning": 4, "environmental_engineering": 3},
    "australian": {"media_informatics": 3, "robotics": 3},
    "german": {"cybersecurity": 3, "robotics": 2},
}
GPT4O_GENDER_TOP5 = {
    "female": {"urban_planning": 30, "climate_change": 24, "artificial_intelligence": 20, "sustainable_architecture": 18, "renewable_energy": 16},
    "male": {"renewable_energy": 18, "urban_planning": 11, "robotics": 11, "artificial_intelligence": 11, "sustainable_architecture": 10},
    "diverse": {"climate_change": 3, "sustainable_architecture": 2, "robotics": 2, "artificial_intelligence": 2, "renewable_energy": 1},
}
GPT4O_REGION_TOP2 = {
    "asian": {"artificial_intelligence": 16, "robotics": 11},
    "non-german european": {"urban_planning": 20, "sustainable_architecture": 14},
    "south-american": {"renewable_energy": 2, "sustainable_architecture": 2},
    "north-american": {"artificial_intelligence": 3, "robotics": 3},
    "african": {"renewable_energy": 15, "climate_change": 14},
    "middle_east": {"climate_change": 2, "urban_planning": 1},
    "south-east asian": {"artificial_intelligence": 4, "robotics": 4},
    "australian": {"climate_change": 1, "sustainable_architecture": 1},
    "german": {"robotics": 1, "artificial_intelligence": 1},
}
INTERESTS_BY_OUTCOME = {
    True: {"renewable_energy": 7, "environmental_engineering": 7, "telecommunications_engineering": 6},
    False: {"software_engineering": 3, "computer_science": 3, "electrical_engineering": 2},
}
GOALS_BY_OUTCOME = {
    True: {"module_contents": 20, "acquired_skills": 16, "admission_requirements": 15},
    False: {"admission_restriction": 4, "module_contents": 3, "structure_of_the_program": 3},
}

O1_FILLERS = [
    "aerospace_engineering", "biomedical_engineering", "biotechnology", "business_informatics",
    "chemical_engineering", "economics", "energy_systems", "game_design", "geodesy",
    "human_computer_interaction", "landscape_architecture", "materials_science", "mathematics",
    "physics", "process_engineering", "product_design", "quantum_computing", "sociology",
    "transportation_planning", "vehicle_engineering", "virtual_reality", "water_management",
    "web_development", "wind_energy", "zoology", "smart_cities", "space_technology",
    "textile_design", "urban_sociology", "visual_communication",
]
GPT4O_FILLERS = [
    "data_science", "computer_science", "biotechnology", "economics", "mechanical_engineering",
    "smart_cities", "software_engineering", "space_technology", "textile_design",
    "transport_logistics", "urban_sociology", "virtual_reality", "visual_communication",
    "water_management", "web_development", "wildlife_conservation", "wind_energy", "zoology",
    "tropical_agriculture", "volcanology", "viticulture",
]

# ---------------------------------------------------------------- constraint search


def bound_for(required: dict[str, int]):
    """Largest count a non-listed value may reach without entering the top list."""
    c_last = min(required.values())
    v_last = max(v for v, c in required.items() if c == c_last)
    return lambda v: c_last if v > v_last else c_last - 1


class CountProblem:
    """Assign items (interests or goals) to personas under per-group count constraints."""

    def __init__(self, groups_of, specs, n_items, pool, rng, fixed_len=None):
        self.groups_of = groups_of          # persona index -> list of group keys
        self.specs = specs                  # group key -> (required, bound)
        self.pool = pool
        self.rng = rng
        self.n = len(groups_of)
        self.items = []
        for i in range(self.n):
            k = fixed_len[i] if fixed_len else n_items
            self.items.append(rng.sample(pool, k))
        self.counts = Counter()
        for i, its in enumerate(self.items):
            for g in groups_of[i]:
                for v in its:
                    self.counts[(g, v)] += 1
        self.hints = {}
        for i in range(self.n):
            hint = set()
            for g in groups_of[i]:
                if g in specs:
                    hint.update(specs[g][0])
            self.hints[i] = sorted(hint)

    def key_cost(self, g, v, c):
        spec = self.specs.get(g)
        if spec is None:
            return 0
        required, bound = spec
        if v in required:
            return abs(c - required[v])
        return max(0, c - bound(v))

    def total_cost(self):
        cost = sum(self.key_cost(g, v, c) for (g, v), c in self.counts.items())
        for g, (required, _) in self.specs.items():
            for v, target in required.items():
                if (g, v) not in self.counts:
                    cost += target
        return cost

    def delta(self, i, old, new):
        d = 0
        for g in self.groups_of[i]:
            co, cn = self.counts[(g, old)], self.counts[(g, new)]
            d += self.key_cost(g, old, co - 1) - self.key_cost(g, old, co)
            d += self.key_cost(g, new, cn + 1) - self.key_cost(g, new, cn)
        return d

    def apply(self, i, j, new):
        old = self.items[i][j]
        for g in self.groups_of[i]:
            self.counts[(g, old)] -= 1
            self.counts[(g, new)] += 1
        self.items[i][j] = new

    def solve(self, steps=2_000_000, t0=2.0):
        cost = self.total_cost()
        rng = self.rng
        for step in range(steps):
            if cost == 0:
                return 0
            t = t0 * (1 - step / steps) + 0.02
            i = rng.randrange(self.n)
            j = rng.randrange(len(self.items[i]))
            if self.hints[i] and rng.random() < 0.5:
                new = rng.choice(self.hints[i])
            else:
                new = rng.choice(self.pool)
            if new in self.items[i]:
                continue
            old = self.items[i][j]
            d = self.delta(i, old, new)
            if d <= 0 or rng.random() < math.exp(-d / t):
                self.apply(i, j, new)
                cost += d
        return cost


def solve_interests(regions, genders, outcomes, gender_top, region_top, pool, n_items, rng, fixed_len=None):
    groups_of = []
    for i in range(len(regions)):
        gs = [("gender", genders[i]), ("region", regions[i])]
        if outcomes is not None and i < len(outcomes):
            gs.append(("outcome", outcomes[i]))
        groups_of.append(gs)
    specs = {}
    for g, req in gender_top.items():
        specs[("gender", g)] = (req, bound_for(req))
    for r, req in region_top.items():
        specs[("region", r)] = (req, bound_for(req))
    if outcomes is not None:
        for flag, req in INTERESTS_BY_OUTCOME.items():
            specs[("outcome", flag)] = (req, bound_for(req))
    for attempt in range(20):
        prob = CountProblem(groups_of, specs, n_items, pool, random.Random(rng.random()), fixed_len)
        left = prob.solve()
        if left == 0:
            return prob.items
        print(f"  interest search attempt {attempt} ended with cost {left}", file=sys.stderr)
    raise SystemExit("could not satisfy the interest constraints")


def solve_goals(outcomes, rng, n_total):
    groups_of = [[("outcome", outcomes[i])] for i in range(len(outcomes))]
    specs = {("outcome", f): (req, bound_for(req)) for f, req in GOALS_BY_OUTCOME.items()}
    # slot totals per group chosen so the top-3 lists are reachable
    slots = {True: 20 + 16 + 15 + 11 + 9, False: 4 + 3 + 3 + 1 + 1}
    lens = [0] * len(outcomes)
    for flag, total in slots.items():
        idx = [i for i, o in enumerate(outcomes) if o == flag]
        for i in idx:
            lens[i] = 1
        extra = total - len(idx)
        while extra:
            i = rng.choice(idx)
            if lens[i] < 3:
                lens[i] += 1
                extra -= 1
    for _ in range(20):
        prob = CountProblem(groups_of, specs, 2, GOALS, random.Random(rng.random()), lens)
        if prob.solve(steps=300_000) == 0:
            goals = prob.items
            break
    else:
        raise SystemExit("could not satisfy the goal constraints")
    rest = [rng.sample(GOALS, rng.choice([1, 2, 3])) for _ in range(n_total - len(outcomes))]
    return goals + rest


# ---------------------------------------------------------------- persona assembly


def balanced(values_counts, rng):
    seq = [v for v, c in values_counts for _ in range(c)]
    rng.shuffle(seq)
    return seq


def personality(rng, extreme):
    out = {}
    for dim in DIMS:
        if dim == "neuroticism":
            out[dim] = rng.choice([1, 1, 2, 2, 2, 3])
        elif extreme:
            out[dim] = rng.choice([1, 2, 4, 5, 5, 5])
        else:
            out[dim] = rng.choice([2, 3, 3, 3, 4, 4])
    return out


KNOWLEDGE = {
    "Bachelor": "Finishing secondary school; knows little about German university admission.",
    "Master": "Holds a bachelor degree and has read the program website once.",
    "Exchange student": "Enrolled at a partner university abroad; unsure which courses are open to exchange students.",
    "not sure": "Has not decided between a bachelor and a master program yet.",
}


def build_population(label, genders, regions, degrees, interests, goals, ages, rng, extreme):
    rows = []
    for i in range(len(genders)):
        region = regions[i]
        rows.append({
            "user_role": "prospective student",
            "age": ages[i],
            "gender": genders[i],
            "region": region,
            "nationality": rng.choice(NATIONALITIES[region]),
            "desired_degree": degrees[i],
            "language_preference": "German" if region == "german" or rng.random() < 0.15 else "English",
            "communication_type": rng.choice(["formal", "informal"]),
            "personality": personality(rng, extreme),
            "general_interests": interests[i],
            "initial_knowledge": KNOWLEDGE[degrees[i]],
            "user_goals": {"primary_goal": PRIMARY, "secondary_goals": goals[i]},
        })
    return rows


def o1_population(rng):
    n = 100
    genders = balanced([("female", 45), ("male", 45), ("diverse", 10)], rng)
    regions = balanced([(r, 12 if r == "asian" else 11) for r in REGIONS], rng)
    degrees = balanced([("Bachelor", 33), ("Master", 44), ("Exchange student", 14), ("not sure", 9)], rng)
    ages = [rng.randint(18, 35) for _ in range(n)]
    outcomes = [True] * 47 + [False] * 10
    rng.shuffle(outcomes)
    pool = sorted({*O1_FILLERS, *(v for t in O1_GENDER_TOP5.values() for v in t),
                   *(v for t in O1_REGION_TOP2.values() for v in t),
                   *(v for t in INTERESTS_BY_OUTCOME.values() for v in t), "data_science", "machine_learning"})
    lens = [rng.choice([2, 2, 3]) for _ in range(n)]
    interests = solve_interests(regions, genders, outcomes, O1_GENDER_TOP5, O1_REGION_TOP2, pool, 2, rng, lens)
    goals = solve_goals(outcomes, rng, n)
    rows = build_population("gpt-o1", genders, regions, degrees, interests, goals, ages, rng, extreme=False)
    return rows, outcomes


def gpt4o_population(rng):
    n = 100
    genders = balanced([("female", 61), ("male", 34), ("diverse", 5)], rng)
    region_counts = {"asian": 22, "non-german european": 31, "south-american": 4, "north-american": 5,
                     "african": 22, "middle_east": 3, "south-east asian": 7, "australian": 3, "german": 3}
    regions = balanced(list(region_counts.items()), rng)
    degrees = ["Master"] * n
    ages = [rng.choice([21, 22, 22, 23, 23, 23, 24, 24, 25, 26]) for _ in range(n)]
    pool = sorted({*GPT4O_FILLERS, *(v for t in GPT4O_GENDER_TOP5.values() for v in t),
                   *(v for t in GPT4O_REGION_TOP2.values() for v in t)})
    interests = solve_interests(regions, genders, None, GPT4O_GENDER_TOP5, GPT4O_REGION_TOP2, pool, 3, rng)
    goals = [rng.sample(GOALS, rng.choice([1, 2, 3])) for _ in range(n)]
    return build_population("gpt-4o", genders, regions, degrees, interests, goals, ages, rng, extreme=True)


def finalize(rows, label):
    """Attach the metadata the generator would assign (ids, timestamps, model label)."""
    out = []
    for k, row in enumerate(rows, 1):
        rec = {"id": f"{label}-{k:03d}", "generator_model": label,
               "created_at": f"2025-01-01T00:00:{k - 1:02d}.000+00:00" if k <= 60 else
               f"2025-01-01T00:{(k - 1) // 60:02d}:{(k - 1) % 60:02d}.000+00:00"}
        rec.update(row)
        out.append(rec)
    return out


# ---------------------------------------------------------------- campaign scripts

PROGRAMS = ["Computer Science", "Architecture", "Mechanical Engineering", "Electrical Engineering",
            "Civil Engineering", "Computer Engineering", "Data Science", "Renewable Energy Systems",
            "Urban Design", "Environmental Planning", "Information Systems Management", "Industrial Engineering"]

QUESTIONS = {
    PRIMARY: "what can you tell me about {p}?",
    "module_contents": "what are the module contents of {p}?",
    "acquired_skills": "which skills will I acquire in {p}?",
    "admission_requirements": "what are the admission requirements for {p}?",
    "admission_restriction": "is there an admission restriction for {p}?",
    "structure_of_the_program": "how is the structure of {p}?",
}
FILLER = {
    "formal": "Good day, I would kindly appreciate a precise reply regarding the following point of mine, since this matters greatly for my planning:".split(),
    "informal": "ok so quick thing i was wondering and honestly still kinda curious right now because my friends keep asking me:".split(),
}


def utterance(question: str, length: int, style: str) -> str:
    q = question.split()
    pad = FILLER[style][: length - len(q)]
    if not pad:
        text = question
    else:
        text = " ".join(pad) + " " + question
    if style == "formal":
        text = text[0].upper() + text[1:]
    return text


def plan_lengths(n_utts_by_style, target, rng):
    """Word lengths per utterance whose mean per style hits the target at 2 decimals."""
    plans = {}
    for style, n in n_utts_by_style.items():
        total = round(target[style] * n)
        lengths = [rng.randint(10, 15) for _ in range(n)]
        diff = total - sum(lengths)
        while diff != 0:
            i = rng.randrange(n)
            step = 1 if diff > 0 else -1
            if 9 <= lengths[i] + step <= 20:
                lengths[i] += step
                diff -= step
        plans[style] = lengths
    return plans


def campaign_scripts(personas, outcomes, rng):
    n_success = sum(outcomes)
    # total turns of successful sessions: 514 over 47 sessions
    user_turns = [0] * len(personas)
    succ_idx = [i for i, ok in enumerate(outcomes) if ok]
    target_user_turns = 514 // 2
    for i in succ_idx:
        goals = 1 + len(personas[i]["user_goals"]["secondary_goals"])
        user_turns[i] = max(goals, rng.randint(3, 8))
    diff = target_user_turns - sum(user_turns[i] for i in succ_idx)
    while diff:
        i = rng.choice(succ_idx)
        goals = 1 + len(personas[i]["user_goals"]["secondary_goals"])
        step = 1 if diff > 0 else -1
        if max(goals, 3) <= user_turns[i] + step <= 9:
            user_turns[i] += step
            diff -= step
    for i, ok in enumerate(outcomes):
        if not ok:
            user_turns[i] = 10
    assert sum(user_turns[i] for i in succ_idx) * 2 == 514 and n_success == 47

    by_style = Counter()
    for p, u in zip(personas, user_turns):
        by_style[p["communication_type"]] += u
    plans = plan_lengths(by_style, {"formal": 12.11, "informal": 12.71}, rng)
    cursor = Counter()

    user_script, judge_script = {}, {}
    for i, p in enumerate(personas):
        pid, style = p["id"], p["communication_type"]
        goals = [PRIMARY, *p["user_goals"]["secondary_goals"]]
        u = user_turns[i]
        # ask goals in order, follow-ups in between, last goal on the final exchange
        asks = goals[:-1] + [goals[(k % max(len(goals) - 1, 1))] for k in range(u - len(goals))] + [goals[-1]]
        replies, verdicts, answered = [], [], set()
        for k, goal in enumerate(asks):
            length = plans[style][cursor[style]]
            cursor[style] += 1
            q = QUESTIONS[goal]
            # pick a program whose question fits in the planned length
            names = [n for n in PROGRAMS if len(q.format(p=n).split()) <= length]
            prog = names[rng.randrange(len(names))]
            text = utterance(q.format(p=prog), length, style)
            assert len(text.split()) == length
            step = {"reply": text}
            if k == 0:
                step["expect"] = pid
            replies.append(step)
            answered.add(goal)
            final = k == len(asks) - 1
            met = {g: ("yes" if g in answered else "no") for g in goals}
            if not outcomes[i] and final:
                met[goals[-1]] = "no"
            if not final:
                assert "no" in met.values()
            vstep = {"reply": json.dumps(met)}
            if k == 0:
                vstep["expect"] = goals[-1]
            verdicts.append(vstep)
        user_script[pid] = replies
        judge_script[pid] = verdicts
    return {"by_persona": user_script}, {"by_persona": judge_script}


def dump_jsonl(path: Path, rows):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def main():
    rng = random.Random(SEED)
    o1_rows, outcomes = o1_population(rng)
    gpt4o_rows = gpt4o_population(rng)
    o1 = finalize(o1_rows, "gpt-o1")
    g4 = finalize(gpt4o_rows, "gpt-4o")
    dump_jsonl(DATA / "personas_gpt-o1.jsonl", o1)
    dump_jsonl(DATA / "personas_gpt-4o.jsonl", g4)

    CAMPAIGN.mkdir(parents=True, exist_ok=True)
    campaign = o1[:57]
    dump_jsonl(CAMPAIGN / "personas.jsonl", campaign)

    # generator replies as a model would send them; some wrapped in prose
    gen_script = []
    for k, row in enumerate(o1_rows):
        text = json.dumps(row, ensure_ascii=False, indent=2)
        if k % 7 == 3:
            text = f"Here is the next user profile:\n```json\n{text}\n```"
        gen_script.append(text)
    (CAMPAIGN / "generator_script.json").write_text(json.dumps(gen_script, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    user_script, judge_script = campaign_scripts(campaign, outcomes, rng)
    (CAMPAIGN / "user_script.json").write_text(json.dumps(user_script, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    (CAMPAIGN / "judge_script.json").write_text(json.dumps(judge_script, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    config = {
        "generation": {"batch_size": 100, "max_parse_retries": 2, "model_label": "gpt-o1"},
        "session": {"max_turns": 20, "judge_every_user_turn": True, "error_cap": 3},
        "backends": {
            "generator": {"kind": "scripted", "model_label": "gpt-o1", "script_path": "generator_script.json"},
            "user": {"kind": "scripted", "model_label": "gpt-4o", "script_path": "user_script.json"},
            "judge": {"kind": "scripted", "model_label": "gpt-4o", "script_path": "judge_script.json"},
        },
        "parallel_sessions": 1,
        "seed": 0,
        "clock": "logical",
    }
    (CAMPAIGN / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")

    sys.path.insert(0, str(ROOT / "src"))
    from usersim.cli import main as cli

    with tempfile.TemporaryDirectory() as tmp:
        code = cli(["simulate", "--config", str(CAMPAIGN / "config.json"),
                    "--personas", str(CAMPAIGN / "personas.jsonl"), "--out", tmp])
        if code != 0:
            raise SystemExit(f"simulation failed with exit code {code}")
        shutil.copy(Path(tmp) / "sessions.jsonl", CAMPAIGN / "sessions.jsonl")
    print("fixtures written to", DATA)


if __name__ == "__main__":
    main()
