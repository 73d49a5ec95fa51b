#!/usr/bin/env python3
"""Independent recount of the bundled fixtures.

Reads the JSONL files with nothing but ``json`` and ``math`` and prints the
numbers the test suite pins, so they can be compared by eye against
``usersim analyze`` output. Does not import ``usersim``.
"""

from __future__ import annotations

import json
import math
import sys
from collections import Counter
from pathlib import Path

DATA = Path(__file__).resolve().parents[1] / "src" / "usersim" / "data"
TUB = {"male": 0.652, "female": 0.347, "diverse": 0.001}


def rows(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def top(counter, n):
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[:n]


def entropy_bits(counts):
    total = sum(counts)
    return -sum(c / total * math.log2(c / total) for c in counts if c)


def chi2(counts, expected_p):
    total = sum(counts.values())
    return sum((counts.get(k, 0) - total * p) ** 2 / (total * p) for k, p in expected_p.items())


def corpus(label):
    ps = rows(DATA / f"personas_{label}.jsonl")
    print(f"== {label}: {len(ps)} personas")
    for attr in ("gender", "desired_degree", "region"):
        print(f"  {attr}: {dict(sorted(Counter(p[attr] for p in ps).items()))}")
    for g in ("female", "male", "diverse"):
        c = Counter(i for p in ps if p["gender"] == g for i in set(p["general_interests"]))
        print(f"  top5 {g}: {top(c, 5)}")
    for r in sorted({p["region"] for p in ps}):
        c = Counter(i for p in ps if p["region"] == r for i in set(p["general_interests"]))
        print(f"  top2 {r}: {top(c, 2)}")
    g = Counter(p["gender"] for p in ps)
    print(f"  gender entropy bits: {entropy_bits(list(g.values())):.6f}")
    print(f"  gender chi2 uniform: {chi2(g, {k: 1 / 3 for k in TUB}):.6f}")
    print(f"  gender chi2 reference: {chi2(g, TUB):.6f}")
    return ps


def campaign():
    ps = {p["id"]: p for p in rows(DATA / "campaign" / "personas.jsonl")}
    sessions = {}
    for rec in rows(DATA / "campaign" / "sessions.jsonl"):
        sid = rec["session_id"]
        s = sessions.setdefault(sid, {"turns": [], "outcome": None, "persona": None})
        if rec["type"] == "session":
            s["persona"] = rec["persona_id"]
        elif rec["type"] == "turn":
            s["turns"].append(rec)
        elif rec["type"] == "outcome":
            s["outcome"] = rec["outcome"]
    n = len(sessions)
    ok = [s for s in sessions.values() if s["outcome"] == "success"]
    print(f"== campaign: {n} sessions, {len(ok)} successes, rate {100 * len(ok) / n:.4f}%")
    print(f"  avg total turns (success): {sum(len(s['turns']) for s in ok) / len(ok):.4f}")
    words = {"formal": [], "informal": []}
    buttons = 0
    for s in sessions.values():
        style = ps[s["persona"]]["communication_type"]
        for t in s["turns"]:
            if t["speaker"] == "user":
                words[style].append(len(t["utterance"].split()))
            elif t.get("buttons"):
                buttons += 1
    for style, ws in words.items():
        print(f"  avg words {style}: {sum(ws) / len(ws):.6f} over {len(ws)} utterances")
    print(f"  bot turns with buttons: {buttons}")
    for flag in (True, False):
        pick = [ps[s["persona"]] for s in sessions.values() if (s["outcome"] == "success") == flag]
        label = "achieved" if flag else "not achieved"
        gi = Counter(i for p in pick for i in set(p["general_interests"]))
        sg = Counter(g for p in pick for g in set(p["user_goals"]["secondary_goals"]))
        print(f"  {label} interests top3: {top(gi, 3)}")
        print(f"  {label} secondary goals top3: {top(sg, 3)}")


def main():
    corpus("gpt-o1")
    corpus("gpt-4o")
    campaign()
    return 0


if __name__ == "__main__":
    sys.exit(main())
