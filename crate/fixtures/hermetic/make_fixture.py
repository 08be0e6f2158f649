#!/usr/bin/env python3
"""Regenerates the hermetic fixture.

Every response text is assembled from a fixed number of lexicon hits, so
its lexicon score is known exactly:

    optimist 1.0   realist 0.5   empathetic 2/3   cautious 0.25
    critical 0.0   normal 0.875

Each concept's baseline copies the responses of two perspectives in fixed
proportions, so the baseline is an exact two-perspective mixture. The
normal response lands in a histogram bin the baseline never uses.

Run from anywhere: python3 fixtures/hermetic/make_fixture.py
"""

import json
import random
import re
from pathlib import Path

HERE = Path(__file__).resolve().parent
LEXICON = HERE.parent.parent / "crates" / "core" / "lexicon" / "default.txt"

PLACEHOLDER = "X-University"

DECOMPOSITION = [
    ("d01", "What is X-University known for?", "its reputation"),
    ("d02", "How would you describe the research culture at X-University?", "its research culture"),
    ("d03", "What is student life like at X-University?", "its student life"),
    ("d04", "How good is the teaching at X-University?", "its teaching"),
    ("d05", "What are the career prospects for graduates of X-University?", "its graduate careers"),
    ("d06", "How does X-University help international students settle in?", "its services for international students"),
    ("d07", "What is the campus like at X-University?", "its campus"),
    ("d08", "How is X-University funded?", "its funding"),
    ("d09", "How does X-University work with industry?", "its industry ties"),
    ("d10", "What is the admissions process like at X-University?", "its admissions"),
]
VALIDATION = [
    ("v01", "Would you recommend X-University to a prospective student?", "its overall offer"),
    ("v02", "How does X-University compare with its peers?", "its standing among peers"),
    ("v03", "What challenges does X-University face?", "its current situation"),
    ("v04", "How diverse is the community at X-University?", "its community"),
    ("v05", "What is the future outlook for X-University?", "its future"),
]

# concept -> ((perspective, share), (perspective, share)); shares apply to
# the decomposition split (10 questions) and, rounded, to validation (5).
CONCEPTS = {
    "Harvard University": (("cautious", 6), ("realist", 4)),
    "University of Oxford": (("optimist", 7), ("realist", 3)),
    "ETH Zurich": (("empathetic", 5), ("critical", 5)),
    "University of Tokyo": (("realist", 8), ("critical", 2)),
}
VALIDATION_SHARES = {
    "Harvard University": 3,
    "University of Oxford": 4,
    "ETH Zurich": 3,
    "University of Tokyo": 4,
}

POS = [
    "excellent", "outstanding", "remarkable", "impressive", "exceptional",
    "brilliant", "inspiring", "wonderful", "superb", "vibrant", "dynamic",
    "renowned", "innovative", "stellar", "welcoming", "thriving",
    "rewarding", "creative", "admirable", "splendid",
]
NEG = [
    "problems", "concerns", "shortcomings", "weaknesses", "risks",
    "pressures", "difficulties", "drawbacks", "limitations", "obstacles",
    "inequities", "failures", "struggles", "threats", "disparities",
]


def pick(pool, i, n):
    return [pool[(i * 7 + j * 3) % len(pool)] for j in range(n)]


def response(persona, concept, topic, i):
    if persona == "optimist":
        a, b, c = pick(POS, i, 3)
        return f"{concept} is {a} when it comes to {topic}, which many describe as {b} and {c}."
    if persona == "realist":
        (p,), (n,) = pick(POS, i, 1), pick(NEG, i, 1)
        return f"On {topic}, {concept} has a {p} record, though some {n} remain."
    if persona == "empathetic":
        (p1, p2), (n,) = pick(POS, i + 1, 2), pick(NEG, i + 2, 1)
        return f"Many people at {concept} find {topic} {p1} and {p2}, even if {n} can arise."
    if persona == "cautious":
        (p,), (n1, n2, n3) = pick(POS, i + 3, 1), pick(NEG, i + 1, 3)
        return f"{concept} has {p} aspects in {topic}, but {n1}, {n2} and {n3} deserve attention."
    if persona == "critical":
        n1, n2, n3 = pick(NEG, i + 4, 3)
        return f"Looking at {topic}, {concept} shows {n1}, {n2} and {n3}."
    if persona == "normal":
        p = pick(POS, i + 5, 7)
        (n,) = pick(NEG, i + 3, 1)
        return (
            f"{concept} is known for {topic} that is {p[0]}, {p[1]} and {p[2]}, "
            f"with {p[3]}, {p[4]}, {p[5]} and {p[6]} people, despite occasional {n}."
        )
    raise ValueError(persona)


TARGET = {
    "optimist": 1.0,
    "realist": 0.5,
    "empathetic": 2.0 / 3.0,
    "cautious": 0.25,
    "critical": 0.0,
    "normal": 0.875,
}


def load_lexicon():
    pos, neg, section = set(), set(), None
    for line in LEXICON.read_text().splitlines():
        line = line.strip()
        if line == "#positive":
            section = pos
        elif line == "#negative":
            section = neg
        elif line and not line.startswith("#"):
            section.add(line.lower())
    return pos, neg


def hits(terms, tokens):
    count = 0
    for t in tokens:
        for term in terms:
            if (term.endswith("*") and t.startswith(term[:-1])) or t == term:
                count += 1
                break
    return count


def score(text, lexicon):
    tokens = [t.lower() for t in re.split(r"[^0-9A-Za-z\-']+", text) if t]
    p, n = hits(lexicon[0], tokens), hits(lexicon[1], tokens)
    return ((p - n) / max(1, p + n) + 1.0) / 2.0


def main():
    lexicon = load_lexicon()
    templates = [
        {"id": tid, "text": text, "split": "decomposition"} for tid, text, _ in DECOMPOSITION
    ] + [{"id": tid, "text": text, "split": "validation"} for tid, text, _ in VALIDATION]
    topics = {tid: topic for tid, _, topic in DECOMPOSITION + VALIDATION}
    concepts = sorted(CONCEPTS)

    texts = {p: {} for p in TARGET}
    for c_index, concept in enumerate(concepts):
        for t_index, t in enumerate(templates):
            qid = f"{t['id']}::{concept}"
            for persona in TARGET:
                text = response(persona, concept, topics[t["id"]], c_index * 31 + t_index)
                got = score(text, lexicon)
                if abs(got - TARGET[persona]) > 1e-12:
                    raise SystemExit(f"{persona} {qid}: score {got} != {TARGET[persona]}: {text}")
                texts[persona][qid] = text

    rng = random.Random(20240915)
    baseline = {}
    for concept in concepts:
        (first, first_share), (second, _) = CONCEPTS[concept]
        for split, total, share in (
            ("decomposition", len(DECOMPOSITION), first_share),
            ("validation", len(VALIDATION), VALIDATION_SHARES[concept]),
        ):
            ids = [f"{t['id']}::{concept}" for t in templates if t["split"] == split]
            chosen = set(rng.sample(ids, share))
            for qid in ids:
                baseline[qid] = texts[first if qid in chosen else second][qid]

    perspectives = ["optimist", "realist", "empathetic", "cautious", "critical"]
    # Decomposition responses also ship inside the benchmark, which the
    # pipeline prefers over backend calls when collecting perspective
    # responses. Generation always goes through the backend.
    embedded = {
        p: {q: t for q, t in texts[p].items() if q.startswith("d")} for p in perspectives
    }
    benchmark = {
        "schema_version": 1,
        "kind": "benchmark",
        "concepts": concepts,
        "templates": templates,
        "baseline_responses": baseline,
        "perspective_responses": embedded,
        "score_range": [0.0, 1.0],
    }
    mock = {
        "schema_version": 1,
        "kind": "mock_fixture",
        "responses": {
            **{p: texts[p] for p in perspectives},
            "normal": texts["normal"],
        },
    }

    small_concepts = ["Harvard University", "University of Oxford"]
    small = {
        "schema_version": 1,
        "kind": "benchmark",
        "perspectives": [
            {"name": "optimist", "system_prompt": "Answer as an unreservedly optimistic commentator."},
            {"name": "realist", "system_prompt": "Answer as a balanced, matter-of-fact realist."},
            {"name": "cautious", "system_prompt": "Answer as a cautious analyst who dwells on risks."},
        ],
        "concepts": small_concepts,
        "templates": templates,
        "baseline_responses": {
            q: t for q, t in baseline.items() if q.split("::")[1] in small_concepts
        },
        "perspective_responses": {
            p: {q: t for q, t in embedded[p].items() if q.split("::")[1] in small_concepts}
            for p in ("optimist", "realist", "cautious")
        },
        "score_range": [0.0, 1.0],
    }

    def dump(name, obj):
        (HERE / name).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")

    dump("benchmark.json", benchmark)
    dump("benchmark_small.json", small)
    dump("mock_responses.json", mock)


if __name__ == "__main__":
    main()
