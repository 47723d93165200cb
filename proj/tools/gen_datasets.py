#!/usr/bin/env python3
"""Regenerates the shipped environments and scripted-interpreter fixtures.

    python3 tools/gen_datasets.py [--out data]

Output is deterministic (fixed seed); the generated files are checked in.
"""

import argparse
import json
import random
from collections import deque
from pathlib import Path

SEED = 7

TOOLS = [
    ("text_to_image", "Generate an image that depicts a text prompt.", "text", "image"),
    ("image_captioning", "Describe the content of an image in a sentence.", "image", "text"),
    ("optical_character_recognition", "Extract printed or handwritten text from an image.", "image", "text"),
    ("image_classifier", "Assign an object category label to an image.", "image", "label"),
    ("object_detector", "Detect the most salient object in an image and return its label.", "image", "label"),
    ("sentiment_analysis", "Classify the sentiment of a text as a label.", "text", "label"),
    ("topic_classifier", "Classify the topic of a text as a label.", "text", "label"),
    ("label_describer", "Write a short textual description of a label.", "label", "text"),
    ("translator", "Translate a text from English into German.", "text", "text"),
    ("summarizer", "Summarize a long text into a few sentences.", "text", "text"),
    ("super_resolution", "Increase the resolution of an image.", "image", "image"),
    ("colorizer", "Colorize a black-and-white image.", "image", "image"),
]

# objective -> a sensible minimal plan for it
OBJECTIVES = {
    ("text", "image"): [
        ("Draw a picture of a lighthouse on a rocky coast at sunset from the given description.", ["text_to_image"]),
        ("Create an illustration that matches the given children's story paragraph.", ["text_to_image"]),
        ("Produce a poster image for the concert announcement text.", ["text_to_image"]),
    ],
    ("image", "text"): [
        ("Write an English caption for the given holiday photo.", ["image_captioning"]),
        ("Read the street sign in the given photo and return its text.", ["optical_character_recognition"]),
        ("Describe what is happening in the given security camera frame.", ["image_captioning"]),
    ],
    ("image", "label"): [
        ("Decide which animal species appears in the given wildlife photo.", ["image_classifier"]),
        ("Label the main object in the given product photo.", ["object_detector"]),
        ("Classify the given x-ray scan into a diagnostic category.", ["image_classifier"]),
    ],
    ("text", "label"): [
        ("Decide whether the given product review is positive or negative.", ["sentiment_analysis"]),
        ("Assign a news topic to the given headline.", ["topic_classifier"]),
        ("Classify the given support ticket by urgency.", ["topic_classifier"]),
    ],
    ("label", "text"): [
        ("Explain the given category label in one sentence for a beginner.", ["label_describer"]),
        ("Write a dictionary-style definition for the given label.", ["label_describer"]),
        ("Turn the given sentiment label into a friendly reply sentence.", ["label_describer"]),
    ],
    ("text", "text"): [
        ("Translate the given English paragraph into German.", ["translator"]),
        ("Summarize the given meeting transcript in three sentences.", ["summarizer"]),
        ("Shorten the given legal clause into plain language.", ["summarizer"]),
    ],
    ("image", "image"): [
        ("Restore the given blurry scan into a sharp image.", ["super_resolution"]),
        ("Colorize the given black-and-white family photo.", ["colorizer"]),
    ],
    ("label", "image"): [
        ("Generate an example image for the given object category label.", ["label_describer", "text_to_image"]),
        ("Create an icon that represents the given topic label.", ["label_describer", "text_to_image"]),
    ],
    ("label", "label"): [
        ("Map the given fine-grained label onto a coarse sentiment label.", ["label_describer", "sentiment_analysis"]),
        ("Convert the given product category label into a news topic label.", ["label_describer", "topic_classifier"]),
    ],
}

IDENTITY_TOOL = {"text": "translator", "image": "colorizer"}
HALLUCINATED_TOOL = "universal_solver"

TEMPLATES = {
    "process": [
        "Summarize the intermediate results so far.",
        "Restate the objective in one sentence.",
    ],
    "decision": [
        "Check whether every tool in the plan is in the provided tool list.",
        "Check whether the output data type of the previous tool is the input data type of the next tool.",
    ],
    "instruction": [
        "Think about which tools could help with the objective.",
        "List the data types mentioned in the objective.",
    ],
}

TOOLS_MARKER = "TOOLS-VERIFIED"
TYPES_MARKER = "TYPES-VERIFIED"
OUTPUT_INSTRUCTION = "Output the plan by listing the tool names."


def shortest_plan(src, dst):
    """BFS over tool chains (at least one tool), tools tried in registry order."""
    queue = deque()
    seen = set()
    for name, _, i, o in TOOLS:
        if i == src:
            queue.append((o, [name]))
    while queue:
        t, plan = queue.popleft()
        if t == dst:
            return plan
        if t in seen:
            continue
        seen.add(t)
        for name, _, i, o in TOOLS:
            if i == t:
                queue.append((o, plan + [name]))
    raise ValueError(f"no chain {src}->{dst}")


TOOL_INPUT = {name: i for name, _, i, _ in TOOLS}


def types_along(src, plan):
    kinds = {name: (i, o) for name, _, i, o in TOOLS}
    out = [src]
    for p in plan:
        out.append(kinds[p][1])
    return out


def longer_plan(src, plan):
    """Valid but non-minimal: splice an identity tool into the chain."""
    for pos, t in enumerate(types_along(src, plan)):
        if t in IDENTITY_TOOL:
            return plan[:pos] + [IDENTITY_TOOL[t]] + plan[pos:]
    raise ValueError("no identity tool on chain")


def broken_plan(src, plan):
    """Registered tools only, but the first tool does not accept the input type."""
    for name, _, i, _ in TOOLS:
        if i != src:
            return [name] + plan[1:]
    raise ValueError("no mismatching tool")


def make_typed_planning(rng):
    pool = [(pair, obj, plan) for pair, objs in OBJECTIVES.items() for obj, plan in objs]
    assert len(pool) == 24
    rng.shuffle(pool)
    splits = ["train"] * 12 + ["validation"] * 6 + ["test"] * 6
    instances, fixture = [], []
    for idx, ((src, dst), objective, minimal) in enumerate(pool):
        iid = f"tp-{idx + 1:02d}"
        assert types_along(src, minimal)[-1] == dst, objective
        assert all(TOOL_INPUT[t] == ty for t, ty in zip(minimal, types_along(src, minimal))), objective
        assert len(minimal) == len(shortest_plan(src, dst)), objective
        instances.append({
            "id": iid,
            "objective": objective,
            "input_type": src,
            "output_type": dst,
            "expected": ", ".join(minimal),
            "split": splits[idx],
        })
        # Every fourth instance is one the scripted model gets only half right
        # even with both checks in place.
        full = longer_plan(src, minimal) if idx % 4 == 3 else minimal
        fixture.append({
            "id": iid,
            "both_checks": ", ".join(full),
            "types_check_only": ", ".join(longer_plan(src, minimal)),
            "tools_check_only": ", ".join(broken_plan(src, minimal)),
            "no_checks": ", ".join([HALLUCINATED_TOOL] + minimal[1:]),
        })
    env = {
        "name": "TypedPlanning",
        "scoring": "typed_planning",
        "tools": [{"name": n, "description": d, "input_type": i, "output_type": o} for n, d, i, o in TOOLS],
        "instances": instances,
        "templates": TEMPLATES,
    }
    return env, fixture


def interpreter_rules(env, fixture):
    by_id = {i["id"]: i for i in env["instances"]}
    rules = []
    for f in fixture:
        task = "Task input:\n" + by_id[f["id"]]["objective"] + "\n"
        base = ["[step]", task, "Instruction:\n" + OUTPUT_INSTRUCTION]
        rules.append({"match": base + [TOOLS_MARKER, TYPES_MARKER], "fallback": f["both_checks"]})
        rules.append({"match": base + [TYPES_MARKER], "fallback": f["types_check_only"]})
        rules.append({"match": base + [TOOLS_MARKER], "fallback": f["tools_check_only"]})
        rules.append({"match": base, "fallback": f["no_checks"]})
    rules += [
        {"match": ["[step]", "Instruction:\n" + TEMPLATES["decision"][0]],
         "fallback": TOOLS_MARKER + ": every tool in the draft plan appears in the provided tool list."},
        {"match": ["[step]", "Instruction:\n" + TEMPLATES["decision"][1]],
         "fallback": TYPES_MARKER + ": each tool consumes the data type produced by the previous tool."},
        {"match": ["[step]", "Instruction:\nIdentify the input data type"],
         "fallback": "The input data type follows from the objective."},
        {"match": ["[step]", "Instruction:\nIdentify the output data type"],
         "fallback": "The output data type follows from the objective."},
        {"match": ["[step]", "Instruction:\nSelect tools"],
         "fallback": "Draft plan selected from the provided tool list."},
        {"match": "[memory-selection]", "fallback": "all"},
        {"match": "[tool-decision]", "fallback": "no"},
        {"match": "[branch-decision]", "fallback": "Yes"},
        {"match": "[step]", "fallback": "Done."},
    ]
    return {"rules": rules, "fallback": ""}


LISTING = """Step 1:::Process:::Identify the input data type based on the objective.:::next::Step 2
Step 2:::Process:::Identify the output data type based on the objective.:::next::Step 3
Step 3:::Process:::Select tools in the provided tool list to generate a plan.:::next::Step 4
Step 4:::Decision:::Check whether every tool in the plan is in the provided tool list.:::Yes::Step 5::No::Step 3
Step 5:::Decision:::Check whether the output data type of the previous tool is the input data type
of the next tool.:::Yes::Step 6::No::Step 3
Step 6:::Terminal:::Output the plan by listing the tool names.:::
"""

DEGRADED = """Step 1:::Process:::Identify the input data type based on the objective.:::next::Step 2
Step 2:::Process:::Identify the output data type based on the objective.:::next::Step 3
Step 3:::Process:::Select tools in the provided tool list to generate a plan.:::next::Step 6
Step 6:::Terminal:::Output the plan by listing the tool names.:::
"""

TYPES_ONLY = """Step 1:::Process:::Identify the input data type based on the objective.:::next::Step 2
Step 2:::Process:::Identify the output data type based on the objective.:::next::Step 3
Step 3:::Process:::Select tools in the provided tool list to generate a plan.:::next::Step 5
Step 5:::Decision:::Check whether the output data type of the previous tool is the input data type of the next tool.:::Yes::Step 6::No::Step 3
Step 6:::Terminal:::Output the plan by listing the tool names.:::
"""


def generator_rules():
    """Scripted generator for the in-context demo: degraded, then one check,
    then the full listing, then the full listing again (converges)."""
    wrap = "Here is the improved workflow:\n```\n{}```\nIt should perform better."
    return {
        "rules": [{
            "match": "CoRE language",
            "responses": [DEGRADED, wrap.format(TYPES_ONLY), LISTING],
            "fallback": LISTING,
        }],
        "fallback": "",
    }


def make_arithmetic(rng):
    instances = []
    splits = ["train"] * 6 + ["validation"] * 3 + ["test"] * 3
    for idx in range(12):
        a, b, c = rng.randint(2, 40), rng.randint(2, 40), rng.randint(2, 9)
        instances.append({
            "id": f"ac-{idx + 1:02d}",
            "objective": f"Compute ({a} + {b}) * {c} and answer with the integer only.",
            "input_type": "text",
            "output_type": "text",
            "expected": str((a + b) * c),
            "split": splits[idx],
        })
    return {
        "name": "ArithmeticChain",
        "scoring": "exact_match",
        "tools": [],
        "instances": instances,
        "templates": {
            "process": ["Write down the intermediate sum."],
            "decision": ["Check whether the arithmetic is correct."],
            "instruction": ["Answer with the final integer only."],
        },
    }


def dump(path, obj):
    path.write_text(json.dumps(obj, indent=2) + "\n")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    out = Path(parser.parse_args().out)

    rng = random.Random(SEED)
    tp = out / "typed_planning"
    tp.mkdir(parents=True, exist_ok=True)
    env, fixture = make_typed_planning(rng)
    dump(tp / "environment.json", env)
    dump(tp / "fixture_plans.json", fixture)
    dump(tp / "interpreter_rules.json", interpreter_rules(env, fixture))
    dump(tp / "generator_rules.json", generator_rules())
    (tp / "listing.core").write_text(LISTING)
    (tp / "degraded.core").write_text(DEGRADED)

    ac = out / "arithmetic_chain"
    ac.mkdir(parents=True, exist_ok=True)
    dump(ac / "environment.json", make_arithmetic(rng))


if __name__ == "__main__":
    main()
