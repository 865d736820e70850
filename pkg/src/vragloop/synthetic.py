"""Synthetic 20-page corpus, eval set and policy script for offline end-to-end runs.

Pages are rendered with their marker text and a few solid-colour regions so
crop output can be checked by pixel colour. Page text is stored in the
manifest for the hash embedder.
"""

from __future__ import annotations

import json
from pathlib import Path

from PIL import Image, ImageDraw

from .corpus import CorpusManifest, ManifestEntry, write_eval_set
from .trajectory import Query

PAGE_SIZE = (1200, 900)

PAGES: list[tuple[str, str, str]] = [
    ("nw_p1", "northwind", "Northwind Logistics annual report 2010 cover"),
    ("nw_p2", "northwind", "Northwind operated 50 fulfillment centers across North America in 2010"),
    ("nw_p3", "northwind", "Northwind headquarters city Denver Colorado corporate office"),
    ("nw_p4", "northwind", "Northwind fleet trucks delivery vans statistics"),
    ("nw_p5", "northwind", "Northwind outlook goals for 2011 expansion plans"),
    ("ct_p1", "contoso", "Contoso Group financial summary cover"),
    ("ct_p2", "contoso", "Contoso revenue 2012 total 4.2 billion dollars"),
    ("ct_p3", "contoso", "Contoso quarterly sales table Q1 Q2 Q3 Q4 regional breakdown"),
    ("ct_p4", "contoso", "Contoso revenue 2011 total 3.8 billion dollars"),
    ("ct_p5", "contoso", "Contoso board members and governance"),
    ("fb_p1", "fabrikam", "Fabrikam company profile cover blue logo"),
    ("fb_p2", "fabrikam", "Fabrikam employees headcount 2015 total 12000"),
    ("fb_p3", "fabrikam", "Fabrikam employees headcount 2014 total 11000"),
    ("fb_p4", "fabrikam", "Fabrikam product lines textiles and dyes"),
    ("fb_p5", "fabrikam", "Fabrikam sustainability report water usage"),
    ("ts_p1", "tailspin", "Tailspin Toys catalog cover"),
    ("ts_p2", "tailspin", "Tailspin Toys best selling drone models"),
    ("ts_p3", "tailspin", "Tailspin Toys store locations map"),
    ("ts_p4", "tailspin", "Tailspin Toys customer satisfaction survey results"),
    ("ts_p5", "tailspin", "Tailspin Toys holiday season sales chart"),
]

# Solid regions drawn on every page: (box in page pixels, RGB colour).
REGIONS = [
    ((60, 300, 360, 600), (220, 40, 40)),
    ((600, 480, 1080, 840), (40, 90, 220)),
]

QUERIES = [
    Query("q1_two_hop", "Which city hosts the headquarters of the company that operated 50 fulfillment centers?",
          "Denver", frozenset({"nw_p2", "nw_p3"})),
    Query("q2_verify", "What was Contoso's total revenue in 2012?", "4.2 billion dollars", frozenset({"ct_p2"})),
    Query("q3_forced", "What is the melting point of the zephyr alloy?", "1200 C", frozenset({"ts_p5"})),
    Query("q4_invalid", "How many employees did Fabrikam have in 2015?", "12000", frozenset({"fb_p2"})),
    Query("q5_no_search", "What color is the Fabrikam logo?", "blue", frozenset({"fb_p1"})),
    Query("q6_crop", "What is the Q3 value in the Contoso quarterly sales table?", "27", frozenset({"ct_p3"})),
]


def _r(think: str, tag: str, payload: str) -> str:
    return f"<think>{think}</think><{tag}>{payload}</{tag}>"


SCRIPT: dict[str, list[dict]] = {
    "q1_two_hop": [
        {"turn": 1, "response": _r("I first need the company that operated 50 fulfillment centers.",
                                   "search", "operated 50 fulfillment centers")},
        {"turn": 2, "response": _r("Northwind operated 50 fulfillment centers in 2010. Next I need the city of Northwind's headquarters.",
                                   "search", "Northwind headquarters city")},
        {"turn": 3, "response": _r("Northwind headquarters is in Denver, Colorado.", "answer", "Denver")},
    ],
    "q2_verify": [
        {"turn": 1, "response": _r("I need Contoso's revenue for 2012.", "search", "Contoso revenue 2012")},
        {"turn": 2, "response": _r("Contoso revenue in 2012 was 4.2 billion dollars. I will verify this with one more search.",
                                   "search", "Contoso revenue 2012 total")},
        {"match": "verification step", "response": _r("This page shows 2011 revenue of 3.8 billion, which does not contradict the 2012 figure.",
                                                      "answer", "4.2 billion dollars")},
    ],
    "q3_forced": [
        {"match": "maximum number of turns", "response": _r("No retrieved page mentions the zephyr alloy.",
                                                            "answer", "Insufficient information to determine the melting point.")},
        {"response": _r("Nothing about the zephyr alloy yet, keep looking.", "search", "zephyr alloy melting point")},
    ],
    "q4_invalid": [
        {"turn": 1, "response": "<search>Fabrikam employees 2015</search>"},
        {"turn": 2, "response": _r("I need Fabrikam's 2015 headcount.", "search", "Fabrikam employees 2015")},
        {"turn": 3, "response": _r("Fabrikam had 12000 employees in 2015.", "answer", "12000")},
    ],
    "q5_no_search": [
        {"turn": 1, "response": _r("I believe the Fabrikam logo is blue.", "answer", "blue")},
    ],
    "q6_crop": [
        {"turn": 1, "response": _r("I need the Contoso quarterly sales table.", "search", "Contoso quarterly sales table")},
        {"turn": 2, "response": _r("The Contoso sales table is on this page but its numbers are too small to read.",
                                   "bbox", "[500, 533, 900, 933]")},
        {"turn": 3, "response": _r("The zoomed table shows Q3 = 27.", "bbox", "[500, 533, 700, 700]")},
        {"turn": 4, "response": _r("The zoomed table shows Q3 = 27. I will verify with another search.",
                                   "search", "Contoso quarterly sales Q3")},
        {"turn": 5, "response": _r("The extra page does not contradict Q3 = 27.", "answer", "27")},
    ],
}

# Loop settings the fixture was scripted against.
RUN_CONFIG = {
    "max_turns": 10,
    "window_size": 2,
    "top_k": 3,
    "invalid_retry_limit": 2,
    "seed": 7,
}


def render_page(page_id: str, text: str, size: tuple[int, int] = PAGE_SIZE) -> Image.Image:
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.text((40, 30), page_id, fill=(0, 0, 0))
    draw.text((40, 80), text, fill=(0, 0, 0))
    for box, colour in REGIONS:
        draw.rectangle(box, fill=colour)
    return img


def write_corpus(out_dir: str | Path) -> dict[str, Path]:
    """Write images, manifest, eval set, policy script and config; return their paths."""
    out = Path(out_dir)
    (out / "pages").mkdir(parents=True, exist_ok=True)
    entries = []
    for page_id, doc, text in PAGES:
        rel = f"pages/{page_id}.png"
        render_page(page_id, text).save(out / rel, format="PNG")
        entries.append(ManifestEntry(page_id, doc, rel, PAGE_SIZE[0], PAGE_SIZE[1], text))
    paths = {
        "manifest": out / "manifest.jsonl",
        "eval": out / "eval.jsonl",
        "script": out / "policy_script.json",
        "config": out / "config.json",
    }
    CorpusManifest(entries, out).save(paths["manifest"])
    write_eval_set(paths["eval"], QUERIES)
    paths["script"].write_text(json.dumps(SCRIPT, indent=2) + "\n", encoding="utf-8")
    config = dict(RUN_CONFIG)
    config["policy"] = {"kind": "scripted", "script": "policy_script.json"}
    config["judge"] = {"kind": "scripted"}
    paths["config"].write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return paths
