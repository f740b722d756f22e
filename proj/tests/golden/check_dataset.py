#!/usr/bin/env python3
"""Independent reader for a generated dataset directory.

usage: check_dataset.py DIR

Parses the four split files without sharing code with the C++ reader and
checks the invariants every record must satisfy. Exit 0 on success.
"""
import math
import sys
from pathlib import Path


def fail(msg):
    print("FAIL:", msg)
    sys.exit(1)


def parse_ints(field):
    return [int(t) for t in field.split(" ") if t]


def check_split(path, dims, seen):
    data = path.read_bytes().decode("ascii")
    if data and not data.endswith("\n"):
        fail(f"{path}: missing final newline")
    count = 0
    for n, line in enumerate(data.splitlines(), 1):
        fields = line.split("\t")
        if len(fields) != 5:
            fail(f"{path}:{n}: {len(fields)} fields")
        rid, gloss, text, labels, frames = fields
        gloss, text, labels = parse_ints(gloss), parse_ints(text), parse_ints(labels)
        rows = [[float(v) for v in r.split(",")] for r in frames.split(";")]
        if len(rows) != len(labels):
            fail(f"{path}:{n}: {len(rows)} frames vs {len(labels)} labels")
        for r in rows:
            dims.add(len(r))
            if not all(math.isfinite(v) for v in r):
                fail(f"{path}:{n}: non-finite frame value")
        # Collapsing runs of frame labels gives the gloss sentence.
        runs = [g for i, g in enumerate(labels) if i == 0 or labels[i - 1] != g]
        if runs != gloss:
            fail(f"{path}:{n}: frame label runs {runs} != gloss {gloss}")
        if not text:
            fail(f"{path}:{n}: empty text")
        if tuple(gloss) in seen:
            fail(f"{path}:{n}: gloss sentence repeated across the corpus")
        seen.add(tuple(gloss))
        if rid in seen:
            fail(f"{path}:{n}: duplicate id {rid}")
        seen.add(rid)
        count += 1
    return count


def main():
    root = Path(sys.argv[1])
    dims, seen = set(), set()
    counts = {}
    for name in ("pretrain", "train", "dev", "test"):
        counts[name] = check_split(root / f"{name}.tsv", dims, seen)
        if counts[name] == 0:
            fail(f"{name}: no records")
    if len(dims) != 1:
        fail(f"feature dimensions differ: {sorted(dims)}")
    print("OK", counts, "dim", dims.pop())


if __name__ == "__main__":
    main()
