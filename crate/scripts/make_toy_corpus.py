#!/usr/bin/env python3
"""Writes the deterministic 200-sentence template corpus used by the ranking tests."""
import random
import sys

SUBJECTS = ["the farmer", "a young girl", "my neighbor", "the old man", "our teacher", "the doctor",
            "a tired student", "the captain", "his sister", "the baker", "a small boy", "the pilot",
            "her uncle", "the artist", "a quiet woman", "the mayor", "the driver", "a clever fox",
            "the gardener", "my cousin"]
VERBS = ["painted", "carried", "found", "sold", "cleaned", "opened", "watched", "fixed", "bought",
         "lost", "borrowed", "dropped", "hid", "washed", "built", "drew", "followed", "moved"]
OBJECTS = ["a red kite", "the heavy box", "an old map", "the broken clock", "a wooden chair",
           "the blue bicycle", "a paper boat", "the silver key", "a warm coat", "the green door",
           "a tiny bird", "the long ladder", "a glass jar", "the small table", "a yellow hat"]
TAILS = ["", "", "in the morning", "near the river", "after lunch", "before the storm",
         "at the market", "behind the house", "on sunday", "with great care", "in the garden",
         "during the night", "by the station"]


def main(seed=7, n=200):
    rng = random.Random(seed)
    seen = set()
    out = []
    while len(out) < n:
        parts = [rng.choice(SUBJECTS), rng.choice(VERBS), rng.choice(OBJECTS), rng.choice(TAILS)]
        s = " ".join(p for p in parts if p)
        if s not in seen:
            seen.add(s)
            out.append(s)
    sys.stdout.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main()
