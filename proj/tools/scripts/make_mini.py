"""Regenerates the synthetic mini-benchmark under tests/data/mini."""
import os
import random
import sys

SUBJECTS = ["a man", "a woman", "the dog", "a child", "two kids", "the chef", "a cat", "the band"]
VERBS = ["is playing", "is cooking", "runs through", "is reading", "jumps over", "is cleaning", "watches"]
OBJECTS = ["a guitar", "the kitchen", "a park", "a book", "the fence", "the floor", "a movie", "the road"]
TAILS = ["", " quickly", " at night", " in the rain", " with friends"]

SIZES = {"STS12": 20, "STS13": 20, "STS14": 20, "STS15": 20, "STS16": 20,
         "STSB-dev": 40, "STSB-test": 50, "SICKR": 20}


def sentence(rng):
    return f"{rng.choice(SUBJECTS).capitalize()} {rng.choice(VERBS)} {rng.choice(OBJECTS)}{rng.choice(TAILS)}."


def main(root):
    rng = random.Random(20240501)
    for name, n in SIZES.items():
        os.makedirs(os.path.join(root, name), exist_ok=True)
        subset = "test" if name != "STSB-dev" else "dev"
        with open(os.path.join(root, name, subset + ".tsv"), "w", newline="\n") as f:
            for i in range(n):
                s1 = sentence(rng)
                if i % 7 == 0:
                    s2, gold = s1, 5.0
                elif i % 7 == 3:
                    # near paraphrase: same clause, different tail
                    s2 = s1[:-1].removesuffix(next(t for t in TAILS[::-1] if s1[:-1].endswith(t))) + rng.choice(TAILS[1:]) + "."
                    gold = 4.6 if s2 != s1 else 5.0
                else:
                    s2 = sentence(rng)
                    gold = round(rng.uniform(0, 5) * 5) / 5
                f.write(f"{s1}\t{s2}\t{gold:g}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/mini")
