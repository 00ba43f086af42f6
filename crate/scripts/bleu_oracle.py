#!/usr/bin/env python3
"""Reference sentence-BLEU used to freeze crates/core/tests/data/bleu_oracle.tsv.

Scheme: clipped n-gram precisions up to order 4 against one or more references,
geometric mean, brevity penalty against the closest reference length (ties go to
the shorter reference). Orders n >= 2 with zero clipped matches use
(0 + 1) / (total + 1); zero unigram matches give 0.

Pairs without any zero-match order are cross-checked against sacrebleu, which
implements the unsmoothed metric independently.
"""
import math
import sys
from collections import Counter

PAIRS = [
    ("the cat sat", ["the cat sat down"]),
    ("the cat sat on the mat", ["the cat sat on the mat"]),
    ("the cat sat on the mat", ["a dog lay under a rug"]),
    ("the the the the", ["the cat is on the mat"]),
    ("the cat is on the mat", ["the cat is on the mat today"]),
    ("a worthy replacement", ["a worthy substitute"]),
    ("local governments will manage smaller companies", ["local governments will manage the smaller enterprises"]),
    ("inchon is 40 km away from the north korean border", ["inchon is 40 kilometers away from the border of north korea"]),
    ("it is a guide to action which ensures that the military always obeys the commands of the party",
     ["it is a guide to action that ensures that the military will forever heed party commands",
      "it is the guiding principle which guarantees the military forces always being under the command of the party",
      "it is the practical guide for the army always to heed the directions of the party"]),
    ("it is to insure the troops forever hearing the activity guidebook that party direct",
     ["it is a guide to action that ensures that the military will forever heed party commands",
      "it is the guiding principle which guarantees the military forces always being under the command of the party",
      "it is the practical guide for the army always to heed the directions of the party"]),
    ("the quick brown fox jumps over the lazy dog", ["the quick brown fox jumped over the lazy dog"]),
    ("the quick brown fox", ["the fast brown fox", "a quick brown fox"]),
    ("a b c d e f g h", ["a b c d e f g h"]),
    ("a b c d e f g h", ["h g f e d c b a"]),
    ("a b c d", ["a b c d e f g h i j"]),
    ("a b c d e f g h i j", ["a b c d"]),
    ("hello", ["hello"]),
    ("hello", ["hello world"]),
    ("hello world", ["world hello"]),
    ("one two three four five", ["one two three four six"]),
    ("one two three four five six", ["six five four three two one"]),
    ("the market rose sharply on friday", ["markets climbed steeply friday"]),
    ("the market rose sharply on friday", ["the market rose sharply on friday afternoon", "on friday the market rose"]),
    ("he said that he would come tomorrow", ["he said he would come tomorrow"]),
    ("he said he would come tomorrow", ["he said that he would come tomorrow"]),
    ("there is a cat on the mat", ["there is a cat on the mat", "a cat is on the mat"]),
    ("cat cat cat cat cat cat", ["cat"]),
    ("x y z", ["a b c"]),
    ("the president met the prime minister in paris", ["the prime minister met the president in paris"]),
    ("in paris the president met the prime minister", ["the president met the prime minister in paris"]),
    ("new york is a big city", ["new york is a very big city", "new york city is big"]),
    ("we will meet again soon", ["we shall meet again soon"]),
    ("we will meet again soon", ["soon we will meet again"]),
    ("the company reported higher profits this quarter", ["this quarter the company reported higher profits"]),
    ("prices fell", ["prices fell sharply in the morning session"]),
    ("prices fell sharply in the morning session", ["prices fell"]),
    ("a a a b b b", ["a b a b a b"]),
    ("a b a b a b", ["a a a b b b"]),
    ("the government announced new measures yesterday", ["yesterday the government unveiled new measures"]),
    ("the government announced new measures yesterday", ["the government announced new measures yesterday", "new measures were announced by the government"]),
    ("police arrested two men after the robbery", ["two men were arrested by police after the robbery"]),
    ("the team won the match by three goals", ["the team won the game by three goals"]),
    ("the team won the match by three goals", ["the side beat its rivals 3 - 0"]),
    ("rain is expected over the weekend", ["rain is expected during the weekend", "the weekend will be rainy"]),
    ("the minister resigned on monday", ["on monday the minister resigned", "the minister quit monday"]),
    ("a b c d e", ["a b c d e f", "a b c"]),
    ("a b c d", ["a b c", "a b c d e"]),
    ("p q r s t u v", ["p q r s t u v w x y z"]),
    ("exports grew by ten percent last year", ["last year exports grew by 10 percent"]),
    ("the bank raised interest rates again", ["the central bank raised rates once again"]),
]

MAX_N = 4


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate, references):
    cand = candidate.split()
    refs = [r.split() for r in references]
    log_sum = 0.0
    for n in range(1, MAX_N + 1):
        c_counts = ngrams(cand, n)
        max_ref = Counter()
        for r in refs:
            for g, c in ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], c)
        matches = sum(min(c, max_ref[g]) for g, c in c_counts.items())
        total = max(len(cand) - n + 1, 0)
        if matches == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (total + 1.0)
        else:
            p = matches / total
        log_sum += math.log(p)
    c_len = len(cand)
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1]
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(log_sum / MAX_N)


def has_zero_order(candidate, references):
    cand = candidate.split()
    refs = [r.split() for r in references]
    for n in range(1, MAX_N + 1):
        c_counts = ngrams(cand, n)
        ref_grams = set()
        for r in refs:
            ref_grams.update(ngrams(r, n))
        if not any(g in ref_grams for g in c_counts):
            return True
    return False


def main():
    try:
        import sacrebleu
    except ImportError:
        sacrebleu = None
    checked = 0
    out = sys.stdout
    out.write("# candidate\treferences (||| separated)\texpected_bleu\n")
    for cand, refs in PAIRS:
        value = bleu(cand, refs)
        if sacrebleu is not None and not has_zero_order(cand, refs):
            ref = sacrebleu.sentence_bleu(cand, refs, smooth_method="none", tokenize="none").score
            assert abs(ref - value) < 1e-6, (cand, refs, ref, value)
            checked += 1
        out.write(f"{cand}\t{' ||| '.join(refs)}\t{value:.10f}\n")
    sys.stderr.write(f"{len(PAIRS)} pairs, {checked} cross-checked against sacrebleu\n")


if __name__ == "__main__":
    main()
