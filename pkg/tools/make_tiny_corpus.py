"""Generate the bundled tiny corpus (src/advlm/data/tiny.txt).

Seeded synthetic prose: pseudo-English word forms arranged by a small
template grammar with topic blocks and a shared function-word pool, so the
sample has natural-text statistics (bursty topics, frequent function words,
rarer content words) without carrying any third-party license. Regenerating
with the same seed reproduces the file byte for byte.
"""

import os

import numpy as np

SEED = 20240817
TARGET_TOKENS = 55_000

ONSETS = ["b", "br", "c", "cl", "d", "dr", "f", "fl", "g", "gr", "h", "k",
          "l", "m", "n", "p", "pl", "pr", "r", "s", "sl", "sp", "st", "t",
          "tr", "v", "w"]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ou"]
CODAS = ["", "n", "r", "s", "t", "l", "nd", "st", "ck", "m"]

DET = ["the", "the", "the", "a", "a", "its", "some", "every"]
PREP = ["of", "in", "near", "under", "behind", "beyond", "along", "with"]
CONJ = ["and", "while", "but", "as"]
ADVERBS = ["slowly", "often", "quietly", "again", "almost", "rarely",
           "together", "early"]

# Small enough that every word type recurs often (median type count in the
# hundreds), so embedding geometry reflects training rather than init noise.
NUM_TOPICS = 4
NOUNS_PER_TOPIC = 24
VERBS_PER_TOPIC = 10
ADJS_PER_TOPIC = 10
SHARED_NOUNS = 20
SHARED_VERBS = 8
SHARED_ADJS = 8


def make_words(rng, count, taken, syllables=2):
    words = []
    while len(words) < count:
        parts = []
        for _ in range(syllables):
            parts.append(ONSETS[rng.integers(len(ONSETS))]
                         + VOWELS[rng.integers(len(VOWELS))]
                         + CODAS[rng.integers(len(CODAS))])
        w = "".join(parts)
        if 4 <= len(w) <= 10 and w not in taken:
            taken.add(w)
            words.append(w)
    return words


# Word choice within a pool is uniform, so every type recurs often enough
# that its embedding geometry reflects training rather than init noise.
def pick(rng, words):
    return words[rng.integers(len(words))]


class Lexicon:
    def __init__(self, rng):
        taken = set(DET + PREP + CONJ + ADVERBS)
        self.shared_nouns = make_words(rng, SHARED_NOUNS, taken)
        self.shared_verbs = make_words(rng, SHARED_VERBS, taken)
        self.shared_adjs = make_words(rng, SHARED_ADJS, taken)
        self.topics = []
        for _ in range(NUM_TOPICS):
            self.topics.append({
                "nouns": make_words(rng, NOUNS_PER_TOPIC, taken),
                "verbs": make_words(rng, VERBS_PER_TOPIC, taken),
                "adjs": make_words(rng, ADJS_PER_TOPIC, taken),
            })

    def noun(self, rng, topic):
        pool = self.topics[topic]["nouns"] if rng.random() < 0.75 \
            else self.shared_nouns
        return pick(rng, pool)

    def verb(self, rng, topic):
        pool = self.topics[topic]["verbs"] if rng.random() < 0.7 \
            else self.shared_verbs
        return pick(rng, pool)

    def adj(self, rng, topic):
        pool = self.topics[topic]["adjs"] if rng.random() < 0.7 \
            else self.shared_adjs
        return pick(rng, pool)

def sentence(rng, lex, topic):
    det = lambda: DET[rng.integers(len(DET))]
    prep = lambda: PREP[rng.integers(len(PREP))]
    n = lambda: lex.noun(rng, topic)
    v = lambda: lex.verb(rng, topic)
    a = lambda: lex.adj(rng, topic)
    adv = lambda: ADVERBS[rng.integers(len(ADVERBS))]
    conj = lambda: CONJ[rng.integers(len(CONJ))]

    forms = [
        lambda: [det(), n(), v(), det(), a(), n()],
        lambda: [det(), a(), n(), prep(), det(), n(), v(), adv()],
        lambda: [det(), n(), prep(), det(), n(), v(), det(), n()],
        lambda: [det(), n(), v(), adv(), conj(), det(), n(), v()],
        lambda: [adv(), det(), n(), v(), prep(), det(), a(), n()],
        lambda: [det(), n(), conj(), det(), n(), v(), det(), n(),
                 prep(), det(), n()],
        lambda: [det(), a(), a(), n(), v(), det(), n()],
        lambda: [det(), n(), v()],
    ]
    return forms[rng.integers(len(forms))]()


def generate(seed=SEED, target_tokens=TARGET_TOKENS):
    rng = np.random.default_rng(seed)
    lex = Lexicon(rng)
    lines = []
    tokens = 0
    topic = int(rng.integers(NUM_TOPICS))
    block_left = int(rng.integers(15, 40))
    while tokens < target_tokens:
        if block_left == 0:
            topic = int(rng.integers(NUM_TOPICS))
            block_left = int(rng.integers(15, 40))
        words = sentence(rng, lex, topic)
        lines.append(" ".join(words))
        tokens += len(words) + 1  # line end counts as one token downstream
        block_left -= 1
    return "\n".join(lines) + "\n"


def main():
    out = os.path.join(os.path.dirname(__file__), "..", "src", "advlm", "data",
                       "tiny.txt")
    out = os.path.normpath(out)
    os.makedirs(os.path.dirname(out), exist_ok=True)
    text = generate()
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text)
    toks = text.split()
    lines = text.count("\n")
    print(f"wrote {out}: {len(toks) + lines} tokens incl. line ends, "
          f"{lines} lines, {len(set(toks))} word types")


if __name__ == "__main__":
    main()
