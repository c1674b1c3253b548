"""Dataset generation, ingestion, and auditing.

Every generator is a pure function of its parameters and seed: regenerating
with the same arguments yields an identical example list. Factoid datasets
carry their (subject, relation, object) triples so the overlap audit can
extract entity pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import CapacityError, ConfigError
from .seeding import make_rng

KIND_FACTOID = "factoid"
KIND_NONFACTOID = "nonfactoid"
KIND_MIX_RANDOM = "mix_random"
KIND_MIX_GENERIC = "mix_generic"
KINDS = (KIND_FACTOID, KIND_NONFACTOID, KIND_MIX_RANDOM, KIND_MIX_GENERIC)

KV_ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"

KV_PROMPT = "The value of key {key} is?"
TEMPLATED_PROMPT = "The {relation} of {subject} is?"
RANDOM_SEQ_PROMPT = "Memorize the following random-string passage: {seq}"
GENERIC_PROMPT = "Complete the following partial passage: {head}"
ARITHMETIC_PROMPT = "What is {a} plus {b}?"


@dataclass(frozen=True)
class Example:
    prompt: str
    response: str
    subject: str | None = None
    relation: str | None = None
    object: str | None = None


@dataclass(frozen=True)
class Dataset:
    id: str
    kind: str
    examples: tuple[Example, ...]
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind: {self.kind!r}")

    def __len__(self) -> int:
        return len(self.examples)

    def texts(self) -> list[str]:
        out = []
        for ex in self.examples:
            out.append(ex.prompt)
            out.append(ex.response)
        return out


@dataclass(frozen=True)
class OverlapReport:
    fraction: float
    colliding_pairs: tuple  # ((subject, object), index of the colliding mix example)


def _distinct_strings(rng, count: int, length: int, alphabet: str) -> list[str]:
    space = len(alphabet) ** length
    if count > space:
        raise CapacityError(
            f"cannot draw {count} distinct strings of length {length} "
            f"over a {len(alphabet)}-symbol alphabet ({space} possible)"
        )
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        s = "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=length))
        if s not in seen:
            seen.add(s)
            out.append(s)
    return out


def gen_kvr(n: int, key_len: int, val_len: int, seed: int, dataset_id: str | None = None) -> Dataset:
    """Random key-value recall pairs; keys pairwise distinct."""
    if n < 0:
        raise ConfigError("n must be >= 0")
    if key_len < 1 or val_len < 1:
        raise ConfigError("key_len and val_len must be >= 1")
    rng = make_rng(seed, "kvr")
    keys = _distinct_strings(rng, n, key_len, KV_ALPHABET)
    examples = []
    for key in keys:
        val = "".join(KV_ALPHABET[i] for i in rng.integers(0, len(KV_ALPHABET), size=val_len))
        examples.append(
            Example(
                prompt=KV_PROMPT.format(key=key),
                response=val,
                subject=key,
                relation="value",
                object=val,
            )
        )
    did = dataset_id or f"kvr-n{n}-k{key_len}-v{val_len}-s{seed}"
    return Dataset(id=did, kind=KIND_FACTOID, examples=tuple(examples), seed=seed)


_CONSONANTS = "bcdfghjklmnpqrstvwz"
_VOWELS = "aeiou"


def _nonsense_word(rng) -> str:
    n_syll = int(rng.integers(2, 4))
    parts = []
    for _ in range(n_syll):
        parts.append(_CONSONANTS[rng.integers(0, len(_CONSONANTS))])
        parts.append(_VOWELS[rng.integers(0, len(_VOWELS))])
    return "".join(parts)


def _distinct_nonsense(rng, count: int) -> list[str]:
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < count:
        w = _nonsense_word(rng)
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def gen_templated_factoids(
    n: int, n_subjects: int, n_relations: int, seed: int, dataset_id: str | None = None
) -> Dataset:
    """Templated factoids over generated nonsense entities.

    Subjects and relations are nonsense words, so the facts are unfamiliar by
    construction. All (subject, relation) pairs are distinct.
    """
    if n > n_subjects * n_relations:
        raise CapacityError(
            f"n={n} exceeds the {n_subjects}x{n_relations} subject/relation grid"
        )
    rng = make_rng(seed, "templated")
    subjects = _distinct_nonsense(rng, n_subjects)
    relations = _distinct_nonsense(rng, n_relations)
    cells = rng.choice(n_subjects * n_relations, size=n, replace=False)
    examples = []
    for cell in cells:
        subj = subjects[int(cell) // n_relations]
        rel = relations[int(cell) % n_relations]
        obj = _nonsense_word(rng)
        examples.append(
            Example(
                prompt=TEMPLATED_PROMPT.format(relation=rel, subject=subj),
                response=obj,
                subject=subj,
                relation=rel,
                object=obj,
            )
        )
    did = dataset_id or f"templated-n{n}-s{seed}"
    return Dataset(id=did, kind=KIND_FACTOID, examples=tuple(examples), seed=seed)


def gen_random_word_sequences(
    n: int, words_per_seq: int, wordlist, seed: int, dataset_id: str | None = None
) -> Dataset:
    """Sequences of words sampled uniformly with replacement from `wordlist`.

    The response repeats the sequence from the prompt verbatim.
    """
    words = list(wordlist)
    if not words:
        raise ConfigError("wordlist must be nonempty")
    rng = make_rng(seed, "random_words")
    examples = []
    for _ in range(n):
        idx = rng.integers(0, len(words), size=words_per_seq)
        seq = " ".join(words[i] for i in idx)
        examples.append(Example(prompt=RANDOM_SEQ_PROMPT.format(seq=seq), response=seq))
    did = dataset_id or f"randwords-n{n}-w{words_per_seq}-s{seed}"
    return Dataset(id=did, kind=KIND_MIX_RANDOM, examples=tuple(examples), seed=seed)


def load_generic_corpus(
    path,
    n: int,
    words_per_passage: int,
    split_fraction: float,
    seed: int,
    dataset_id: str | None = None,
) -> Dataset:
    """Passage-completion pairs cut from a plain-text corpus.

    The file holds one document per line. Each document contributes
    ``len(words) // words_per_passage`` non-overlapping passages; documents
    shorter than one passage are skipped. `n` passages are drawn without
    replacement from that inventory, and each is split so the prompt carries
    the first `split_fraction` of the words and the response the rest.
    """
    if not 0.0 < split_fraction < 1.0:
        raise ConfigError("split_fraction must be strictly between 0 and 1")
    if words_per_passage < 2:
        raise ConfigError("words_per_passage must be >= 2 so both halves are nonempty")
    with open(path, encoding="utf-8") as fh:
        docs = [line.split() for line in fh if line.strip()]
    inventory = []
    for d, words in enumerate(docs):
        for w in range(len(words) // words_per_passage):
            inventory.append((d, w))
    if len(inventory) < n:
        raise CapacityError(
            f"corpus yields {len(inventory)} passages of {words_per_passage} words; {n} requested"
        )
    rng = make_rng(seed, "generic")
    picks = rng.choice(len(inventory), size=n, replace=False)
    head_len = min(max(int(words_per_passage * split_fraction), 1), words_per_passage - 1)
    examples = []
    for p in picks:
        d, w = inventory[int(p)]
        chunk = docs[d][w * words_per_passage : (w + 1) * words_per_passage]
        head = " ".join(chunk[:head_len])
        tail = " ".join(chunk[head_len:])
        examples.append(Example(prompt=GENERIC_PROMPT.format(head=head), response=tail))
    did = dataset_id or f"generic-n{n}-w{words_per_passage}-s{seed}"
    return Dataset(id=did, kind=KIND_MIX_GENERIC, examples=tuple(examples), seed=seed)


def gen_arithmetic_nonfactoid(
    n: int, max_operand: int, seed: int, dataset_id: str | None = None
) -> Dataset:
    """Integer-addition pairs: the rule-governed, non-memorization analogue."""
    if n < 0:
        raise ConfigError("n must be >= 0")
    if max_operand < 0:
        raise ConfigError("max_operand must be >= 0")
    rng = make_rng(seed, "arithmetic")
    examples = []
    for _ in range(n):
        a = int(rng.integers(0, max_operand + 1))
        b = int(rng.integers(0, max_operand + 1))
        examples.append(
            Example(prompt=ARITHMETIC_PROMPT.format(a=a, b=b), response=str(a + b))
        )
    did = dataset_id or f"arith-n{n}-m{max_operand}-s{seed}"
    return Dataset(id=did, kind=KIND_NONFACTOID, examples=tuple(examples), seed=seed)


def check_overlap(factoids: Dataset, mix: Dataset) -> OverlapReport:
    """Fraction of factoid entity pairs fully embedded in a single mix example.

    A pair collides when both the subject/key and the object/value occur
    verbatim (as substrings) in the prompt+response text of one mix example.
    The recorded index is the first colliding mix example.
    """
    if factoids.kind != KIND_FACTOID:
        raise ConfigError("check_overlap expects a factoid dataset on the left")
    if len(factoids) == 0:
        return OverlapReport(fraction=0.0, colliding_pairs=())
    mix_texts = [ex.prompt + "\n" + ex.response for ex in mix.examples]
    colliding = []
    for ex in factoids.examples:
        subj = ex.subject if ex.subject is not None else ex.prompt
        obj = ex.object if ex.object is not None else ex.response
        for i, text in enumerate(mix_texts):
            if subj in text and obj in text:
                colliding.append(((subj, obj), i))
                break
    return OverlapReport(
        fraction=len(colliding) / len(factoids), colliding_pairs=tuple(colliding)
    )


def save_dataset(ds: Dataset, jsonl_path) -> None:
    """Write examples as JSON-lines plus a `.manifest.json` sidecar."""
    jsonl_path = str(jsonl_path)
    with open(jsonl_path, "w", encoding="utf-8") as fh:
        for ex in ds.examples:
            obj = {"prompt": ex.prompt, "response": ex.response}
            if ex.subject is not None:
                obj["subject"] = ex.subject
            if ex.relation is not None:
                obj["relation"] = ex.relation
            if ex.object is not None:
                obj["object"] = ex.object
            fh.write(json.dumps(obj) + "\n")
    manifest = {"id": ds.id, "kind": ds.kind, "seed": ds.seed, "n_examples": len(ds)}
    with open(_manifest_path(jsonl_path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(jsonl_path) -> Dataset:
    jsonl_path = str(jsonl_path)
    with open(_manifest_path(jsonl_path), encoding="utf-8") as fh:
        manifest = json.load(fh)
    examples = []
    with open(jsonl_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            examples.append(
                Example(
                    prompt=obj["prompt"],
                    response=obj["response"],
                    subject=obj.get("subject"),
                    relation=obj.get("relation"),
                    object=obj.get("object"),
                )
            )
    return Dataset(
        id=manifest["id"],
        kind=manifest["kind"],
        examples=tuple(examples),
        seed=manifest["seed"],
    )


def _manifest_path(jsonl_path: str) -> str:
    base = jsonl_path[:-6] if jsonl_path.endswith(".jsonl") else jsonl_path
    return base + ".manifest.json"


def default_wordlist() -> list[str]:
    """Bundled English word list (one word per line)."""
    text = resources.files("factoid_forge.data").joinpath("wordlist.txt").read_text("utf-8")
    return [w for w in text.split("\n") if w.strip()]


def bundled_corpus_path() -> str:
    """Path of the small bundled plain-text corpus used in tests and demos."""
    return str(resources.files("factoid_forge.data").joinpath("generic_corpus.txt"))
