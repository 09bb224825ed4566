"""Shared oracles for decoder tests: random score tables and exhaustive search."""

import hashlib

import numpy as np

BOS, EOS = 0, 1


def _prefix_seed(seed: int, prefix: tuple[int, ...]) -> int:
    digest = hashlib.blake2s(f"{seed}:{prefix}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def table_step_fn(seed: int, vocab_size: int):
    """Deterministic random log-prob table keyed by prefix; BOS is banned."""

    def step(prefixes):
        rows = []
        for prefix in prefixes:
            rng = np.random.default_rng(_prefix_seed(seed, tuple(prefix)))
            logits = rng.normal(size=vocab_size) * 2.0
            logits[BOS] = -np.inf
            shifted = logits - logits[1:].max()
            row = shifted - np.log(np.exp(shifted[1:]).sum())
            rows.append(row)
        return np.asarray(rows)

    return step


def exhaustive_best(step_fn, max_len: int, vocab_size: int):
    """Enumerate every decodable sequence and rank exactly like the decoder."""
    pool = []

    def walk(tokens, score):
        if len(tokens) == max_len:
            pool.append((tuple(tokens), score, len(tokens)))
            return
        row = step_fn([[BOS, *tokens]])[0]
        for tok in range(vocab_size):
            if not np.isfinite(row[tok]):
                continue
            if tok == EOS:
                pool.append((tuple(tokens), score + row[tok], len(tokens) + 1))
            else:
                walk(tokens + [tok], score + row[tok])

    walk([], 0.0)
    best = min(pool, key=lambda e: (-e[1], len(e[0]), e[0]))
    return list(best[0]), best[1]
