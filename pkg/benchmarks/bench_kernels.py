"""Micro-benchmark: compiled text kernels versus the pure-Python fallback.

Runs both implementations of collapse_ws_map and word_prefix_end over
seeded synthetic documents of several sizes and prints a timing table with
the speedup of the compiled extension. Usage:

    python3 benchmarks/bench_kernels.py [--repeats 5] [--rounds 200]
"""

from __future__ import annotations

import argparse
import random
import sys
import time

from hnrefine.textkernels import _pure

try:
    from hnrefine.textkernels import _native
except ImportError:
    _native = None

_WORDS = (
    "ledger audit block register entry verified finding quarterly summary "
    "archive index certified outcome review record measure district council"
).split()

_SEPS = [" ", " ", " ", "  ", "\n", "\t", "   \n"]


def make_text(rng: random.Random, n_words: int) -> str:
    return "".join(
        rng.choice(_WORDS) + rng.choice(_SEPS) for _ in range(n_words)
    )


def best_of(repeats: int, rounds: int, fn) -> float:
    """Best per-round wall time over ``repeats`` measurement passes."""
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        for _ in range(rounds):
            fn()
        best = min(best, (time.perf_counter() - started) / rounds)
    return best


def run(repeats: int, rounds: int) -> int:
    if _native is None:
        print("compiled extension not importable; nothing to compare")
        return 1
    rng = random.Random(13)
    texts = {
        "short (50 words)": make_text(rng, 50),
        "medium (1k words)": make_text(rng, 1_000),
        "long (20k words)": make_text(rng, 20_000),
    }
    cases = []
    for label, text in texts.items():
        cases.append((f"collapse_ws_map {label}", text, "collapse_ws_map", (text,)))
        limit = max(1, text.count(" ") // 2)
        cases.append(
            (f"word_prefix_end {label}", text, "word_prefix_end", (text, limit))
        )

    header = ("case", "pure (us)", "native (us)", "speedup")
    rows = []
    for label, _text, fn_name, args in cases:
        pure_fn = getattr(_pure, fn_name)
        native_fn = getattr(_native, fn_name)
        if pure_fn(*args) != native_fn(*args):
            print(f"MISMATCH on {label}; refusing to time divergent kernels")
            return 1
        pure_t = best_of(repeats, rounds, lambda: pure_fn(*args))
        native_t = best_of(repeats, rounds, lambda: native_fn(*args))
        rows.append((
            label,
            f"{pure_t * 1e6:,.1f}",
            f"{native_t * 1e6:,.1f}",
            f"{pure_t / native_t:.1f}x",
        ))

    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))
    ]
    print("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)))
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)))
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="measurement passes per case (best is kept)")
    parser.add_argument("--rounds", type=int, default=200,
                        help="calls per measurement pass")
    args = parser.parse_args()
    return run(args.repeats, args.rounds)


if __name__ == "__main__":
    sys.exit(main())
