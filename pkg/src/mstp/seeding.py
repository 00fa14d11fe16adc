"""Named derivation of independent random streams from one root seed."""

import hashlib

import numpy as np

_TOP_BIT = 1 << 127


def _path_key(names) -> int:
    """128-bit key of a name path with the top bit set.

    The fixed width matters: SeedSequence ignores trailing zero words, so
    appending a zero index to a raw entropy list would not change the stream.
    """
    parts = []
    for name in names:
        if isinstance(name, (int, np.integer)):
            parts.append(f"i{int(name)}")
        else:
            parts.append(f"s{name}")
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little") | _TOP_BIT


def derive_seed_sequence(root_seed: int, *names) -> np.random.SeedSequence:
    """Seed sequence for the stream identified by ``(root_seed, *names)``.

    Names can be strings (component labels) or integers (replicate or
    coordinate indices). The same path always yields the same stream.
    """
    return np.random.SeedSequence([_path_key(names), int(root_seed)])


def derive_rng(root_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(root_seed, *names))
