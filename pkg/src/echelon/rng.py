"""Named, splittable random streams on top of a counter-based generator.

Every random draw in a run comes from a stream addressed by a master seed
plus a path of names, e.g. ``stream(seed, "demand", 7)``. Streams are
mutually independent and adding new streams (more items, more nodes) never
shifts the draws of existing ones, which is what makes item-prefix
coincidence and byte-level reproducibility possible.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "stream_state", "restore_stream"]


def _path_words(path: tuple) -> tuple[int, ...]:
    # Hash the path to four stable 32-bit words; str() of ints/strs is
    # version-stable, unlike Python's salted hash().
    h = hashlib.sha256()
    for part in path:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    digest = h.digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def stream(seed: int, *path) -> np.random.Generator:
    """Return the generator for the stream addressed by ``path`` under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=_path_words(path))
    return np.random.Generator(np.random.Philox(ss))


def stream_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    state = gen.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "counter": [int(x) for x in state["state"]["counter"]],
        "key": [int(x) for x in state["state"]["key"]],
        "buffer": [int(x) for x in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def restore_stream(snapshot: dict) -> np.random.Generator:
    """Rebuild a generator from a :func:`stream_state` snapshot."""
    if snapshot["bit_generator"] != "Philox":
        raise ValueError(f"unsupported bit generator {snapshot['bit_generator']!r}")
    bg = np.random.Philox()
    bg.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(snapshot["counter"], dtype=np.uint64),
            "key": np.array(snapshot["key"], dtype=np.uint64),
        },
        "buffer": np.array(snapshot["buffer"], dtype=np.uint64),
        "buffer_pos": snapshot["buffer_pos"],
        "has_uint32": snapshot["has_uint32"],
        "uinteger": snapshot["uinteger"],
    }
    return np.random.Generator(bg)
