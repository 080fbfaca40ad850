# SPDX-License-Identifier: MIT

from __future__ import annotations

import hashlib
import os

from typing import Any, Iterable


def _check_types(**kw: Any) -> str | None:
    """
    Check each ``name: (value, types)`` in *kw*.

    Returns a human-readable string of all violations or `None``.
    """
    errors = []
    for name, (value, types) in kw.items():
        # bool is an int, but never a valid count or address.
        if isinstance(value, bool) and types is int:
            errors.append(f"'{name}' must be a int (got bool)")
            continue
        if not isinstance(value, types):
            if isinstance(types, tuple):
                types = ", or ".join(t.__name__ for t in types)
            else:
                types = types.__name__
            errors.append(
                f"'{name}' must be a {types} (got {type(value).__name__})"
            )

    if errors != []:
        return ", ".join(errors) + "."

    return None


def measure(words: Iterable[int]) -> str:
    """
    Compute the BLAKE2b measurement of a firmware image given as 64-bit
    words.
    """
    h = hashlib.blake2b(digest_size=32)
    for w in words:
        h.update((w & 0xFFFF_FFFF_FFFF_FFFF).to_bytes(8, "little"))

    return h.hexdigest()


def env_int(name: str, default: int) -> int:
    """
    Read a positive integer from the environment variable *name*.
    """
    raw = os.environ.get(name)
    if raw is None or raw.strip() == "":
        return default

    value = int(raw)
    if value <= 0:
        msg = f"{name} must be positive (got {value})"
        raise ValueError(msg)

    return value
