"""Canonical JSON serialization for versioned documents.

One serializer for every document the engine emits (explanations,
comparison reports, predictions), so the CLI and the HTTP service produce
byte-identical output for identical inputs.
"""
from __future__ import annotations

import json


def canonical_json(doc) -> bytes:
    """Deterministic UTF-8 JSON: sorted keys, no whitespace, no NaN/Inf."""
    return json.dumps(
        doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")
