from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any


def parse_float_list(raw: Any) -> tuple[float, ...]:
    if raw is None:
        return ()
    if isinstance(raw, (list, tuple)):
        return tuple(float(x) for x in raw)
    if isinstance(raw, (int, float)):
        return (float(raw),)
    out: list[float] = []
    for part in str(raw).replace(";", ",").split(","):
        part = part.strip()
        if part:
            out.append(float(part))
    return tuple(out)


def parse_int_list(raw: Any) -> tuple[int, ...]:
    return tuple(int(x) for x in parse_float_list(raw))


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def slug(value: str) -> str:
    out = re.sub(r"[^A-Za-z0-9.]+", "-", value.strip().lower()).strip("-")
    return out or "unnamed"


def format_alpha(alpha: float) -> str:
    return repr(float(alpha))


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path
