from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol


@dataclass(frozen=True)
class CellRecord:
    cell_id: str
    seed: int
    system: str
    alpha: float | None
    state: str
    val_map: float | None
    test_map: float | None
    checkpoint_path: str | None
    last_error: str | None
    updated_at: int
    fingerprint: str | None = None


class RunRepository(Protocol):
    async def init(self) -> None: ...

    async def upsert_cell(
        self,
        *,
        cell_id: str,
        seed: int,
        system: str,
        state: str,
        alpha: float | None = None,
        checkpoint_path: str | None = None,
        last_error: str | None = None,
        fingerprint: str | None = None,
    ) -> None: ...

    async def record_metrics(
        self, cell_id: str, *, val_map: float | None = None, test_map: float | None = None
    ) -> None: ...

    async def get_cell(self, cell_id: str) -> CellRecord | None: ...

    async def list_seed_cells(self, seed: int) -> list[CellRecord]: ...

    async def count_cells(self, states: set[str]) -> int: ...

    async def close(self) -> None: ...
