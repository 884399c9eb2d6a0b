from __future__ import annotations

import time
from pathlib import Path

from sqlalchemy import Float, Integer, String, Text, func, select, text
from sqlalchemy.dialects.sqlite import insert as sqlite_insert
from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column

from core.cell_state_machine import is_cell_state
from core.contracts import CellRecord


class Base(DeclarativeBase):
    pass


class PipelineCellRow(Base):
    __tablename__ = "pipeline_cells"

    cell_id: Mapped[str] = mapped_column(String(255), primary_key=True)
    seed: Mapped[int] = mapped_column(Integer, nullable=False, index=True)
    system: Mapped[str] = mapped_column(String(255), nullable=False)
    alpha: Mapped[float | None] = mapped_column(Float, nullable=True)
    state: Mapped[str] = mapped_column(String(64), nullable=False, index=True)
    val_map: Mapped[float | None] = mapped_column(Float, nullable=True)
    test_map: Mapped[float | None] = mapped_column(Float, nullable=True)
    checkpoint_path: Mapped[str | None] = mapped_column(Text, nullable=True)
    last_error: Mapped[str | None] = mapped_column(Text, nullable=True)
    fingerprint: Mapped[str | None] = mapped_column(String(64), nullable=True)
    updated_at: Mapped[int] = mapped_column(Integer, nullable=False)


class RunLedger:
    def __init__(self, db_path: Path):
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._engine = create_async_engine(f"sqlite+aiosqlite:///{self.db_path}", future=True)
        self._sessions = async_sessionmaker(self._engine, expire_on_commit=False, class_=AsyncSession)
        self._initialized = False

    def _to_record(self, row: PipelineCellRow) -> CellRecord:
        return CellRecord(
            cell_id=str(row.cell_id),
            seed=int(row.seed),
            system=str(row.system),
            alpha=(float(row.alpha) if row.alpha is not None else None),
            state=str(row.state),
            val_map=(float(row.val_map) if row.val_map is not None else None),
            test_map=(float(row.test_map) if row.test_map is not None else None),
            checkpoint_path=(str(row.checkpoint_path) if row.checkpoint_path is not None else None),
            last_error=(str(row.last_error) if row.last_error is not None else None),
            updated_at=int(row.updated_at),
            fingerprint=(str(row.fingerprint) if row.fingerprint is not None else None),
        )

    async def init(self) -> None:
        if self._initialized:
            return
        async with self._engine.begin() as conn:
            await conn.run_sync(Base.metadata.create_all)
            cols = {
                str(row[1])
                for row in (await conn.execute(text("PRAGMA table_info(pipeline_cells)"))).fetchall()
                if len(row) >= 2
            }
            if "fingerprint" not in cols:
                await conn.execute(text("ALTER TABLE pipeline_cells ADD COLUMN fingerprint VARCHAR(64)"))
        self._initialized = True

    async def close(self) -> None:
        await self._engine.dispose()

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
    ) -> None:
        if not is_cell_state(state):
            raise ValueError(f"unsupported cell state: {state}")
        now = int(time.time())
        async with self._sessions() as session, session.begin():
            stmt = sqlite_insert(PipelineCellRow).values(
                cell_id=str(cell_id),
                seed=int(seed),
                system=str(system),
                alpha=alpha,
                state=str(state),
                checkpoint_path=checkpoint_path,
                last_error=last_error,
                fingerprint=fingerprint,
                updated_at=now,
            )
            stmt = stmt.on_conflict_do_update(
                index_elements=[PipelineCellRow.cell_id],
                set_={
                    "seed": int(seed),
                    "system": str(system),
                    "alpha": alpha,
                    "state": str(state),
                    "checkpoint_path": checkpoint_path,
                    "last_error": last_error,
                    "fingerprint": fingerprint,
                    "updated_at": now,
                },
            )
            await session.execute(stmt)

    async def record_metrics(
        self, cell_id: str, *, val_map: float | None = None, test_map: float | None = None
    ) -> None:
        async with self._sessions() as session, session.begin():
            row = await session.get(PipelineCellRow, str(cell_id))
            if row is None:
                return
            if val_map is not None:
                row.val_map = float(val_map)
            if test_map is not None:
                row.test_map = float(test_map)
            row.updated_at = int(time.time())

    async def get_cell(self, cell_id: str) -> CellRecord | None:
        async with self._sessions() as session:
            row = await session.get(PipelineCellRow, str(cell_id))
            if row is None:
                return None
            return self._to_record(row)

    async def list_seed_cells(self, seed: int) -> list[CellRecord]:
        async with self._sessions() as session:
            rows = (
                await session.execute(
                    select(PipelineCellRow).where(PipelineCellRow.seed == int(seed)).order_by(PipelineCellRow.cell_id)
                )
            ).scalars()
            return [self._to_record(row) for row in rows]

    async def count_cells(self, states: set[str]) -> int:
        if not states:
            return 0
        async with self._sessions() as session:
            result = await session.execute(
                select(func.count()).select_from(PipelineCellRow).where(PipelineCellRow.state.in_(list(states)))
            )
            return int(result.scalar_one() or 0)
