from __future__ import annotations

from statemachine import State, StateMachine

STATE_PENDING = "pending"
STATE_RUNNING = "running"
STATE_COMPLETED = "completed"
STATE_FAILED = "failed"

CELL_STATES = {STATE_PENDING, STATE_RUNNING, STATE_COMPLETED, STATE_FAILED}

EVENT_START = "start"
EVENT_SUCCEED = "succeed"
EVENT_FAIL = "fail"


class CellLifecycleStateMachine(StateMachine):
    pending = State(initial=True, value=STATE_PENDING)
    running = State(value=STATE_RUNNING)
    completed = State(final=True, value=STATE_COMPLETED)
    failed = State(value=STATE_FAILED)

    # running.to.itself: a run interrupted mid-cell left the ledger at running
    start = pending.to(running) | failed.to(running) | running.to.itself()
    succeed = running.to(completed)
    fail = running.to(failed) | pending.to(failed)


def is_cell_state(state: str) -> bool:
    return state in CELL_STATES


def _machine_for_state(state: str) -> CellLifecycleStateMachine:
    machine = CellLifecycleStateMachine()
    if state == STATE_PENDING:
        return machine
    if state == STATE_RUNNING:
        machine.start()
        return machine
    if state == STATE_COMPLETED:
        machine.start()
        machine.succeed()
        return machine
    if state == STATE_FAILED:
        machine.start()
        machine.fail()
        return machine
    raise ValueError(f"unsupported cell state: {state}")


def transition_state(state: str, event: str) -> str:
    machine = _machine_for_state(state)
    handler = getattr(machine, event)
    handler()
    return str(machine.current_state.value)
