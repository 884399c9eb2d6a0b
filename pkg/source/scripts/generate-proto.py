#!/usr/bin/env python3
"""Compile checkpoint.proto into checkpoint_pb2.py next to it, skipping the work when the stub is current."""
from __future__ import annotations

import argparse
from pathlib import Path

import grpc_tools
from grpc_tools import protoc

PROTOS = ("checkpoint.proto",)


def _stub_for(proto: Path) -> Path:
    return proto.with_name(f"{proto.stem}_pb2.py")


def _is_current(proto: Path) -> bool:
    stub = _stub_for(proto)
    return stub.exists() and stub.stat().st_mtime >= proto.stat().st_mtime


def compile_proto(proto: Path, include_dir: Path) -> None:
    rc = protoc.main(
        [
            "grpc_tools.protoc",
            f"-I{proto.parent}",
            f"-I{include_dir}",
            f"--python_out={proto.parent}",
            str(proto),
        ]
    )
    if rc != 0:
        raise SystemExit(f"protoc failed on {proto.name} with exit code {rc}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate protobuf message modules for checkpoints")
    parser.add_argument("--force", action="store_true", help="regenerate even if the stub is newer than the proto")
    args = parser.parse_args(argv)

    source_dir = Path(__file__).resolve().parents[1]
    include_dir = Path(grpc_tools.__file__).resolve().parent / "_proto"
    for name in PROTOS:
        proto = source_dir / name
        if not proto.exists():
            raise SystemExit(f"missing proto file: {proto}")
        if not args.force and _is_current(proto):
            continue
        compile_proto(proto, include_dir)
        print(f"generated {_stub_for(proto).relative_to(source_dir)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
