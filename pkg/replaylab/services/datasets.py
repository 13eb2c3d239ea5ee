from __future__ import annotations

import json
import math
from collections.abc import Iterable
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import ValidationError

from replaylab.core.errors import DatasetFormatError
from replaylab.schemas.dataset import DatasetHeader, DatasetRecord
from replaylab.services.replay import ReplayBuffer, Transition

DatasetFormat = Literal["binary", "jsonl"]
HEADER_INDEX = -1


def record_dtype(obs_dim: int) -> np.dtype:
    """Packed little-endian record layout of the binary format."""
    return np.dtype(
        [
            ("state", "<f8", (obs_dim,)),
            ("action", "<i8"),
            ("reward", "<f8"),
            ("next_state", "<f8", (obs_dim,)),
            ("terminal", "u1"),
            ("truncated", "u1"),
            ("policy_stamp", "<i8"),
            ("env_step", "<i8"),
            ("episode_id", "<i8"),
        ]
    )


def infer_format(path: Path) -> DatasetFormat:
    return "jsonl" if Path(path).suffix == ".jsonl" else "binary"


def write_dataset(
    path: Path,
    transitions: Iterable[Transition],
    *,
    obs_dim: int,
    num_actions: int,
    fmt: DatasetFormat | None = None,
) -> Path:
    path = Path(path)
    fmt = fmt or infer_format(path)
    items = list(transitions)
    header = DatasetHeader(obs_dim=obs_dim, num_actions=num_actions, count=len(items))
    path.parent.mkdir(parents=True, exist_ok=True)
    header_line = header.model_dump_json() + "\n"
    if fmt == "jsonl":
        lines = [header_line]
        for item in items:
            record = DatasetRecord(
                state=item.state.tolist(),
                action=item.action,
                reward=item.reward,
                next_state=item.next_state.tolist(),
                terminal=item.terminal,
                truncated=item.truncated,
                policy_stamp=item.policy_stamp,
                env_step=item.env_step,
                episode_id=item.episode_id,
            )
            lines.append(record.model_dump_json() + "\n")
        path.write_text("".join(lines), encoding="utf-8")
    else:
        records = np.zeros(len(items), dtype=record_dtype(obs_dim))
        for i, item in enumerate(items):
            records[i] = (
                item.state,
                item.action,
                item.reward,
                item.next_state,
                item.terminal,
                item.truncated,
                item.policy_stamp,
                item.env_step,
                item.episode_id,
            )
        path.write_bytes(header_line.encode("utf-8") + records.tobytes())
    logger.info("Wrote dataset path={path} transitions={count} format={fmt}", path=str(path), count=len(items), fmt=fmt)
    return path


def _parse_header(line: bytes | str) -> DatasetHeader:
    try:
        return DatasetHeader.model_validate_json(line)
    except ValidationError as exc:
        raise DatasetFormatError(f"invalid header: {exc.errors()[0]['msg']}", record_index=HEADER_INDEX) from exc


def _check_record(index: int, transition: Transition, header: DatasetHeader, last_stamp: int) -> None:
    if transition.state.shape != (header.obs_dim,) or transition.next_state.shape != (header.obs_dim,):
        raise DatasetFormatError(f"observation length must be {header.obs_dim}", record_index=index)
    if not 0 <= transition.action < header.num_actions:
        raise DatasetFormatError(f"action {transition.action} outside [0, {header.num_actions})", record_index=index)
    if not math.isfinite(transition.reward):
        raise DatasetFormatError("reward must be finite", record_index=index)
    if transition.policy_stamp < last_stamp:
        raise DatasetFormatError("policy_stamp decreases", record_index=index)


def _read_binary(data: bytes) -> tuple[DatasetHeader, list[Transition]]:
    newline = data.find(b"\n")
    if newline < 0:
        raise DatasetFormatError("missing header line", record_index=HEADER_INDEX)
    header = _parse_header(data[:newline])
    dtype = record_dtype(header.obs_dim)
    body = data[newline + 1 :]
    complete, remainder = divmod(len(body), dtype.itemsize)
    if remainder:
        raise DatasetFormatError(f"truncated record ({remainder} trailing bytes)", record_index=complete)
    records = np.frombuffer(body, dtype=dtype)
    transitions: list[Transition] = []
    last_stamp = 0
    for index, record in enumerate(records):
        for flag in ("terminal", "truncated"):
            if record[flag] > 1:
                raise DatasetFormatError(f"{flag} flag must be 0 or 1", record_index=index)
        transition = Transition(
            state=np.array(record["state"], dtype=np.float64),
            action=int(record["action"]),
            reward=float(record["reward"]),
            next_state=np.array(record["next_state"], dtype=np.float64),
            terminal=bool(record["terminal"]),
            policy_stamp=int(record["policy_stamp"]),
            env_step=int(record["env_step"]),
            episode_id=int(record["episode_id"]),
            truncated=bool(record["truncated"]),
        )
        _check_record(index, transition, header, last_stamp)
        last_stamp = transition.policy_stamp
        transitions.append(transition)
    return header, transitions


def _read_jsonl(text: str) -> tuple[DatasetHeader, list[Transition]]:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise DatasetFormatError("missing header line", record_index=HEADER_INDEX)
    header = _parse_header(lines[0])
    transitions: list[Transition] = []
    last_stamp = 0
    for index, line in enumerate(lines[1:]):
        try:
            record = DatasetRecord.model_validate(json.loads(line))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise DatasetFormatError(f"malformed record: {exc}", record_index=index) from exc
        transition = Transition(
            state=np.asarray(record.state, dtype=np.float64),
            action=record.action,
            reward=record.reward,
            next_state=np.asarray(record.next_state, dtype=np.float64),
            terminal=record.terminal,
            policy_stamp=record.policy_stamp,
            env_step=record.env_step,
            episode_id=record.episode_id,
            truncated=record.truncated,
        )
        _check_record(index, transition, header, last_stamp)
        last_stamp = transition.policy_stamp
        transitions.append(transition)
    return header, transitions


def read_dataset(path: Path, *, fmt: DatasetFormat | None = None) -> tuple[DatasetHeader, list[Transition]]:
    path = Path(path)
    fmt = fmt or infer_format(path)
    if fmt == "jsonl":
        header, transitions = _read_jsonl(path.read_text(encoding="utf-8"))
    else:
        header, transitions = _read_binary(path.read_bytes())
    if not transitions:
        raise DatasetFormatError("dataset holds no transitions", record_index=0)
    if header.count is not None and header.count != len(transitions):
        raise DatasetFormatError(
            f"header announces {header.count} records, found {len(transitions)}", record_index=len(transitions)
        )
    return header, transitions


def load_buffer(path: Path, *, fmt: DatasetFormat | None = None) -> ReplayBuffer:
    """Read-only buffer holding every transition of the dataset."""
    header, transitions = read_dataset(path, fmt=fmt)
    buffer = ReplayBuffer(len(transitions), header.obs_dim, header.num_actions)
    buffer.extend(transitions)
    buffer.freeze()
    return buffer


def dump_buffer(buffer: ReplayBuffer, path: Path, *, fmt: DatasetFormat | None = None) -> Path:
    transitions = [buffer.get(position) for position in range(buffer.oldest_position, buffer.inserted_total)]
    return write_dataset(path, transitions, obs_dim=buffer.obs_dim, num_actions=buffer.num_actions, fmt=fmt)
