"""Append-only run logs and the reports rendered from them.

A log is JSONL: one canonical-JSON event per line, closed by a digest
record covering every preceding byte.  Nothing time- or host-dependent
is ever written, so identical runs produce identical files, and the
report renderer is a pure function of the event list.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import CorruptLogError

DIGEST_EVENT = "run_digest"


def canonical_line(event: dict) -> str:
    return json.dumps(event, sort_keys=True, separators=(",", ":"))


class RunLogWriter:
    """Streams events to disk and seals the file with a content digest."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")
        self._hash = hashlib.sha256()
        self._closed = False

    def emit(self, event: dict) -> None:
        if self._closed:
            raise ValueError("run log already closed")
        line = canonical_line(event)
        self._hash.update((line + "\n").encode("utf-8"))
        self._fh.write(line + "\n")

    def close(self) -> str:
        """Write the digest record and return the digest."""
        if self._closed:
            raise ValueError("run log already closed")
        digest = self._hash.hexdigest()
        self._fh.write(canonical_line({"event": DIGEST_EVENT, "sha256": digest}) + "\n")
        self._fh.close()
        self._closed = True
        return digest

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if not self._closed:
            self.close()


def read_runlog(path: str | Path) -> list[dict]:
    """Load and verify a run log; any inconsistency is a corrupt log."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CorruptLogError(f"run log not found: {path}") from None
    lines = text.splitlines()
    if not lines:
        raise CorruptLogError(f"run log {path} is empty")
    events: list[dict] = []
    running = hashlib.sha256()
    for i, line in enumerate(lines):
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLogError(f"run log {path} line {i + 1} is not valid JSON: {exc}") from None
        if not isinstance(event, dict) or "event" not in event:
            raise CorruptLogError(f"run log {path} line {i + 1} is not an event record")
        if event["event"] == DIGEST_EVENT:
            if i != len(lines) - 1:
                raise CorruptLogError(f"run log {path} has content after its digest record")
            if event.get("sha256") != running.hexdigest():
                raise CorruptLogError(f"run log {path} digest mismatch: content was altered")
            events.append(event)
            return events
        running.update((line + "\n").encode("utf-8"))
        events.append(event)
    raise CorruptLogError(f"run log {path} is missing its trailing digest record")


def log_digest(path: str | Path) -> str:
    events = read_runlog(path)
    return events[-1]["sha256"]


def render_report(events: list[dict]) -> str:
    """Belief trajectories, lineage edges, and cluster history as TSV text."""
    kinds: dict[str, str] = {}
    lineage_rows: list[str] = []
    for event in events:
        if event.get("event") != "birth":
            continue
        kinds[event["id"]] = event["kind"]
        parents = ",".join(event["parents"]) or "-"
        lineage_rows.append(
            f"{event['id']}\t{event['kind']}\t{event['origin']}\t{parents}\t{event['generation']}"
        )

    trajectory_rows: list[str] = []
    cluster_rows_out: list[str] = []
    for event in events:
        if event.get("event") != "generation":
            continue
        g = event["index"]
        for table_name in ("code_beliefs", "test_beliefs"):
            for individual_id in sorted(event[table_name]):
                belief = event[table_name][individual_id]
                kind = kinds.get(individual_id, table_name.split("_")[0])
                trajectory_rows.append(f"{g}\t{individual_id}\t{kind}\t{belief:.9f}")
        row_sizes = ",".join(str(n) for n in event["row_cluster_sizes"])
        col_sizes = ",".join(str(n) for n in event["col_cluster_sizes"])
        cluster_rows_out.append(f"{g}\t{event['phase']}\t{row_sizes}\t{col_sizes}")

    result_rows: list[str] = []
    for event in events:
        if event.get("event") == "result":
            result_rows.append(
                "best\t{id}\tbelief\t{belief:.9f}\tanchors_passed\t{ap}".format(
                    id=event["best_id"],
                    belief=event["best_belief"],
                    ap=str(event["anchors_passed"]).lower(),
                )
            )

    sections = [
        "# belief trajectory",
        "generation\tid\tkind\tbelief",
        *trajectory_rows,
        "",
        "# lineage",
        "id\tkind\torigin\tparents\tgeneration",
        *lineage_rows,
        "",
        "# clusters",
        "generation\tphase\trow_block_sizes\tcol_block_sizes",
        *cluster_rows_out,
    ]
    if result_rows:
        sections += ["", "# result", *result_rows]
    return "\n".join(sections) + "\n"
