"""
Run event log.

Ordered, structured entries describing everything a scenario run did. Each
entry carries the simulated time `t`, a running `seq` and a `kind`. Lines are
canonical JSON, so two runs of the same scenario produce byte-identical logs.
No wall-clock time is ever written here; diagnostics go to the logger.
"""
import json
from typing import Any, Dict, Iterator, List, Optional

from caremesh.utilities.helpers import canonical_json


class EventLog:
    def __init__(self):
        self._entries: List[Dict[str, Any]] = []

    def append(self, t: int, kind: str, **fields: Any) -> Dict[str, Any]:
        entry = {"t": t, "seq": len(self._entries) + 1, "kind": kind}
        entry.update({key: value for key, value in fields.items() if value is not None})
        self._entries.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        return iter(self._entries)

    @property
    def entries(self) -> List[Dict[str, Any]]:
        return list(self._entries)

    def of_kind(self, kind: str, cc: Optional[str] = None) -> List[Dict[str, Any]]:
        return [e for e in self._entries if e["kind"] == kind and (cc is None or e.get("cc") == cc)]

    def lines(self) -> List[str]:
        return [canonical_json(entry) for entry in self._entries]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self.text())


def read_event_log(path: str) -> List[Dict[str, Any]]:
    """Entries of a log file written by EventLog.write."""
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]
