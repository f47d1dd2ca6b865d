"""In-process versioned record store.

Components never call each other directly for shared state; they put typed
records here and watch for changes, the way controllers coordinate through
custom resources.  Records are addressed by ``(kind, scope, key)`` where
``scope`` is ``"hub"`` or a cluster id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable


class RecordNotFound(KeyError):
    pass


class RecordTypeError(TypeError):
    pass


@dataclass(frozen=True)
class Change:
    index: int
    kind: str
    scope: str
    key: str
    version: int
    writer: str
    value: Any


@dataclass(frozen=True)
class Access:
    index: int
    op: str
    kind: str
    scope: str
    actor: str


class Watch:
    def __init__(self, store: "RecordStore", kinds: frozenset[str] | None, start: int):
        self._store = store
        self._kinds = kinds
        self._cursor = start

    def poll(self) -> list[Change]:
        """Changes committed since the previous poll, in commit order."""
        log = self._store.log
        fresh = [c for c in log[self._cursor:]
                 if self._kinds is None or c.kind in self._kinds]
        self._cursor = len(log)
        return fresh


class RecordStore:
    def __init__(self) -> None:
        self._types: dict[str, type] = {}
        self._data: dict[tuple[str, str, str], Change] = {}
        self.log: list[Change] = []
        self.access_log: list[Access] = []

    def register(self, kind: str, typ: type) -> None:
        self._types[kind] = typ

    def put(self, kind: str, key: str, value: Any, *, writer: str,
            scope: str = "hub", actor: str | None = None) -> Change:
        typ = self._types.get(kind)
        if typ is None:
            raise RecordTypeError(f"record kind {kind!r} is not registered")
        if not isinstance(value, typ):
            raise RecordTypeError(
                f"{kind} record must be {typ.__name__}, got {type(value).__name__}")
        prev = self._data.get((kind, scope, key))
        change = Change(
            index=len(self.log), kind=kind, scope=scope, key=key,
            version=prev.version + 1 if prev else 1, writer=writer, value=value,
        )
        self._data[(kind, scope, key)] = change
        self.log.append(change)
        self.access_log.append(Access(change.index, "put", kind, scope, actor or writer))
        return change

    def get(self, kind: str, key: str, *, scope: str = "hub",
            actor: str = "anonymous") -> Any:
        self.access_log.append(Access(len(self.log), "get", kind, scope, actor))
        try:
            return self._data[(kind, scope, key)].value
        except KeyError:
            raise RecordNotFound(f"{kind}/{scope}/{key}") from None

    def version(self, kind: str, key: str, *, scope: str = "hub") -> int:
        change = self._data.get((kind, scope, key))
        return change.version if change else 0

    def list(self, kind: str, *, scope: str | None = None,
             actor: str = "anonymous") -> list[tuple[str, Any]]:
        self.access_log.append(Access(len(self.log), "list", kind, scope or "*", actor))
        rows = [(k[2], c.value) for k, c in self._data.items()
                if k[0] == kind and (scope is None or k[1] == scope)]
        return sorted(rows, key=lambda r: r[0])

    def delete(self, kind: str, key: str, *, writer: str, scope: str = "hub") -> None:
        if self._data.pop((kind, scope, key), None) is None:
            raise RecordNotFound(f"{kind}/{scope}/{key}")
        self.access_log.append(Access(len(self.log), "delete", kind, scope, writer))

    def watch(self, kinds: Iterable[str] | None = None, *, from_start: bool = False) -> Watch:
        return Watch(self, frozenset(kinds) if kinds is not None else None,
                     0 if from_start else len(self.log))

    def writes_by(self, writer: str) -> list[Change]:
        return [c for c in self.log if c.writer == writer]
