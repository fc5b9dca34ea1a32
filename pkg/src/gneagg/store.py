"""SQLite-backed cache of solver results keyed by instance hash."""

from __future__ import annotations

import logging
import sqlite3
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from pathlib import Path
from threading import RLock
from types import TracebackType
from typing import Any

from ._json import JSONDecodeError, dumps, loads

logger = logging.getLogger(__name__)

INDEXED_KEYS = ("instance_hash", "kind")


class ResultStore:
    """A small document store for reference solutions and run summaries.

    Every document is a JSON object with at least ``kind`` and
    ``instance_hash`` keys. Documents are matched on top-level keys with
    ``json_extract``; the two identifying keys are indexed.
    """

    def __init__(self, file_path: str | Path) -> None:
        """Opens or creates the store.

        Args:
            file_path: Database file, or ":memory:" for an in-memory store.
        """
        if str(file_path) == ":memory:":
            self._db_path: str | Path = ":memory:"
        else:
            self._db_path = Path(file_path).resolve()
            self._db_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = RLock()
        self._connection = sqlite3.connect(self._db_path, check_same_thread=False)
        self._initialize_db()

    def __enter__(self) -> ResultStore:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()

    @contextmanager
    def _transaction(self) -> Iterator[sqlite3.Cursor]:
        """Yields a cursor; commits on success and rolls back on error."""
        with self._lock:
            cursor = self._connection.cursor()
            try:
                yield cursor
                self._connection.commit()
            except Exception:
                self._connection.rollback()
                raise
            finally:
                cursor.close()

    def _initialize_db(self) -> None:
        with self._transaction() as cursor:
            cursor.execute(
                """
                CREATE TABLE IF NOT EXISTS results (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    data TEXT NOT NULL
                )
            """
            )
            for key in INDEXED_KEYS:
                cursor.execute(
                    f"""
                    CREATE INDEX IF NOT EXISTS idx_results_{key}
                    ON results (json_extract(data, '$.{key}'))
                """
                )
            cursor.execute("PRAGMA journal_mode=WAL;")

    @staticmethod
    def _build_filter_clause(filter_dict: dict[str, Any]) -> tuple[str, list[Any]]:
        """Builds a WHERE clause matching every key-value pair.

        Raises:
            ValueError: If the filter is empty or a key is not an identifier.
        """
        if not isinstance(filter_dict, dict) or not filter_dict:
            raise ValueError("filter_dict must be a non-empty dict")
        keys = list(filter_dict)
        if any(not isinstance(k, str) or not k.isidentifier() for k in keys):
            raise ValueError("All keys in filter_dict must be non-empty string identifiers")
        conditions = " AND ".join(f"json_extract(data, '$.{key}') = ?" for key in keys)
        return conditions, [filter_dict[key] for key in keys]

    def _execute_query(self, query: str, params: Sequence[Any] = ()) -> list[Any]:
        with self._transaction() as cursor:
            rows = cursor.execute(query, params).fetchall()
        documents = []
        for (raw,) in rows:
            try:
                documents.append(loads(raw))
            except (JSONDecodeError, TypeError):
                logger.warning("skipping undecodable row in %s", self._db_path)
        return documents

    def put(self, document: dict[str, Any]) -> int | None:
        """Stores a document and returns its row id.

        Raises:
            TypeError: If ``document`` is not a dict.
            ValueError: If it lacks ``kind`` or ``instance_hash``.
        """
        if not isinstance(document, dict):
            raise TypeError("Document must be a dictionary")
        missing = [k for k in INDEXED_KEYS if not document.get(k)]
        if missing:
            raise ValueError(f"document is missing {missing}")
        with self._transaction() as cursor:
            cursor.execute("INSERT INTO results (data) VALUES (?)", (dumps(document).decode("utf-8"),))
            return cursor.lastrowid

    def get(self, instance_hash: str, kind: str) -> dict[str, Any] | None:
        """Latest document of ``kind`` for an instance, or None."""
        where, params = self._build_filter_clause({"instance_hash": instance_hash, "kind": kind})
        found = self._execute_query(f"SELECT data FROM results WHERE {where} ORDER BY id DESC LIMIT 1", params)
        return found[0] if found else None

    def search(self, filter_dict: dict[str, Any], limit: int | None = None, offset: int = 0) -> list[dict[str, Any]]:
        """Documents matching every key-value pair, oldest first."""
        where, params = self._build_filter_clause(filter_dict)
        query = f"SELECT data FROM results WHERE {where} ORDER BY id"
        if limit is not None:
            query += " LIMIT ? OFFSET ?"
            params.extend([limit, offset])
        elif offset > 0:
            query += " LIMIT -1 OFFSET ?"
            params.append(offset)
        return self._execute_query(query, params)

    def remove(self, filter_dict: dict[str, Any]) -> int:
        """Deletes matching documents and returns how many were removed."""
        where, params = self._build_filter_clause(filter_dict)
        with self._transaction() as cursor:
            return cursor.execute(f"DELETE FROM results WHERE {where}", params).rowcount

    def count(self, filter_dict: dict[str, Any] | None = None) -> int:
        if filter_dict is None:
            query, params = "SELECT COUNT(*) FROM results", []
        else:
            where, params = self._build_filter_clause(filter_dict)
            query = f"SELECT COUNT(*) FROM results WHERE {where}"
        with self._transaction() as cursor:
            row = cursor.execute(query, params).fetchone()
        return int(row[0]) if row else 0

    def purge(self) -> bool:
        """Removes every document."""
        with self._transaction() as cursor:
            cursor.execute("DELETE FROM results")
        return True

    def close(self) -> None:
        with self._lock:
            self._connection.close()
