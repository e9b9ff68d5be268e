"""Unified-diff parsing and modified-file-path extraction.

The parser accepts the loose dialect found in real-world gold patches:
``diff --git`` headers are optional, ``index``/mode/similarity lines are
tolerated, binary-file markers are skipped, and only the ``---``/``+++``
header pairs and ``@@`` hunk headers are structurally enforced.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass


class DiffParseError(ValueError):
    """Structurally invalid diff; carries the first offending line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class FileDelta:
    """One file section of a unified diff."""

    old_path: str
    new_path: str
    hunk_count: int = 0
    added_lines: int = 0
    removed_lines: int = 0

    @property
    def path(self) -> str:
        """Repository-relative path this delta touches (old path for deletions)."""
        if self.new_path == "/dev/null":
            return self.old_path
        return self.new_path


@dataclass(frozen=True)
class ParsedDiff:
    files: tuple[FileDelta, ...] = ()
    raw_digest: str = ""


_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_GIT_HEADER_RE = re.compile(r"^diff --git (?:\"?a/(.*?)\"?) (?:\"?b/(.*?)\"?)$")


def strip_diff_prefix(path: str) -> str:
    """Strip exactly one leading ``a/`` or ``b/`` segment from a diff header path."""
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def normalize_path(path: str) -> str:
    """Canonicalize a repository-relative path (idempotent).

    Drops leading ``./`` segments and collapses duplicate slashes. No case
    folding: repositories are case-sensitive.
    """
    while path.startswith("./"):
        path = path[2:]
    while "//" in path:
        path = path.replace("//", "/")
    return path


def _header_path(raw: str) -> str:
    # "--- a/path\tTIMESTAMP" forms keep everything up to the first tab.
    raw = raw.split("\t", 1)[0].strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        raw = raw[1:-1]
    if raw == "/dev/null":
        return raw
    return normalize_path(strip_diff_prefix(raw))


def parse_unified_diff(patch: str) -> ParsedDiff:
    """Parse unified-diff text into per-file deltas with hunk/line tallies.

    Raises DiffParseError with the first offending line number on malformed
    ``---``/``+++`` pairs or ``@@`` hunk headers. Arbitrary prose before the
    first file section and between sections is ignored.
    """
    digest = hashlib.sha256(patch.encode("utf-8", errors="replace")).hexdigest()
    lines = patch.splitlines()

    files: list[FileDelta] = []
    # Mutable accumulator for the section currently being parsed.
    cur: dict | None = None
    remaining_old = 0
    remaining_new = 0
    in_hunk = False

    def flush():
        nonlocal cur
        if cur is not None:
            files.append(FileDelta(**cur))
            cur = None

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        line_no = i + 1

        if line.startswith("diff --git "):
            if in_hunk and (remaining_old > 0 or remaining_new > 0):
                raise DiffParseError(line_no, "hunk ended short of its declared length")
            flush()
            in_hunk = False
            m = _GIT_HEADER_RE.match(line)
            if m:
                cur = {
                    "old_path": normalize_path(m.group(1)),
                    "new_path": normalize_path(m.group(2)),
                    "hunk_count": 0,
                    "added_lines": 0,
                    "removed_lines": 0,
                }
            i += 1
            continue

        if line.startswith("--- "):
            if in_hunk and (remaining_old > 0 or remaining_new > 0):
                # "--- " inside an unterminated hunk is a removed line starting
                # with "-- "; handled by the hunk-body branch below.
                pass
            else:
                if i + 1 >= n or not lines[i + 1].startswith("+++ "):
                    raise DiffParseError(line_no, '"---" header without matching "+++"')
                old_path = _header_path(line[4:])
                new_path = _header_path(lines[i + 1][4:])
                if cur is not None and cur["hunk_count"] == 0:
                    # ---/+++ pair belonging to the pending "diff --git" section.
                    cur["old_path"] = old_path
                    cur["new_path"] = new_path
                else:
                    flush()
                    cur = {
                        "old_path": old_path,
                        "new_path": new_path,
                        "hunk_count": 0,
                        "added_lines": 0,
                        "removed_lines": 0,
                    }
                in_hunk = False
                i += 2
                continue

        if line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if not m:
                raise DiffParseError(line_no, f"malformed hunk header: {line!r}")
            if cur is None:
                raise DiffParseError(line_no, "hunk header before any file header")
            old_len = int(m.group(2)) if m.group(2) is not None else 1
            new_len = int(m.group(4)) if m.group(4) is not None else 1
            cur["hunk_count"] += 1
            remaining_old = old_len
            remaining_new = new_len
            in_hunk = True
            i += 1
            continue

        if in_hunk and (remaining_old > 0 or remaining_new > 0):
            if line.startswith("+"):
                cur["added_lines"] += 1
                remaining_new -= 1
            elif line.startswith("-"):
                cur["removed_lines"] += 1
                remaining_old -= 1
            elif line.startswith(" ") or line == "":
                remaining_old -= 1
                remaining_new -= 1
            elif line.startswith("\\"):
                pass  # "\ No newline at end of file"
            else:
                raise DiffParseError(line_no, f"unexpected line inside hunk: {line!r}")
            if remaining_old <= 0 and remaining_new <= 0:
                in_hunk = False
            i += 1
            continue

        # Rename/copy metadata on a pending git-header section.
        if cur is not None and cur["hunk_count"] == 0:
            m = re.match(r"^rename from (.+)$", line)
            if m:
                cur["old_path"] = normalize_path(m.group(1))
                i += 1
                continue
            m = re.match(r"^rename to (.+)$", line)
            if m:
                cur["new_path"] = normalize_path(m.group(1))
                i += 1
                continue

        # Everything else (index lines, mode changes, binary markers, prose)
        # is tolerated and skipped.
        i += 1

    if in_hunk and (remaining_old > 0 or remaining_new > 0):
        raise DiffParseError(n, "diff ends inside an unterminated hunk")
    flush()
    return ParsedDiff(files=tuple(files), raw_digest=digest)


def extract_modified_files(patch: str) -> set[str]:
    """Extract the sorted-deduplicated set of modified file paths from a patch.

    New-side paths are reported, except deletions which report the old path;
    ``a/``/``b/`` prefixes are stripped. Empty input yields an empty set.
    """
    if not patch.strip():
        return set()
    parsed = parse_unified_diff(patch)
    return {delta.path for delta in parsed.files}
