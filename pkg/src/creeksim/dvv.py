"""Dotted-version-vector sets: compact sets of (replica, event-number) dots."""

from __future__ import annotations

from typing import Iterable, Iterator, Tuple

Dot = Tuple[int, int]


class DotSet:
    """Set of (replica, n) dots stored as a contiguous prefix plus sparse extras.

    Per replica we keep the largest n such that 1..n are all present, and a set
    of detached event numbers above it. Event numbers start at 1.
    """

    __slots__ = ("_contig", "_extras")

    def __init__(self, dots: Iterable[Dot] = ()):
        self._contig: dict[int, int] = {}
        self._extras: dict[int, set[int]] = {}
        for d in dots:
            self.add(d)

    def add(self, dot: Dot) -> None:
        r, n = dot
        c = self._contig.get(r, 0)
        if n <= c:
            return
        if n == c + 1:
            c = n
            ex = self._extras.get(r)
            if ex:
                while c + 1 in ex:
                    c += 1
                    ex.remove(c)
                if not ex:
                    del self._extras[r]
            self._contig[r] = c
        else:
            self._extras.setdefault(r, set()).add(n)

    def __contains__(self, dot: Dot) -> bool:
        r, n = dot
        if n <= self._contig.get(r, 0):
            return True
        ex = self._extras.get(r)
        return ex is not None and n in ex

    def union_update(self, other: "DotSet") -> None:
        for r, c in other._contig.items():
            if c > self._contig.get(r, 0):
                for n in range(self._contig.get(r, 0) + 1, c + 1):
                    self.add((r, n))
        for r, ex in other._extras.items():
            for n in ex:
                self.add((r, n))

    def issubset(self, other: "DotSet") -> bool:
        for r, c in self._contig.items():
            oc = other._contig.get(r, 0)
            if c > oc:
                oex = other._extras.get(r, ())
                if any(n not in oex for n in range(oc + 1, c + 1)):
                    return False
        for r, ex in self._extras.items():
            oc = other._contig.get(r, 0)
            oex = other._extras.get(r, ())
            if any(n > oc and n not in oex for n in ex):
                return False
        return True

    def difference(self, dots: Iterable[Dot]) -> "DotSet":
        """New DotSet without `dots`; demotes the contiguous prefix as needed."""
        out = self.copy()
        by_replica: dict[int, set[int]] = {}
        for r, n in dots:
            by_replica.setdefault(r, set()).add(n)
        for r, removed in by_replica.items():
            c = out._contig.get(r, 0)
            ex = out._extras.setdefault(r, set())
            ex -= removed
            low = min(removed)
            if low <= c:
                # keep survivors of the broken prefix as extras
                for n in range(low, c + 1):
                    if n not in removed:
                        ex.add(n)
                out._contig[r] = low - 1
            if not ex:
                del out._extras[r]
            if out._contig.get(r, 0) == 0:
                out._contig.pop(r, None)
        return out

    def copy(self) -> "DotSet":
        out = DotSet()
        out._contig = dict(self._contig)
        out._extras = {r: set(ex) for r, ex in self._extras.items()}
        return out

    def __iter__(self) -> Iterator[Dot]:
        for r in sorted(set(self._contig) | set(self._extras)):
            for n in range(1, self._contig.get(r, 0) + 1):
                yield (r, n)
            for n in sorted(self._extras.get(r, ())):
                yield (r, n)

    def __len__(self) -> int:
        return sum(self._contig.values()) + sum(len(ex) for ex in self._extras.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DotSet):
            return NotImplemented
        return self.issubset(other) and other.issubset(self)

    def compressed_size(self) -> int:
        """Number of stored entries (origins + extras), the wire-size model."""
        return len(self._contig) + sum(len(ex) for ex in self._extras.values())

    def missing_from(self, other: "DotSet") -> list[Dot]:
        """Dots present here but absent in `other`, sorted (anti-entropy diff)."""
        return [d for d in self if d not in other]

    def __repr__(self) -> str:
        return f"DotSet({list(self)})"
