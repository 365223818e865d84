"""Execution engines behind the replica's execute/rollback contract.

ReferenceEngine: single-copy store with an undo log; executions mutate in
place and roll back by restoring first-write snapshots.

MultiVersionEngine: immutable versions per object, snapshot reads resolved by
the creator's position in the current execution order, install-time conflict
checks, invalidation cascades and garbage collection.
"""

from __future__ import annotations

from typing import Callable, Optional

from .sim import ProtocolViolation
from .workload import run_program

Rid = tuple  # (replica, event_no)

_ABSENT = object()


class ReferenceEngine:
    def __init__(self, store: dict):
        self.db = dict(store)
        self.undo: dict[Rid, dict] = {}
        self.access: dict[Rid, tuple[frozenset, frozenset]] = {}

    def execute(self, rid: Rid, prog) -> object:
        undo_map: dict = {}
        reads: set = set()
        writes: set = set()

        def read(oid):
            if oid not in writes:
                reads.add(oid)
            return self.db.get(oid)

        def write(oid, value):
            if oid not in undo_map:
                undo_map[oid] = self.db.get(oid)
            writes.add(oid)
            self.db[oid] = value

        response = run_program(prog, read, write)
        self.undo[rid] = undo_map
        self.access[rid] = (frozenset(reads), frozenset(writes))
        return response

    def rollback(self, rid: Rid) -> None:
        undo_map = self.undo.pop(rid, None)
        if undo_map is None:
            raise ProtocolViolation(f"rollback of never-executed request {rid}")
        for oid, value in undo_map.items():
            if value is None:  # None marks "absent before" (no stored None values)
                self.db.pop(oid, None)
            else:
                self.db[oid] = value

    def discard_undo(self, rid: Rid) -> None:
        self.undo.pop(rid, None)

    def dump(self) -> dict:
        return dict(self.db)


class Version:
    __slots__ = ("oid", "value", "creator", "seq", "inval", "reclaimed", "refs")

    def __init__(self, oid, value, creator: Rid, seq: int):
        self.oid = oid
        self.value = value
        self.creator = creator
        self.seq = seq
        self.inval: Optional[int] = None
        self.reclaimed = False
        self.refs = 0  # installed executions whose read tokens point here

    def __repr__(self):
        state = "dead" if self.inval is not None else "live"
        return f"Version({self.oid}, {self.value}, by={self.creator}, {state})"


class Snapshot:
    """Read view: versions installed by cut time whose creators precede idx."""

    __slots__ = ("rid", "pos", "idx", "cut")

    def __init__(self, rid: Rid, pos: dict, idx: int, cut: int):
        self.rid = rid
        self.pos = pos
        self.idx = idx
        self.cut = cut


class _Installed:
    __slots__ = ("tokens", "versions", "response")

    def __init__(self, tokens: dict, versions: dict, response):
        self.tokens = tokens      # oid -> Version read (None = initial store)
        self.versions = versions  # oid -> Version written
        self.response = response


class MultiVersionEngine:
    def __init__(self, store: dict):
        self.base = store
        self.versions: dict[object, list[Version]] = {}
        self.installed: dict[Rid, _Installed] = {}
        self.readers: dict[object, set[Rid]] = {}
        self.open: dict[Rid, Snapshot] = {}
        self.seq = 0
        self._dirty: set = set()  # oids with chains touched since the last gc

    # -- snapshots -----------------------------------------------------------

    def open_snapshot(self, rid: Rid, pos: dict, idx: int) -> Snapshot:
        snap = Snapshot(rid, pos, idx, self.seq)
        self.open[rid] = snap
        return snap

    def close_snapshot(self, snap: Snapshot) -> None:
        self.open.pop(snap.rid, None)

    def _resolve(self, oid, pos: dict, idx: int, cut: Optional[int]) -> Optional[Version]:
        chain = self.versions.get(oid)
        if not chain:
            return None
        best = None
        best_ci = -1
        best_seq = -1
        pos_get = pos.get
        for v in chain:
            if cut is not None:
                if v.seq > cut:
                    continue
                iv = v.inval
                if iv is not None and iv <= cut:
                    continue
            elif v.inval is not None:
                continue
            ci = pos_get(v.creator)
            if ci is None or ci >= idx:
                continue
            if ci > best_ci or (ci == best_ci and v.seq > best_seq):
                best, best_ci, best_seq = v, ci, v.seq
        if best is not None and best.reclaimed:
            raise ProtocolViolation(f"read observed a reclaimed version of {oid}")
        return best

    def read_view(self, snap: Snapshot) -> tuple[Callable, dict]:
        """Read callback over the snapshot, plus the token map it fills in."""
        tokens: dict = {}

        def read(oid):
            v = self._resolve(oid, snap.pos, snap.idx, snap.cut)
            tokens[oid] = v
            return v.value if v is not None else self.base.get(oid)

        return read, tokens

    def execute_on(self, snap: Snapshot, prog):
        """Run the program in isolation on the snapshot; nothing installed yet."""
        read, tokens = self.read_view(snap)
        buf: dict = {}

        def buffered_read(oid):
            if oid in buf:
                return buf[oid]
            return read(oid)

        def write(oid, value):
            buf[oid] = value

        response = run_program(prog, buffered_read, write)
        return response, tokens, buf

    # -- install / invalidate --------------------------------------------------

    def _current_token(self, oid, cur_pos: dict, idx: int) -> Optional[Version]:
        return self._resolve(oid, cur_pos, idx, None)

    def _is_valid(self, rid: Rid, cur_pos: dict) -> bool:
        rec = self.installed[rid]
        idx = cur_pos[rid]
        for oid, tok in rec.tokens.items():
            if self._current_token(oid, cur_pos, idx) is not tok:
                return False
        return True

    def _stale_on(self, rid: Rid, oids, cur_pos: dict) -> bool:
        rec = self.installed[rid]
        idx = cur_pos[rid]
        for oid in oids:
            tok = rec.tokens.get(oid, _ABSENT)
            if tok is _ABSENT:
                continue
            if self._current_token(oid, cur_pos, idx) is not tok:
                return True
        return False

    def _invalidate_one(self, rid: Rid) -> list:
        rec = self.installed.pop(rid)
        self.seq += 1
        for v in rec.versions.values():
            v.inval = self.seq
        self._dirty.update(rec.versions)
        for oid, tok in rec.tokens.items():
            if tok is not None:
                tok.refs -= 1
            rs = self.readers.get(oid)
            if rs is not None:
                rs.discard(rid)
                if not rs:
                    del self.readers[oid]
        return sorted(rec.versions)

    def _cascade(self, seed_oids, cur_pos: dict) -> list[Rid]:
        """Re-check installed readers of the seed objects; invalidate stale ones
        transitively. Returns the invalidated rids in invalidation order."""
        out: list[Rid] = []
        pending: dict[Rid, set] = {}
        for oid in seed_oids:
            for r in self.readers.get(oid, ()):
                pending.setdefault(r, set()).add(oid)
        while pending:
            rid = min(pending, key=lambda r: (cur_pos.get(r, -1), r))
            oids = pending.pop(rid)
            if rid not in self.installed:
                continue
            if not self._stale_on(rid, oids, cur_pos):
                continue
            touched = self._invalidate_one(rid)
            out.append(rid)
            for oid in touched:
                for r in self.readers.get(oid, ()):
                    pending.setdefault(r, set()).add(oid)
        return out

    def try_install(self, snap: Snapshot, prog_result, cur_pos: dict):
        """Atomically install buffered writes after conflict checks.

        Returns (installed, invalidated-others). installed=False means the
        snapshot went stale during execution: discard and reexecute.
        """
        rid = snap.rid
        response, tokens, buf = prog_result
        self.close_snapshot(snap)
        if rid in self.installed:
            raise ProtocolViolation(f"{rid} installed twice without invalidation")
        idx = cur_pos.get(rid)
        if idx is None:
            return False, []
        for oid, tok in tokens.items():
            if self._current_token(oid, cur_pos, idx) is not tok:
                return False, []
        self.seq += 1
        versions: dict = {}
        for oid, value in buf.items():
            v = Version(oid, value, rid, self.seq)
            versions[oid] = v
            self.versions.setdefault(oid, []).append(v)
            self._dirty.add(oid)
        self.installed[rid] = _Installed(tokens, versions, response)
        for oid, tok in tokens.items():
            self.readers.setdefault(oid, set()).add(rid)
            if tok is not None:
                tok.refs += 1
        invalidated = self._cascade(sorted(buf), cur_pos) if buf else []
        return True, invalidated

    def mv_execute(self, rid: Rid, prog, pos: dict, idx: int):
        """One-shot execute+install (no simulated duration); test convenience."""
        snap = self.open_snapshot(rid, pos, idx)
        result = self.execute_on(snap, prog)
        ok, invalidated = self.try_install(snap, result, pos)
        access = ({oid for oid in result[1]}, set(result[2]))
        return (result[0] if ok else None), access, ok, invalidated

    def invalidate(self, rid: Rid, cur_pos: dict) -> list[Rid]:
        """Mark rid's versions dead; returns later requests needing reexecution."""
        if rid not in self.installed:
            return []
        touched = self._invalidate_one(rid)
        return self._cascade(touched, cur_pos)

    def revalidate(self, from_idx: int, cur_pos: dict) -> list[Rid]:
        """After an order change, invalidate installed requests at or beyond
        from_idx whose reads no longer resolve identically; cascades."""
        candidates = [r for r in self.installed if cur_pos.get(r, -1) >= from_idx]
        return self._revalidate_candidates(candidates, cur_pos)

    def revalidate_moved(self, moved, cur_pos: dict) -> list[Rid]:
        """Revalidation narrowed to a move: only the moved requests (all their
        reads) and the readers of objects they wrote can resolve differently."""
        cand: dict[Rid, Optional[set]] = {}
        for rid in moved:
            rec = self.installed.get(rid)
            if rec is None:
                continue
            cand[rid] = None  # full re-check: its own reads may have changed
            for oid in rec.versions:
                for r in self.readers.get(oid, ()):
                    cur = cand.get(r, _ABSENT)
                    if cur is _ABSENT:
                        cand[r] = {oid}
                    elif cur is not None:
                        cur.add(oid)
        out: list[Rid] = []
        for rid in sorted(cand, key=lambda r: (cur_pos.get(r, -1), r)):
            if rid not in self.installed:
                continue
            oids = cand[rid]
            stale = (not self._is_valid(rid, cur_pos)) if oids is None \
                else self._stale_on(rid, oids, cur_pos)
            if not stale:
                continue
            touched = self._invalidate_one(rid)
            out.append(rid)
            out.extend(self._cascade(touched, cur_pos))
        return out

    def _revalidate_candidates(self, candidates, cur_pos: dict) -> list[Rid]:
        out: list[Rid] = []
        for rid in sorted(candidates, key=lambda r: (cur_pos.get(r, -1), r)):
            if rid not in self.installed:
                continue
            if self._is_valid(rid, cur_pos):
                continue
            touched = self._invalidate_one(rid)
            out.append(rid)
            out.extend(self._cascade(touched, cur_pos))
        return out

    def is_installed(self, rid: Rid) -> bool:
        return rid in self.installed

    def response_of(self, rid: Rid):
        return self.installed[rid].response

    # -- gc / dump -------------------------------------------------------------

    def gc(self, cur_pos: dict, committed_len: int, exec_floor: Optional[int] = None,
           full: bool = False) -> int:
        """Reclaim invalidated versions no open snapshot can see, and for the
        committed prefix keep only the most recent version per object.

        exec_floor is the smallest order index that may still execute; a
        superseded committed version stays if some future snapshot below its
        superseder could still need it. Incremental by default: only chains
        touched since the last collection are examined.
        """
        if exec_floor is None:
            exec_floor = len(cur_pos)
        open_snaps = list(self.open.values())
        min_cut = min((s.cut for s in open_snaps), default=-1)
        max_cut = max((s.cut for s in open_snaps), default=-1)
        reclaimed = 0
        scan = list(self.versions) if full else [o for o in self._dirty if o in self.versions]
        self._dirty = set()
        for oid in scan:
            chain = self.versions[oid]
            live_committed = [
                v for v in chain
                if v.inval is None and cur_pos.get(v.creator, -1) < committed_len
            ]
            superseded_safe: set[int] = set()
            blocked = False
            if len(live_committed) > 1:
                live_committed.sort(key=lambda v: (cur_pos[v.creator], v.seq))
                for v, nxt in zip(live_committed, live_committed[1:]):
                    if exec_floor > cur_pos[nxt.creator]:
                        superseded_safe.add(id(v))
                    else:
                        blocked = True  # reclaimable once execution passes the superseder
            keep = []
            for v in chain:
                removable = False
                if v.inval is not None:
                    if v.inval <= min_cut or v.seq > max_cut:
                        removable = True
                    else:
                        removable = not any(
                            s.cut >= v.seq and v.inval > s.cut for s in open_snaps
                        )
                    blocked = blocked or not removable
                elif id(v) in superseded_safe:
                    removable = v.refs == 0 and v.seq > max_cut
                    blocked = blocked or not removable
                if removable:
                    v.reclaimed = True
                    reclaimed += 1
                else:
                    keep.append(v)
            if keep:
                self.versions[oid] = keep
            else:
                del self.versions[oid]
            if blocked:
                self._dirty.add(oid)
        return reclaimed

    def dump(self, final_pos: dict) -> dict:
        out = dict(self.base)
        for oid, chain in self.versions.items():
            best = self._resolve(oid, final_pos, len(final_pos) + 1, None)
            if best is not None:
                out[oid] = best.value
        return out
