"""Type hierarchy DAG: loading, validation, ancestor closure, and the
dataset-construction utilities built on top of it.

A hierarchy is a set of named types connected by directed child -> parent
links.  Equivalence links are collapsed into a single class node before any
reachability computation, so every member of a multi-type equivalence class
reports the whole class (itself included) among its ancestors.  The graph of
collapsed classes must be acyclic; anything else is rejected with a concrete
cycle in the error message.

The text format is one link per line, ``child<TAB>parent<TAB>kind``.  Lines
starting with ``#`` and blank lines are ignored.  Accepted kinds are
``child_of``, ``parent_of`` (stored reversed so memory holds a single
direction), ``equivalence``, ``fb_fb``, and ``wordnet_hypernym``.  A line
with a single column declares an isolated type with no links.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import HiertypeError

log = logging.getLogger(__name__)

SERIAL_FORMAT = "hiertype-hierarchy"
SERIAL_VERSION = 1


class HierarchyError(HiertypeError):
    """Malformed or inconsistent hierarchy data."""


class HierarchyParseError(HierarchyError):
    def __init__(self, source: str, line_no: int, message: str):
        super().__init__(f"{source}:{line_no}: {message}")
        self.source = source
        self.line_no = line_no


class CycleError(HierarchyError):
    """Raised when the collapsed child->parent graph is not acyclic."""

    def __init__(self, cycle: Sequence[str]):
        names = list(cycle)
        loop = " -> ".join(names + names[:1])
        super().__init__(f"hierarchy contains a cycle: {loop}")
        self.cycle = tuple(names)


class UnknownTypeError(HierarchyError):
    def __init__(self, ref: object):
        super().__init__(f"unknown type: {ref!r}")
        self.ref = ref


class LinkKind(str, Enum):
    CHILD_OF = "child_of"
    EQUIVALENCE = "equivalence"
    FB_FB = "fb_fb"
    WORDNET_HYPERNYM = "wordnet_hypernym"


# File tokens accepted in the kind column.  parent_of rows are reversed on
# input so the in-memory graph has a single child -> parent direction.
_KIND_TOKENS: dict[str, tuple[LinkKind, bool]] = {
    "child_of": (LinkKind.CHILD_OF, False),
    "parent_of": (LinkKind.CHILD_OF, True),
    "equivalence": (LinkKind.EQUIVALENCE, False),
    "fb_fb": (LinkKind.FB_FB, False),
    "wordnet_hypernym": (LinkKind.WORDNET_HYPERNYM, False),
    "hypernym": (LinkKind.WORDNET_HYPERNYM, False),
}


class TypeId(NamedTuple):
    name: str
    index: int


class Link(NamedTuple):
    child: TypeId
    parent: TypeId
    kind: LinkKind


RawLink = tuple[str, str, LinkKind]


def _normalize_raw(child: str, parent: str, kind: object) -> RawLink:
    if isinstance(kind, LinkKind):
        return (child, parent, kind)
    token = str(kind)
    if token not in _KIND_TOKENS:
        raise HierarchyError(f"unknown link kind: {token!r}")
    resolved, reverse = _KIND_TOKENS[token]
    if reverse:
        child, parent = parent, child
    return (child, parent, resolved)


@dataclass(frozen=True)
class HierarchyStats:
    """Summary statistics over a validated hierarchy.

    Depth is defined on the equivalence-collapsed graph: a class with no
    parents has depth 1, every other class has depth 1 + max over its parent
    classes, and each type inherits the depth of its class.  ``mean_depth``
    averages over types, not classes.
    """

    type_count: int
    max_depth: int
    mean_depth: float
    link_counts: Mapping[str, int]

    def as_dict(self) -> dict[str, object]:
        out: dict[str, object] = {
            "type_count": self.type_count,
            "max_depth": self.max_depth,
            "mean_depth": self.mean_depth,
        }
        for kind in sorted(self.link_counts):
            out[f"links_{kind}"] = self.link_counts[kind]
        return out

    def as_line(self) -> str:
        return " ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in self.as_dict().items())


class TypeHierarchy:
    """Validated, immutable type DAG with a precomputed ancestor closure."""

    def __init__(
        self,
        raw_links: Sequence[RawLink],
        extra_types: Sequence[str] = (),
        source: str = "<memory>",
        name_order: Sequence[str] | None = None,
    ):
        names: list[str] = []
        index: dict[str, int] = {}

        def intern(name: str) -> int:
            if not name:
                raise HierarchyError(f"{source}: empty type name")
            got = index.get(name)
            if got is None:
                got = len(names)
                index[name] = got
                names.append(name)
            return got

        if name_order is not None:
            for name in name_order:
                if name in index:
                    raise HierarchyError(f"{source}: duplicate type name {name!r}")
                intern(name)

        deduped: list[RawLink] = []
        seen: set[tuple] = set()
        duplicates = 0
        for child, parent, kind in raw_links:
            ci, pi = intern(child), intern(parent)
            if name_order is not None and (child not in index or parent not in index):
                raise HierarchyError(f"{source}: link names a type outside the declared order")
            if ci == pi and kind is not LinkKind.EQUIVALENCE:
                raise HierarchyError(f"{source}: self link on {child!r} ({kind.value})")
            if kind is LinkKind.EQUIVALENCE:
                key = (kind, min(ci, pi), max(ci, pi))
            else:
                key = (kind, ci, pi)
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            deduped.append((child, parent, kind))
        if duplicates:
            log.warning("%s: dropped %d duplicate link(s)", source, duplicates)

        for name in extra_types:
            intern(name)

        self._names: tuple[str, ...] = tuple(names)
        self._index = index
        self._ids = tuple(TypeId(n, i) for i, n in enumerate(names))
        self.links: tuple[Link, ...] = tuple(
            Link(self._ids[index[c]], self._ids[index[p]], k) for c, p, k in deduped
        )
        self._build_closure(source)

    # ------------------------------------------------------------------
    # construction internals

    def _build_closure(self, source: str) -> None:
        n = len(self._names)

        # Union-find over equivalence links; collapse before reachability.
        uf = list(range(n))

        def find(i: int) -> int:
            while uf[i] != i:
                uf[i] = uf[uf[i]]
                i = uf[i]
            return i

        self_equiv: set[int] = set()
        for link in self.links:
            if link.kind is LinkKind.EQUIVALENCE:
                a, b = find(link.child.index), find(link.parent.index)
                if a == b:
                    self_equiv.add(a)
                elif a < b:
                    uf[b] = a
                else:
                    uf[a] = b

        rep_of = [find(i) for i in range(n)]
        members: dict[int, list[int]] = {}
        for i, r in enumerate(rep_of):
            members.setdefault(r, []).append(i)
        cyclic_classes = {r for r, ms in members.items() if len(ms) > 1}
        cyclic_classes.update(find(r) for r in self_equiv)

        parents: dict[int, set[int]] = {r: set() for r in members}
        children: dict[int, set[int]] = {r: set() for r in members}
        for link in self.links:
            if link.kind is LinkKind.EQUIVALENCE:
                continue
            c, p = rep_of[link.child.index], rep_of[link.parent.index]
            if c == p:
                # child-of edge inside one equivalence class: collapsed self loop
                raise CycleError([link.child.name, link.parent.name])
            parents[c].add(p)
            children[p].add(c)

        # Parents-first topological sweep; leftover nodes witness a cycle.
        pending = {r: len(parents[r]) for r in members}
        queue = deque(sorted(r for r, k in pending.items() if k == 0))
        anc: dict[int, frozenset[int]] = {}
        depth: dict[int, int] = {}
        done = 0
        while queue:
            k = queue.popleft()
            done += 1
            acc: set[int] = set()
            dmax = 0
            for p in parents[k]:
                acc.add(p)
                acc |= anc[p]
                if depth[p] > dmax:
                    dmax = depth[p]
            anc[k] = frozenset(acc)
            depth[k] = dmax + 1
            for c in sorted(children[k]):
                pending[c] -= 1
                if pending[c] == 0:
                    queue.append(c)
        if done < len(members):
            leftover = {r for r, k in pending.items() if k > 0}
            cycle = _find_cycle(leftover, parents)
            raise CycleError([self._names[members[r][0]] for r in cycle])

        anc_types: list[tuple[int, ...]] = []
        depths: list[int] = []
        for i in range(n):
            r = rep_of[i]
            acc = set()
            for p in anc[r]:
                acc.update(members[p])
            if r in cyclic_classes:
                acc.update(members[r])
            anc_types.append(tuple(sorted(acc)))
            depths.append(depth[r])
        self._ancestors = tuple(anc_types)
        self._depths = tuple(depths)

    # ------------------------------------------------------------------
    # queries

    def __len__(self) -> int:
        return len(self._names)

    @property
    def type_count(self) -> int:
        return len(self._names)

    @property
    def type_names(self) -> tuple[str, ...]:
        return self._names

    def type_ids(self) -> tuple[TypeId, ...]:
        return self._ids

    def __contains__(self, ref: object) -> bool:
        try:
            self.resolve(ref)
        except UnknownTypeError:
            return False
        return True

    def resolve(self, ref: object) -> TypeId:
        """Map a name, index, or TypeId onto this hierarchy's TypeId."""
        if isinstance(ref, TypeId):
            i = ref.index
            if 0 <= i < len(self._ids) and self._names[i] == ref.name:
                return self._ids[i]
            raise UnknownTypeError(ref)
        if isinstance(ref, str):
            i = self._index.get(ref)
            if i is None:
                raise UnknownTypeError(ref)
            return self._ids[i]
        if isinstance(ref, int):
            if 0 <= ref < len(self._ids):
                return self._ids[ref]
            raise UnknownTypeError(ref)
        raise UnknownTypeError(ref)

    def ancestors(self, ref: object) -> tuple[TypeId, ...]:
        """All types reachable through one or more parent links.

        The type itself is excluded unless it sits inside an equivalence
        class, in which case the whole class (itself included) is returned
        along with the class ancestors.  Result is sorted by type index.
        """
        t = self.resolve(ref)
        return tuple(self._ids[i] for i in self._ancestors[t.index])

    def ancestor_indexes(self, index: int) -> tuple[int, ...]:
        return self._ancestors[index]

    def closure(self, refs: Iterable[object]) -> tuple[TypeId, ...]:
        """The input types plus all their ancestors, sorted by index."""
        acc: set[int] = set()
        for ref in refs:
            t = self.resolve(ref)
            acc.add(t.index)
            acc.update(self._ancestors[t.index])
        return tuple(self._ids[i] for i in sorted(acc))

    def depth_of(self, ref: object) -> int:
        return self._depths[self.resolve(ref).index]

    def stats(self) -> HierarchyStats:
        counts = Counter(link.kind.value for link in self.links)
        n = len(self._names)
        mean = sum(self._depths) / n if n else 0.0
        return HierarchyStats(
            type_count=n,
            max_depth=max(self._depths, default=0),
            mean_depth=mean,
            link_counts=dict(counts),
        )

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self) -> dict[str, object]:
        return {
            "format": SERIAL_FORMAT,
            "version": SERIAL_VERSION,
            "types": list(self._names),
            "links": [[l.child.name, l.parent.name, l.kind.value] for l in self.links],
            "ancestors": [list(a) for a in self._ancestors],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, object], source: str = "<dict>") -> "TypeHierarchy":
        if data.get("format") != SERIAL_FORMAT:
            raise HierarchyError(f"{source}: not a serialized hierarchy")
        if data.get("version") != SERIAL_VERSION:
            raise HierarchyError(f"{source}: unsupported version {data.get('version')!r}")
        try:
            types = [str(t) for t in data["types"]]
            raw = [_normalize_raw(str(c), str(p), str(k)) for c, p, k in data["links"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise HierarchyError(f"{source}: malformed hierarchy payload: {exc}") from exc
        h = cls(raw, source=source, name_order=types)
        stored = data.get("ancestors")
        if stored is not None:
            recomputed = [list(a) for a in h._ancestors]
            if [list(map(int, a)) for a in stored] != recomputed:
                raise HierarchyError(f"{source}: stored ancestor sets do not match recomputed closure")
        return h

    def save(self, path: str) -> None:
        payload = json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")

    @classmethod
    def from_links(
        cls,
        links: Iterable[tuple[str, str, object]],
        types: Sequence[str] = (),
        source: str = "<memory>",
    ) -> "TypeHierarchy":
        raw = [_normalize_raw(c, p, k) for c, p, k in links]
        return cls(raw, extra_types=types, source=source)

    @classmethod
    def load(cls, path: str) -> "TypeHierarchy":
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        stripped = text.lstrip()
        if stripped.startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise HierarchyError(f"{path}: invalid hierarchy JSON: {exc}") from exc
            return cls.from_dict(data, source=path)
        raw, isolated = _parse_links_text(text, path)
        return cls(raw, extra_types=isolated, source=path)


def _find_cycle(leftover: set[int], parents: Mapping[int, set[int]]) -> list[int]:
    """DFS over the leftover subgraph; returns one cycle's class reps."""
    state: dict[int, int] = {}  # 1 = on path, 2 = done
    for start in sorted(leftover):
        if state.get(start):
            continue
        path = [start]
        state[start] = 1
        stack = [(start, iter(sorted(p for p in parents[start] if p in leftover)))]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                mark = state.get(nxt, 0)
                if mark == 1:
                    return path[path.index(nxt):]
                if mark == 0:
                    state[nxt] = 1
                    path.append(nxt)
                    stack.append((nxt, iter(sorted(p for p in parents[nxt] if p in leftover))))
                    advanced = True
                    break
            if not advanced:
                state[node] = 2
                stack.pop()
                path.pop()
    raise AssertionError("leftover nodes of a topological sort must contain a cycle")


def _parse_links_text(text: str, source: str) -> tuple[list[RawLink], list[str]]:
    raw: list[RawLink] = []
    isolated: list[str] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split("\t")
        if len(fields) == 1:
            isolated.append(fields[0].strip())
            continue
        if len(fields) != 3:
            raise HierarchyParseError(source, line_no, f"expected 3 tab-separated fields, got {len(fields)}")
        child, parent, token = (f.strip() for f in fields)
        if not child or not parent:
            raise HierarchyParseError(source, line_no, "empty type name")
        if token not in _KIND_TOKENS:
            raise HierarchyParseError(source, line_no, f"unknown link kind: {token!r}")
        kind, reverse = _KIND_TOKENS[token]
        if reverse:
            child, parent = parent, child
        if child == parent and kind is not LinkKind.EQUIVALENCE:
            raise HierarchyParseError(source, line_no, f"self link on {child!r}")
        raw.append((child, parent, kind))
    return raw, isolated


def load_hierarchy(path: str) -> TypeHierarchy:
    return TypeHierarchy.load(path)


def write_links(path: str, links: Iterable[Link], header: str | None = None) -> None:
    """Write links in the one-per-line text format (deterministic bytes)."""
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for link in links:
            fh.write(f"{link.child.name}\t{link.parent.name}\t{link.kind.value}\n")


# ----------------------------------------------------------------------
# dataset-construction helpers


def _normalize_fb_type(name: str) -> str:
    final = name.rstrip("/").split("/")[-1]
    return final.replace("_", " ").replace("-", " ").casefold()


def _normalize_synset(name: str) -> str:
    return name.replace("_", " ").replace("-", " ").casefold()


def candidate_synsets(fb_type: str, synset_names: Sequence[str]) -> list[str]:
    """Synset names lexically compatible with a path-style type name.

    The final path segment of ``fb_type`` and each synset name are both
    lowercased with underscores/hyphens mapped to spaces; a synset is a
    candidate when either normalized string contains the other.  Input
    order is preserved; nothing is deduplicated.
    """
    if not fb_type:
        raise HierarchyError("empty type name")
    probe = _normalize_fb_type(fb_type)
    if not probe:
        return []
    out = []
    for synset in synset_names:
        norm = _normalize_synset(synset)
        if probe in norm or norm in probe:
            out.append(synset)
    return out


class EntityTypeTable:
    """Mapping from entity id to the set of raw type names it carries.

    File format: ``entity_id<TAB>type1,type2,...`` with ``#`` comments;
    duplicate type names collapse, duplicate entity rows union.
    """

    def __init__(self, table: Mapping[str, Iterable[str]]):
        self._table: dict[str, frozenset[str]] = {
            str(e): frozenset(str(t) for t in ts) for e, ts in table.items()
        }

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, entity: str) -> bool:
        return entity in self._table

    def entities(self) -> tuple[str, ...]:
        return tuple(sorted(self._table))

    def types_of(self, entity: str) -> frozenset[str]:
        return self._table.get(entity, frozenset())

    def all_type_names(self) -> tuple[str, ...]:
        acc: set[str] = set()
        for ts in self._table.values():
            acc |= ts
        return tuple(sorted(acc))

    @classmethod
    def load(cls, path: str) -> "EntityTypeTable":
        table: dict[str, set[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                s = line.strip()
                if not s or s.startswith("#"):
                    continue
                fields = s.split("\t")
                if len(fields) == 1:
                    entity, type_field = fields[0], ""
                elif len(fields) == 2:
                    entity, type_field = fields
                else:
                    raise HierarchyParseError(path, line_no, f"expected 2 tab-separated fields, got {len(fields)}")
                if not entity:
                    raise HierarchyParseError(path, line_no, "empty entity id")
                types = {t.strip() for t in type_field.split(",") if t.strip()}
                table.setdefault(entity, set()).update(types)
        return cls(table)


def derive_cooccurrence_links(
    table: EntityTypeTable,
    threshold: float = 0.7,
    allowed_pairs: set[tuple[str, str]] | None = None,
) -> list[Link]:
    """Infer child -> parent links from type co-occurrence over entities.

    Emits ``t1 -> t2`` (kind fb_fb) when the conditional frequency
    P(t2 | t1) = |entities with both| / |entities with t1| reaches the
    threshold.  Self pairs are never emitted and types never attached to
    any entity produce nothing.  ``allowed_pairs`` optionally restricts
    output to a precomputed candidate set.  Output is sorted by
    (child index, parent index) over indexes minted from sorted names.
    """
    if not 0.0 < threshold <= 1.0:
        raise HierarchyError(f"threshold must be in (0, 1], got {threshold!r}")
    names = table.all_type_names()
    ids = {name: TypeId(name, i) for i, name in enumerate(names)}
    singles: Counter[str] = Counter()
    pairs: Counter[tuple[str, str]] = Counter()
    for entity in table.entities():
        ts = sorted(table.types_of(entity))
        singles.update(ts)
        for t1 in ts:
            for t2 in ts:
                if t1 != t2:
                    pairs[(t1, t2)] += 1
    links: list[Link] = []
    for t1 in names:
        n1 = singles.get(t1, 0)
        if n1 == 0:
            continue
        for t2 in names:
            if t1 == t2:
                continue
            if pairs.get((t1, t2), 0) / n1 >= threshold:
                if allowed_pairs is not None and (t1, t2) not in allowed_pairs:
                    continue
                links.append(Link(ids[t1], ids[t2], LinkKind.FB_FB))
    return links
