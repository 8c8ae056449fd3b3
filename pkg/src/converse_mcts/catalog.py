"""Static recommendation universe: users, items, attribute taxonomy, interactions.

Entity ids live in one shared integer index space: users first, then items,
then attribute values (``user_offset == 0``, ``item_offset == n_users``,
``value_offset == n_users + n_items``). Attribute *types* use their own small
id space and are never embedded. All structures are immutable after
construction and safe for concurrent reads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class CatalogError(ValueError):
    """Raised for malformed catalog files or infeasible synthetic specs."""


@dataclass
class Catalog:
    """Users, items, attribute types/values and user-item interactions.

    ``item_values[i]`` holds the global value ids attached to item with
    global id ``item_offset + i``; ``interactions[u]`` holds global item ids
    for user ``u``.
    """

    n_users: int
    n_items: int
    n_types: int
    type_names: tuple[str, ...]
    value_names: tuple[str, ...]
    value_type: tuple[int, ...]          # per value (class-local index): its type id
    item_values: tuple[frozenset[int], ...]   # per item: global value ids
    interactions: tuple[frozenset[int], ...]  # per user: global item ids

    def __post_init__(self) -> None:
        self.validate()

    # ---- id space ----------------------------------------------------

    @property
    def n_values(self) -> int:
        return len(self.value_names)

    @property
    def user_offset(self) -> int:
        return 0

    @property
    def item_offset(self) -> int:
        return self.n_users

    @property
    def value_offset(self) -> int:
        return self.n_users + self.n_items

    @property
    def n_entities(self) -> int:
        return self.n_users + self.n_items + self.n_values

    @property
    def users(self) -> range:
        return range(self.n_users)

    @property
    def items(self) -> range:
        return range(self.item_offset, self.item_offset + self.n_items)

    @property
    def values(self) -> range:
        return range(self.value_offset, self.value_offset + self.n_values)

    def is_user(self, eid: int) -> bool:
        return 0 <= eid < self.n_users

    def is_item(self, eid: int) -> bool:
        return self.item_offset <= eid < self.value_offset

    def is_value(self, eid: int) -> bool:
        return self.value_offset <= eid < self.n_entities

    # ---- lookups -----------------------------------------------------

    def values_of_item(self, item: int) -> frozenset[int]:
        return self.item_values[item - self.item_offset]

    def types_of_item(self, item: int) -> frozenset[int]:
        return frozenset(self.type_of_value(p) for p in self.values_of_item(item))

    def type_of_value(self, value: int) -> int:
        return self.value_type[value - self.value_offset]

    def items_of_user(self, user: int) -> frozenset[int]:
        return self.interactions[user]

    @cached_property
    def items_of_value(self) -> dict[int, frozenset[int]]:
        """Global value id -> set of global item ids carrying it (V_p)."""
        acc: dict[int, set[int]] = {p: set() for p in self.values}
        for local, vals in enumerate(self.item_values):
            item = self.item_offset + local
            for p in vals:
                acc[p].add(item)
        return {p: frozenset(s) for p, s in acc.items()}

    @cached_property
    def values_of_type(self) -> dict[int, frozenset[int]]:
        acc: dict[int, set[int]] = {y: set() for y in range(self.n_types)}
        for local, y in enumerate(self.value_type):
            acc[y].add(self.value_offset + local)
        return {y: frozenset(s) for y, s in acc.items()}

    @cached_property
    def single_valued_types(self) -> frozenset[int]:
        """Types for which no item carries more than one value (e.g. price range)."""
        multi: set[int] = set()
        for vals in self.item_values:
            seen: set[int] = set()
            for p in vals:
                y = self.type_of_value(p)
                if y in seen:
                    multi.add(y)
                seen.add(y)
        return frozenset(range(self.n_types)) - frozenset(multi)

    def shared_values(self, items: frozenset[int] | set[int]) -> frozenset[int]:
        """Attribute values carried by every item in ``items``."""
        it = iter(items)
        out = set(self.values_of_item(next(it)))
        for v in it:
            out &= self.values_of_item(v)
        return frozenset(out)

    def with_interactions(self, interactions: tuple[frozenset[int], ...]) -> "Catalog":
        """Same universe, different interaction table (used by the splitter)."""
        return Catalog(
            n_users=self.n_users,
            n_items=self.n_items,
            n_types=self.n_types,
            type_names=self.type_names,
            value_names=self.value_names,
            value_type=self.value_type,
            item_values=self.item_values,
            interactions=interactions,
        )

    # ---- validation & identity ---------------------------------------

    def validate(self) -> None:
        if len(self.type_names) != self.n_types:
            raise CatalogError("type name count does not match n_types")
        if len(self.value_type) != len(self.value_names):
            raise CatalogError("value_type and value_names length mismatch")
        if len(self.item_values) != self.n_items:
            raise CatalogError("item_values length does not match n_items")
        if len(self.interactions) != self.n_users:
            raise CatalogError("interactions length does not match n_users")
        for y in self.value_type:
            if not 0 <= y < self.n_types:
                raise CatalogError(f"value references unknown type id {y}")
        for local, vals in enumerate(self.item_values):
            for p in vals:
                if not self.is_value(p):
                    raise CatalogError(f"item {local} references unknown value id {p - self.value_offset}")
        for u, its in enumerate(self.interactions):
            for v in its:
                if not self.is_item(v):
                    raise CatalogError(f"user {u} references unknown item id {v - self.item_offset}")

    def fingerprint(self) -> str:
        """Stable content hash, recorded in checkpoint manifests."""
        return hashlib.sha256(dumps_catalog(self).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GlobalGraph:
    """Tripartite graph over users, items and attribute values.

    Edges mirror ``interactions`` (user-item) and ``item_values``
    (value-item); there are no edges inside one entity class and no
    user-value edges.
    """

    n_entities: int
    user_item_edges: tuple[tuple[int, int], ...]
    value_item_edges: tuple[tuple[int, int], ...]

    @cached_property
    def user_item_array(self) -> np.ndarray:
        return np.asarray(self.user_item_edges, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def value_item_array(self) -> np.ndarray:
        return np.asarray(self.value_item_edges, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the deterministic synthetic catalog generator."""

    n_users: int
    n_items: int
    n_types: int
    n_values_per_type: int
    values_per_item: int
    interactions_per_user: int
    seed: int = 0

    def check(self) -> None:
        counts = {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "n_types": self.n_types,
            "n_values_per_type": self.n_values_per_type,
            "values_per_item": self.values_per_item,
            "interactions_per_user": self.interactions_per_user,
        }
        for name, c in counts.items():
            if c < 1:
                raise CatalogError(f"{name} must be >= 1, got {c}")
        if self.values_per_item > self.n_types * self.n_values_per_type:
            raise CatalogError("values_per_item exceeds the number of distinct values")
        if self.interactions_per_user > self.n_items:
            raise CatalogError("interactions_per_user exceeds n_items")


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

_SECTIONS = ("#types", "#values", "#items", "#interactions")


def dumps_catalog(catalog: Catalog) -> str:
    """Serialize to the tab-separated line-record format (class-local ids)."""
    out: list[str] = ["; catalog"]
    out.append("#types")
    for y, name in enumerate(catalog.type_names):
        out.append(f"{y}\t{name}")
    out.append("#values")
    for local, name in enumerate(catalog.value_names):
        out.append(f"{local}\t{catalog.value_type[local]}\t{name}")
    out.append("#items")
    off = catalog.value_offset
    for local, vals in enumerate(catalog.item_values):
        ids = ",".join(str(p - off) for p in sorted(vals))
        out.append(f"{local}\t{ids}")
    out.append("#interactions")
    ioff = catalog.item_offset
    for u, its in enumerate(catalog.interactions):
        if not its:
            continue
        ids = ",".join(str(v - ioff) for v in sorted(its))
        out.append(f"{u}\t{ids}")
    return "\n".join(out) + "\n"


def save_catalog(catalog: Catalog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_catalog(catalog))


def load_catalog(path) -> Catalog:
    """Parse the line-record catalog format; raises CatalogError with line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return loads_catalog(text)


def loads_catalog(text: str) -> Catalog:
    section: str | None = None
    types: list[str] = []
    values: list[tuple[int, str]] = []        # (type id, name), indexed by value id
    items: list[list[int]] = []               # local value ids, indexed by item id
    inter: dict[int, list[int]] = {}

    def fail(lineno: int, msg: str) -> CatalogError:
        return CatalogError(f"line {lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith(";"):
            continue
        if line in _SECTIONS:
            section = line
            continue
        if section is None:
            raise fail(lineno, "record before any section header")
        fields = line.split("\t")
        try:
            if section == "#types":
                tid, name = fields
                if int(tid) != len(types):
                    raise fail(lineno, f"non-dense type id {tid}")
                types.append(name)
            elif section == "#values":
                vid, tid, name = fields
                if int(vid) != len(values):
                    raise fail(lineno, f"non-dense value id {vid}")
                if not 0 <= int(tid) < len(types):
                    raise fail(lineno, f"value {vid} has unknown type {tid}")
                values.append((int(tid), name))
            elif section == "#items":
                iid, vids = fields
                if int(iid) != len(items):
                    raise fail(lineno, f"non-dense item id {iid}")
                vlist = [int(x) for x in vids.split(",") if x]
                for p in vlist:
                    if not 0 <= p < len(values):
                        raise fail(lineno, f"item {iid} references unknown value id {p}")
                items.append(vlist)
            else:
                uid, iids = fields
                ilist = [int(x) for x in iids.split(",") if x]
                for v in ilist:
                    if not 0 <= v < len(items):
                        raise fail(lineno, f"user {uid} references unknown item id {v}")
                inter.setdefault(int(uid), []).extend(ilist)
        except CatalogError:
            raise
        except ValueError as exc:
            raise fail(lineno, f"malformed record: {exc}") from None

    if not types or not values or not items:
        raise CatalogError("catalog needs at least one type, value and item")
    n_users = (max(inter) + 1) if inter else 0
    n_items = len(items)
    voff = n_users + n_items
    item_values = tuple(frozenset(voff + p for p in vs) for vs in items)
    interactions = tuple(
        frozenset(n_users + v for v in inter.get(u, ())) for u in range(n_users)
    )
    return Catalog(
        n_users=n_users,
        n_items=n_items,
        n_types=len(types),
        type_names=tuple(types),
        value_names=tuple(name for _, name in values),
        value_type=tuple(t for t, _ in values),
        item_values=item_values,
        interactions=interactions,
    )


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def generate_synthetic(spec: SyntheticSpec) -> Catalog:
    """Deterministic synthetic catalog; a pure function of ``spec``.

    Structure: type 0 is a universal "anchor" value carried by every item (a
    broad opening preference, e.g. a country or platform), type 1 encodes a
    latent taste cluster, and the remaining "facet" types take per-cluster
    preferred values with a small noise rate. Users interact mostly inside
    one cluster but always touch at least one outside item, so the shared
    value set of any V(u) is exactly the anchor: every session opens with
    the full catalog in play, and distinguishing near-twin cluster items is
    a ranking problem rather than an elimination one.
    """
    spec.check()
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, spec.seed]))
    n_vals = spec.n_types * spec.n_values_per_type
    m = spec.n_values_per_type

    type_names = tuple(f"type{y}" for y in range(spec.n_types))
    value_names = tuple(
        f"t{y}v{j}" for y in range(spec.n_types) for j in range(m)
    )
    value_type = tuple(y for y in range(spec.n_types) for _ in range(m))

    # how many types each item draws one value from
    full_types = min(spec.values_per_item, spec.n_types)
    extra = spec.values_per_item - full_types  # additional values beyond one-per-type

    n_clusters = m if spec.n_types >= 2 else 1
    noise = 0.18  # chance a facet ignores the cluster preference

    # per-cluster preferred facet values; a permutation per type keeps
    # clusters fully separated on every facet
    pref = np.stack(
        [rng.permutation(m) for _ in range(spec.n_types)], axis=1
    )[:n_clusters]

    local_item_values: list[set[int]] = []
    item_cluster = rng.permutation(
        np.arange(spec.n_items, dtype=np.int64) % n_clusters
    )
    for i in range(spec.n_items):
        cluster = int(item_cluster[i])
        vals: set[int] = set()
        for y in range(full_types):
            if y == 0:
                j = 0  # universal anchor value
            elif y == 1 and spec.n_types >= 2:
                j = cluster
            else:
                j = int(pref[cluster, y]) if rng.random() >= noise else int(rng.integers(0, m))
            vals.add(y * m + j)
        while len(vals) < full_types + extra:
            vals.add(int(rng.integers(0, n_vals)))
        local_item_values.append(vals)

    # users: mostly in-cluster interactions plus at least one outside item,
    # so the only value shared across V(u) is the anchor
    interactions: list[frozenset[int]] = []
    for u in range(spec.n_users):
        cluster = u % n_clusters
        inside = np.flatnonzero(item_cluster == cluster)
        outside = np.flatnonzero(item_cluster != cluster)
        chosen: set[int] = set()
        if len(outside) and spec.interactions_per_user >= 2:
            n_out = max(1, int(round(0.15 * spec.interactions_per_user)))
            n_out = min(n_out, len(outside), spec.interactions_per_user - 1)
            chosen.update(
                int(v) for v in rng.choice(outside, size=n_out, replace=False)
            )
        n_in = min(spec.interactions_per_user - len(chosen), len(inside))
        chosen.update(int(v) for v in rng.choice(inside, size=n_in, replace=False))
        pool = np.setdiff1d(np.arange(spec.n_items), np.fromiter(chosen, dtype=np.int64, count=len(chosen)))
        while len(chosen) < spec.interactions_per_user:
            pick = int(rng.choice(pool))
            pool = pool[pool != pick]
            chosen.add(pick)
        interactions.append(frozenset(chosen))

    voff = spec.n_users + spec.n_items
    ioff = spec.n_users
    return Catalog(
        n_users=spec.n_users,
        n_items=spec.n_items,
        n_types=spec.n_types,
        type_names=type_names,
        value_names=value_names,
        value_type=value_type,
        item_values=tuple(frozenset(voff + p for p in vs) for vs in local_item_values),
        interactions=tuple(frozenset(ioff + v for v in its) for its in interactions),
    )


# ---------------------------------------------------------------------------
# graph + split
# ---------------------------------------------------------------------------

def build_global_graph(catalog: Catalog) -> GlobalGraph:
    """Edges exactly mirror interactions and item-value associations."""
    ui = tuple(
        (u, v) for u in catalog.users for v in sorted(catalog.interactions[u])
    )
    pv = tuple(
        (p, catalog.item_offset + local)
        for local, vals in enumerate(catalog.item_values)
        for p in sorted(vals)
    )
    return GlobalGraph(
        n_entities=catalog.n_entities,
        user_item_edges=ui,
        value_item_edges=pv,
    )


def split_interactions(
    catalog: Catalog, seed: int
) -> tuple[Catalog, Catalog, Catalog]:
    """Partition each user's (user, item) pairs 7 : 1.5 : 1.5 by count.

    Users with fewer than 3 interactions keep everything in train. The item
    and value universe is shared by all three returned catalogs.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x5917, seed]))
    train: list[frozenset[int]] = []
    valid: list[frozenset[int]] = []
    test: list[frozenset[int]] = []
    for u in catalog.users:
        pairs = sorted(catalog.interactions[u])
        n = len(pairs)
        if n < 3:
            train.append(frozenset(pairs))
            valid.append(frozenset())
            test.append(frozenset())
            continue
        order = rng.permutation(n)
        n_valid = int(round(0.15 * n))
        n_test = int(round(0.15 * n))
        if n - n_valid - n_test < 1:  # never leave a user without train pairs
            n_valid = max(0, n_valid - 1)
        shuffled = [pairs[i] for i in order]
        test.append(frozenset(shuffled[:n_test]))
        valid.append(frozenset(shuffled[n_test:n_test + n_valid]))
        train.append(frozenset(shuffled[n_test + n_valid:]))
    return (
        catalog.with_interactions(tuple(train)),
        catalog.with_interactions(tuple(valid)),
        catalog.with_interactions(tuple(test)),
    )
