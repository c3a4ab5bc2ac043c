"""Tree hierarchies for coherent forecasting.

A hierarchy of ``n`` series with ``n_b`` bottom series is encoded by three
matrices:

* ``S`` (n, n_b): summing matrix; row i flags the bottom descendants of
  series i, and the last ``n_b`` rows form the identity.
* ``U`` (m_star, n): aggregation constraints ``U @ y = 0`` for coherent y,
  built as ``(I, -S0)`` from the first ``m_star = n - n_b`` rows of S.
* ``J`` (n_b, n): bottom selector ``(0, I)`` with ``J @ S = I``.

Series are ordered breadth-first from the most aggregated level down,
preserving the declared child order, so every level occupies a contiguous
index range.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError, ValidationError


@dataclass(frozen=True)
class HierarchySpec:
    """Declarative description of a balanced tree of named series.

    Args:
        levels: level names ordered top -> bottom.
        children: map from every aggregate node to its ordered children.
        bottom_order: bottom node names in their breadth-first order.
    """

    levels: tuple[str, ...]
    children: dict[str, tuple[str, ...]]
    bottom_order: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(
            self, "children", {p: tuple(cs) for p, cs in self.children.items()}
        )
        object.__setattr__(self, "bottom_order", tuple(self.bottom_order))

    def to_json(self) -> str:
        doc = {
            "levels": list(self.levels),
            "children": {p: list(cs) for p, cs in self.children.items()},
            "bottom_order": list(self.bottom_order),
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HierarchySpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"hierarchy file is not valid JSON: {exc}") from exc
        missing = {"levels", "children", "bottom_order"} - set(doc)
        if missing:
            raise ValidationError(
                f"hierarchy file missing keys: {sorted(missing)}"
            )
        return cls(
            levels=tuple(doc["levels"]),
            children={p: tuple(cs) for p, cs in doc["children"].items()},
            bottom_order=tuple(doc["bottom_order"]),
        )


@dataclass(frozen=True)
class Hierarchy:
    """Validated hierarchy with its structural matrices (immutable)."""

    n: int
    n_b: int
    m_star: int
    S: np.ndarray
    U: np.ndarray
    J: np.ndarray
    labels: tuple[str, ...]
    level_of: dict[int, str] = field(repr=False)
    level_slices: dict[str, range] = field(repr=False)

    @property
    def bottom_indices(self) -> range:
        return range(self.m_star, self.n)

    @property
    def aggregate_indices(self) -> range:
        return range(0, self.m_star)

    def coherence_residual(self, y: np.ndarray) -> float:
        """Max violation of the aggregation constraints, ``max |U y|``."""
        return float(np.max(np.abs(self.U @ y))) if self.m_star else 0.0


def _series_order(spec: HierarchySpec) -> list[list[str]]:
    """Breadth-first node lists per level, validating the tree on the way."""
    all_children = [c for cs in spec.children.values() for c in cs]
    seen = set()
    for c in all_children:
        if c in seen:
            raise StructuralError(f"node {c!r} has more than one parent")
        seen.add(c)

    parents = set(spec.children)
    roots = [p for p in parents if p not in seen]
    # a root may also be an implicit leaf-only tree; cover declared bottoms too
    roots += [b for b in spec.bottom_order if b not in seen and b not in parents]
    if len(roots) != 1:
        raise StructuralError(
            f"hierarchy must have exactly one root, found {sorted(roots)}"
        )

    tiers = [[roots[0]]]
    while tiers[-1]:
        nxt: list[str] = []
        for node in tiers[-1]:
            nxt.extend(spec.children.get(node, ()))
        if nxt:
            tiers.append(nxt)
        else:
            break

    names = [node for tier in tiers for node in tier]
    if len(set(names)) != len(names):
        raise ValidationError("node names are not unique")
    declared = set(spec.bottom_order) | set(spec.children)
    reached = set(names)
    if declared - reached:
        raise StructuralError(
            f"orphan nodes not reachable from the root: {sorted(declared - reached)}"
        )

    if len(tiers) != len(spec.levels):
        raise StructuralError(
            f"{len(spec.levels)} levels declared but the tree has {len(tiers)}"
        )
    # balanced tree: leaves appear only in the last tier
    leaves = {node for tier in tiers for node in tier if node not in spec.children}
    last = set(tiers[-1])
    if leaves != last:
        raise StructuralError(
            "unbalanced hierarchy: every bottom series must sit at the last level"
        )
    for node in tiers[-1]:
        if node in spec.children and not spec.children[node]:
            raise StructuralError(f"aggregate node {node!r} has no children")
    if tuple(tiers[-1]) != spec.bottom_order:
        raise ValidationError(
            "bottom_order must match the breadth-first order of the leaves"
        )
    return tiers


def build_hierarchy(spec: HierarchySpec) -> Hierarchy:
    """Construct the summing, constraint, and selector matrices for a spec.

    Raises:
        StructuralError: cycles, orphans, multiple roots, unbalanced trees.
        ValidationError: duplicate names or inconsistent bottom_order.
    """
    tiers = _series_order(spec)
    labels = tuple(node for tier in tiers for node in tier)
    index = {name: i for i, name in enumerate(labels)}
    n = len(labels)
    n_b = len(spec.bottom_order)
    m_star = n - n_b
    if m_star < 1:
        raise ValidationError("hierarchy needs at least one aggregate series")

    bottom_index = {name: j for j, name in enumerate(spec.bottom_order)}
    S = np.zeros((n, n_b), dtype=np.int64)

    def descend(node: str) -> list[str]:
        if node not in spec.children:
            return [node]
        out: list[str] = []
        for child in spec.children[node]:
            out.extend(descend(child))
        return out

    for name, i in index.items():
        for leaf in descend(name):
            S[i, bottom_index[leaf]] = 1

    S = S.astype(np.float64)
    U = np.concatenate([np.eye(m_star), -S[:m_star]], axis=1)
    J = np.concatenate([np.zeros((n_b, m_star)), np.eye(n_b)], axis=1)
    for arr in (S, U, J):
        arr.setflags(write=False)

    level_of = {}
    level_slices = {}
    pos = 0
    for level_name, tier in zip(spec.levels, tiers):
        level_slices[level_name] = range(pos, pos + len(tier))
        for _ in tier:
            level_of[pos] = level_name
            pos += 1

    return Hierarchy(
        n=n,
        n_b=n_b,
        m_star=m_star,
        S=S,
        U=U,
        J=J,
        labels=labels,
        level_of=level_of,
        level_slices=level_slices,
    )


def constraint_matrix(h: Hierarchy) -> np.ndarray:
    """Aggregation constraint matrix ``U = (I, -S0)`` of shape (m_star, n)."""
    return h.U


def level_indices(h: Hierarchy, level: str) -> range:
    """Contiguous index range of a level in the top-to-bottom ordering."""
    try:
        return h.level_slices[level]
    except KeyError:
        raise ValidationError(
            f"unknown level {level!r}; have {sorted(h.level_slices)}"
        ) from None


def fanout_hierarchy(n_b: int, fanout: int, levels=("L2", "L1", "L0")) -> HierarchySpec:
    """Two-level spec aggregating the bottom series in order by ``fanout``.

    Rejects bottom counts that do not divide evenly instead of guessing a
    ragged middle level.
    """
    if n_b <= 0 or fanout <= 0:
        raise ValidationError("n_b and fanout must be positive")
    if n_b % fanout != 0:
        raise ValidationError(
            f"n_b={n_b} is not a multiple of the aggregation fanout {fanout}"
        )
    n_mid = n_b // fanout
    bottoms = [f"{levels[2]}-{i}" for i in range(1, n_b + 1)]
    mids = [f"{levels[1]}-{j}" for j in range(1, n_mid + 1)]
    top = f"{levels[0]}-1"
    children = {top: tuple(mids)}
    for j, mid in enumerate(mids):
        children[mid] = tuple(bottoms[j * fanout : (j + 1) * fanout])
    return HierarchySpec(levels=tuple(levels), children=children, bottom_order=tuple(bottoms))
