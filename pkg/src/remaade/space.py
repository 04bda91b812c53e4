"""Categorical search spaces and the 7-node NAS cell space."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

ENUMERATION_LIMIT = 2**20

NAS_NODES = 7
NAS_OPS = ("conv1x1", "conv3x3", "maxpool3x3")
NAS_OP_NODES = 5
NAS_MAX_EDGES = 9
# strict upper triangle of the 7x7 adjacency matrix, row-major
NAS_EDGES = tuple((r, c) for r in range(NAS_NODES) for c in range(r + 1, NAS_NODES))


class SpaceError(ValueError):
    pass


def _always(space, s):
    return True


def nas_cell_valid(space, s) -> bool:
    """At most 9 active edges and a directed path from node 0 to node 6."""
    bits = s[NAS_OP_NODES:]
    if sum(bits) > NAS_MAX_EDGES:
        return False
    reach = [False] * NAS_NODES
    reach[0] = True
    # node indices are already a topological order
    for (src, dst), on in zip(NAS_EDGES, bits):
        if on and reach[src]:
            reach[dst] = True
    return reach[-1]


VALIDITY = {"always": _always, "none": _always, "nas-cell": nas_cell_valid}


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[int, ...]
    families: tuple[str, ...]
    validity: str = "always"
    predicate: Callable = field(default=_always, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def family_names(self) -> list[str]:
        """Family ids in order of first appearance."""
        return list(dict.fromkeys(self.families))

    def family_dim(self, fam: str) -> int:
        return self.dims[self.families.index(fam)]

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def check(self, s: Sequence[int]) -> tuple[int, ...]:
        s = tuple(int(x) for x in s)
        if len(s) != self.n:
            raise SpaceError(f"string has length {len(s)}, space has {self.n} hyperparameters")
        for i, (v, dim) in enumerate(zip(s, self.dims)):
            if not 0 <= v < dim:
                raise SpaceError(f"value {v} out of range for hyperparameter {i} (cardinality {dim})")
        return s

    def is_valid(self, s: Sequence[int]) -> bool:
        return bool(self.predicate(self, self.check(s)))


def build_space(
    dims: Sequence[int],
    families: Sequence[str] | None = None,
    validity: str | Callable = "always",
) -> SearchSpace:
    """Create an immutable space descriptor.

    ``families`` defaults to one family per distinct cardinality. ``validity``
    is a registered predicate name or a callable ``(space, string) -> bool``.
    """
    dims = tuple(int(x) for x in dims)
    if not dims:
        raise SpaceError("a search space needs at least one hyperparameter")
    if any(x < 2 for x in dims):
        raise SpaceError(f"every cardinality must be >= 2, got {list(dims)}")
    if families is None:
        families = tuple(f"D{x}" for x in dims)
    families = tuple(str(f) for f in families)
    if len(families) != len(dims):
        raise SpaceError("families and dims differ in length")
    seen: dict[str, int] = {}
    for fam, dim in zip(families, dims):
        if seen.setdefault(fam, dim) != dim:
            raise SpaceError(f"family {fam!r} mixes cardinalities {seen[fam]} and {dim}")
    if callable(validity):
        return SearchSpace(dims, families, getattr(validity, "__name__", "user"), validity)
    if validity not in VALIDITY:
        raise SpaceError(f"unknown validity predicate {validity!r}")
    return SearchSpace(dims, families, validity, VALIDITY[validity])


def nas101_cell_space() -> SearchSpace:
    """5 operation choices followed by 21 edge bits."""
    dims = [len(NAS_OPS)] * NAS_OP_NODES + [2] * len(NAS_EDGES)
    families = ["op"] * NAS_OP_NODES + ["edge"] * len(NAS_EDGES)
    return build_space(dims, families, "nas-cell")


def is_valid(space: SearchSpace, s: Sequence[int]) -> bool:
    return space.is_valid(s)


def enumerate_strings(space: SearchSpace, include_invalid: bool = False) -> Iterator[tuple[int, ...]]:
    """Every string in lexicographic order, optionally filtered by validity."""
    if space.size > ENUMERATION_LIMIT:
        raise SpaceError(f"space has {space.size} strings, enumeration limit is {ENUMERATION_LIMIT}")
    for s in itertools.product(*(range(x) for x in space.dims)):
        if include_invalid or space.predicate(space, s):
            yield s


def string_array(space: SearchSpace, include_invalid: bool = False) -> np.ndarray:
    return np.array(list(enumerate_strings(space, include_invalid)), dtype=np.int64).reshape(-1, space.n)


def parse_space(text: str) -> SearchSpace:
    """Parse ``nas101-cell`` or ``dims=3,3,2[;validity=nas-cell|none]``."""
    text = text.strip()
    if text in ("nas101-cell", "space=nas101-cell"):
        return nas101_cell_space()
    parts = dict(p.split("=", 1) for p in text.replace(";", " ").split() if "=" in p)
    if "dims" not in parts:
        raise SpaceError(f"cannot parse space {text!r}")
    dims = [int(x) for x in parts["dims"].split(",")]
    families = parts["families"].split(",") if "families" in parts else None
    return build_space(dims, families, parts.get("validity", "always"))


def format_space(space: SearchSpace) -> str:
    if space == nas101_cell_space():
        return "nas101-cell"
    out = "dims=" + ",".join(map(str, space.dims))
    if space.validity not in ("always", "none"):
        out += f";validity={space.validity}"
    return out
