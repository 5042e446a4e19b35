"""Overlapping grouping structures, selection rules, and the grouping file format.

Covariate indices are 0-based throughout the Python API.  The on-disk format
additionally accepts 1-based indices or variable names (see
:func:`parse_grouping_file`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np


class GroupingError(ValueError):
    """Raised on malformed grouping files or invalid construction input."""


@dataclass(frozen=True)
class Group:
    name: str
    members: tuple[int, ...]
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(int(m) for m in self.members)))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class GroupingStructure:
    """Ordered list of possibly overlapping covariate groups with weights.

    ``unpenalized`` lists covariates deliberately outside every group
    (for intercept-like terms); coverage is checked for the rest.
    """

    groups: tuple[Group, ...]
    p: int
    variables: tuple[str, ...] = None
    unpenalized: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if self.variables is None:
            object.__setattr__(self, "variables", tuple(f"x{j + 1}" for j in range(self.p)))
        else:
            object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "unpenalized", tuple(sorted(set(int(j) for j in self.unpenalized))))
        if len(self.variables) != self.p:
            raise GroupingError(f"{len(self.variables)} variable names for p={self.p}")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def weights(self) -> np.ndarray:
        return np.array([g.weight for g in self.groups], dtype=float)

    def member_arrays(self) -> list[np.ndarray]:
        return [np.asarray(g.members, dtype=np.int64) for g in self.groups]

    def covered(self) -> np.ndarray:
        """Sorted union of all group members."""
        if not self.groups:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([g.members for g in self.groups])).astype(np.int64)

    def reweighted(self, weights: Sequence[float]) -> "GroupingStructure":
        if len(weights) != self.n_groups:
            raise GroupingError("one weight per group required")
        new = tuple(Group(g.name, g.members, w) for g, w in zip(self.groups, weights))
        return GroupingStructure(new, self.p, self.variables, self.unpenalized)


def validate(structure: GroupingStructure) -> list[str]:
    """Collect diagnostics; the structure is valid iff the list is empty."""
    diags = []
    if structure.n_groups == 0:
        diags.append("no groups defined")
    seen_names = set()
    for k, g in enumerate(structure.groups):
        if not g.members:
            diags.append(f"group {k} ({g.name!r}) is empty")
        if g.weight <= 0:
            diags.append(f"group {k} ({g.name!r}) has non-positive weight {g.weight}")
        if g.name in seen_names:
            diags.append(f"duplicate group name {g.name!r}")
        seen_names.add(g.name)
        bad = [m for m in g.members if not 0 <= m < structure.p]
        if bad:
            diags.append(f"group {k} ({g.name!r}) has out-of-range members {bad}")
    covered = set(structure.covered().tolist())
    must_cover = set(range(structure.p)) - set(structure.unpenalized)
    missing = sorted(must_cover - covered)
    if missing:
        names = ", ".join(structure.variables[j] for j in missing)
        diags.append(f"covariates not covered by any group: {names}")
    return diags


@dataclass(frozen=True)
class SelectionRule:
    """Support-level constraint.

    kind "implies": if any of ``antecedent`` is selected, all of
    ``consequent`` must be selected.  kind "collective": the members of
    ``antecedent`` are selected together or not at all.
    """

    kind: str
    antecedent: tuple[int, ...]
    consequent: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("implies", "collective"):
            raise GroupingError(f"unknown rule kind {self.kind!r}")
        if not self.antecedent:
            raise GroupingError("rule operand sets must be non-empty")
        if self.kind == "implies" and not self.consequent:
            raise GroupingError("implies rule needs a consequent set")
        object.__setattr__(self, "antecedent", tuple(sorted(int(j) for j in self.antecedent)))
        object.__setattr__(self, "consequent", tuple(sorted(int(j) for j in self.consequent)))


def check_rules(selected: Iterable[int], rules: Sequence[SelectionRule]) -> list[bool]:
    """Evaluate each rule against a selected-index set."""
    sel = set(int(j) for j in selected)
    out = []
    for r in rules:
        if r.kind == "implies":
            ok = not (set(r.antecedent) & sel) or set(r.consequent) <= sel
        else:
            s = set(r.antecedent)
            ok = s <= sel or not (s & sel)
        out.append(bool(ok))
    return out


def selection_support(beta: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices with |beta_j| > tol, ascending."""
    if tol < 0:
        raise GroupingError("tolerance must be non-negative")
    return np.nonzero(np.abs(np.asarray(beta, float)) > tol)[0]


def build_strong_heredity(p_main: int) -> GroupingStructure:
    """Grouping structure enforcing strong heredity for all pairwise interactions.

    Covariates are the p_main main terms followed by the C(p_main, 2)
    interactions in pair order (1,2), (1,3), ..., (p'-1, p').  One group per
    main term contains it together with all its interactions; every
    interaction also forms a singleton group.  All weights are 1.
    """
    if p_main < 2:
        raise GroupingError("p_main must be at least 2")
    pairs = list(combinations(range(p_main), 2))
    names = [f"X{j + 1}" for j in range(p_main)]
    names += [f"X{a + 1}:X{b + 1}" for a, b in pairs]
    inter_index = {pair: p_main + k for k, pair in enumerate(pairs)}
    groups = []
    for j in range(p_main):
        members = [j] + [inter_index[pair] for pair in pairs if j in pair]
        groups.append(Group(names[j], members))
    for pair in pairs:
        groups.append(Group(names[inter_index[pair]], (inter_index[pair],)))
    return GroupingStructure(tuple(groups), p_main + len(pairs), tuple(names))


def strong_heredity_rules(p_main: int) -> list[SelectionRule]:
    """One implies-rule per interaction: interaction selected => both mains."""
    pairs = list(combinations(range(p_main), 2))
    return [
        SelectionRule("implies", (p_main + k,), pair)
        for k, pair in enumerate(pairs)
    ]


def build_sparse_group(
    blocks: Sequence[Sequence[int]],
    within_weight: float,
    block_weight_scale: float,
) -> GroupingStructure:
    """Sparse-group structure: singletons plus size-scaled block groups.

    ``blocks`` must partition {0..p-1}.  Every covariate gets a singleton
    group of weight ``within_weight``; each block adds a group of weight
    ``block_weight_scale * sqrt(block size)``.
    """
    flat = [int(j) for b in blocks for j in b]
    p = len(flat)
    if sorted(flat) != list(range(p)):
        raise GroupingError("blocks must partition the covariate indices 0..p-1")
    names = tuple(f"X{j + 1}" for j in range(p))
    groups = [Group(names[j], (j,), within_weight) for j in range(p)]
    for k, b in enumerate(blocks):
        groups.append(Group(f"block{k + 1}", tuple(b), block_weight_scale * np.sqrt(len(b))))
    return GroupingStructure(tuple(groups), p, names)


# ---------------------------------------------------------------------------
# grouping file format (JSON object notation)

def parse_grouping_file(text: str) -> GroupingStructure:
    """Parse the JSON grouping format.

    Top-level object with either ``variables`` (name list) or ``p`` (count),
    optional ``unpenalized`` (names), and ``groups``: a list of objects with
    ``name``, optional ``weight`` (default 1.0), and ``members`` given as
    variable names or 1-based indices.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise GroupingError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(obj, dict):
        raise GroupingError("top level must be an object")
    if "variables" in obj:
        variables = obj["variables"]
        if (not isinstance(variables, list) or not variables
                or not all(isinstance(v, str) for v in variables)):
            raise GroupingError("'variables' must be a non-empty list of names")
        if len(set(variables)) != len(variables):
            raise GroupingError("duplicate variable names")
        p = len(variables)
    elif "p" in obj:
        p = obj["p"]
        if not isinstance(p, int) or p < 1:
            raise GroupingError("'p' must be a positive integer")
        variables = [f"x{j + 1}" for j in range(p)]
    else:
        raise GroupingError("either 'variables' or 'p' is required")
    name_to_idx = {v: j for j, v in enumerate(variables)}

    def resolve(member, where):
        if isinstance(member, str):
            if member not in name_to_idx:
                raise GroupingError(f"{where}: unknown covariate name {member!r}")
            return name_to_idx[member]
        if isinstance(member, int):
            if not 1 <= member <= p:
                raise GroupingError(f"{where}: index {member} outside 1..{p}")
            return member - 1
        raise GroupingError(f"{where}: members must be names or 1-based indices")

    unpen = [resolve(m, "'unpenalized'") for m in obj.get("unpenalized", [])]
    raw_groups = obj.get("groups")
    if not isinstance(raw_groups, list) or not raw_groups:
        raise GroupingError("'groups' must be a non-empty list")
    groups = []
    seen = set()
    for k, g in enumerate(raw_groups):
        where = f"group {k + 1}"
        if not isinstance(g, dict) or "name" not in g or "members" not in g:
            raise GroupingError(f"{where}: needs 'name' and 'members'")
        name = g["name"]
        if name in seen:
            raise GroupingError(f"{where}: duplicate group name {name!r}")
        seen.add(name)
        weight = g.get("weight", 1.0)
        if not isinstance(weight, (int, float)) or weight <= 0:
            raise GroupingError(f"{where}: weight must be positive")
        members = [resolve(m, where) for m in g["members"]]
        if not members:
            raise GroupingError(f"{where}: empty member list")
        groups.append(Group(str(name), tuple(members), float(weight)))
    return GroupingStructure(tuple(groups), p, tuple(variables), tuple(unpen))


def write_grouping_file(structure: GroupingStructure) -> str:
    """Canonical text form: member names sorted by index, group order kept,
    weights rendered with 17 significant digits."""
    lines = ["{"]
    vs = ", ".join(json.dumps(v) for v in structure.variables)
    lines.append(f'  "variables": [{vs}],')
    if structure.unpenalized:
        us = ", ".join(json.dumps(structure.variables[j]) for j in structure.unpenalized)
        lines.append(f'  "unpenalized": [{us}],')
    lines.append('  "groups": [')
    for k, g in enumerate(structure.groups):
        ms = ", ".join(json.dumps(structure.variables[j]) for j in g.members)
        w = format(g.weight, ".17g")
        comma = "," if k < structure.n_groups - 1 else ""
        lines.append(f'    {{"name": {json.dumps(g.name)}, "weight": {w}, "members": [{ms}]}}{comma}')
    lines.append("  ]")
    lines.append("}")
    return "\n".join(lines) + "\n"


def read_grouping_file(path) -> GroupingStructure:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grouping_file(fh.read())
