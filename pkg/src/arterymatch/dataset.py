"""Dataset manifest: cases, per-case seeds, and the train/test/template split.

Template cases stand in for the expert-curated reference set: the largest
graphs are chosen, alternating across view angles so every view keeps usable
templates.  The remaining cases are split into test and train by a seeded
shuffle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FileFormatError
from .fileio import atomic_write_text
from .graphs import IndividualGraph, load_graph
from .rng import stream

__all__ = ["CaseEntry", "MANIFEST_FORMAT_VERSION", "assign_roles", "write_manifest", "load_manifest", "load_graphs_by_role"]

MANIFEST_FORMAT_VERSION = 1

_ROLES = ("train", "test", "template")


@dataclass
class CaseEntry:
    case_id: str
    seed: int
    view_angle: str
    role: str
    graph_path: str
    mask_path: str
    intensity_path: str
    n_nodes: int


def assign_roles(
    sizes: list[tuple[str, str, int]],  # (case_id, view_angle, n_nodes)
    n_templates: int,
    n_test: int,
    seed: int,
) -> dict[str, str]:
    """case_id -> role.  Templates are the largest cases, alternating views."""
    if n_templates + n_test > len(sizes):
        raise FileFormatError(
            f"cannot split {len(sizes)} cases into {n_templates} templates + {n_test} test"
        )
    by_view: dict[str, list[tuple[str, str, int]]] = {}
    for entry in sizes:
        by_view.setdefault(entry[1], []).append(entry)
    for view in by_view:
        by_view[view].sort(key=lambda e: (-e[2], e[0]))

    roles: dict[str, str] = {}
    views = sorted(by_view)
    cursor = {view: 0 for view in views}
    k = 0
    while sum(1 for r in roles.values() if r == "template") < n_templates:
        view = views[k % len(views)]
        k += 1
        pool = by_view[view]
        while cursor[view] < len(pool) and pool[cursor[view]][0] in roles:
            cursor[view] += 1
        if cursor[view] < len(pool):
            roles[pool[cursor[view]][0]] = "template"
            cursor[view] += 1
        elif all(cursor[v] >= len(by_view[v]) for v in views):
            break

    remaining = sorted(e[0] for e in sizes if e[0] not in roles)
    rng = stream(seed, "dataset", "split")
    order = list(rng.permutation(len(remaining)))
    test_ids = {remaining[i] for i in order[:n_test]}
    for cid in remaining:
        roles[cid] = "test" if cid in test_ids else "train"
    return roles


def write_manifest(path, entries: list[CaseEntry], seed: int, run_config_hash: str) -> None:
    payload = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "run_config_hash": run_config_hash,
        "seed": seed,
        "cases": [
            {
                "id": e.case_id,
                "seed": e.seed,
                "view_angle": e.view_angle,
                "role": e.role,
                "graph": e.graph_path,
                "mask": e.mask_path,
                "intensity": e.intensity_path,
                "n_nodes": e.n_nodes,
            }
            for e in entries
        ],
    }
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def load_manifest(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise FileFormatError(f"{path}: manifest not found")
    except json.JSONDecodeError as err:
        raise FileFormatError(f"{path}: not valid JSON ({err})") from err
    for key in ("format_version", "cases"):
        if key not in payload:
            raise FileFormatError(f"{path}: missing field {key!r}")
    if payload["format_version"] != MANIFEST_FORMAT_VERSION:
        raise FileFormatError(
            f"{path}: unsupported manifest format_version {payload['format_version']!r}"
        )
    for k, case in enumerate(payload["cases"]):
        for key in ("id", "role", "graph"):
            if key not in case:
                raise FileFormatError(f"{path}: cases[{k}] missing field {key!r}")
        if case["role"] not in _ROLES:
            raise FileFormatError(f"{path}: cases[{k}] unknown role {case['role']!r}")
    return payload


def load_graphs_by_role(manifest_path, role: str) -> tuple[list[str], list[IndividualGraph]]:
    """Load all graphs of one role, resolving paths relative to the manifest."""
    import os

    payload = load_manifest(manifest_path)
    base = os.path.dirname(os.fspath(manifest_path))
    ids: list[str] = []
    graphs: list[IndividualGraph] = []
    for case in payload["cases"]:
        if case["role"] != role:
            continue
        ids.append(case["id"])
        graphs.append(load_graph(os.path.join(base, case["graph"])))
    return ids, graphs
