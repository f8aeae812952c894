"""Citation-style dataset ingestion.

File formats (UTF-8, whitespace separated, arbitrary string ids):
  node file: one node per line, `id f1 f2 ... fd label`
  edge file: one edge per line, `id id`
"""
from __future__ import annotations

import numpy as np

from ..errors import IngestError
from .graph import Graph, build_csr


def load_citation_graph(node_file: str, edge_file: str) -> Graph:
    """Parse node/edge files into an undirected, deduplicated graph.

    Feature rows are scaled to unit L1 norm (zero rows stay zero). Label
    strings map to class indices in sorted order, so the mapping does not
    depend on file order.
    """
    ids: list[str] = []
    feat_rows: list[np.ndarray] = []
    label_strs: list[str] = []
    dim = None
    with open(node_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise IngestError(f"{node_file}:{lineno}: expected `id features... label`")
            if dim is None:
                dim = len(parts) - 2
            elif len(parts) - 2 != dim:
                raise IngestError(
                    f"{node_file}:{lineno}: expected {dim} features, got {len(parts) - 2}"
                )
            try:
                row = np.array([float(tok) for tok in parts[1:-1]], dtype=np.float64)
            except ValueError as exc:
                raise IngestError(f"{node_file}:{lineno}: bad feature value ({exc})") from None
            ids.append(parts[0])
            feat_rows.append(row)
            label_strs.append(parts[-1])
    if not ids:
        raise IngestError(f"{node_file}: no nodes")
    if len(set(ids)) != len(ids):
        raise IngestError(f"{node_file}: duplicate node ids")
    index = {node_id: i for i, node_id in enumerate(ids)}

    edges = []
    with open(edge_file, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise IngestError(f"{edge_file}:{lineno}: expected `id id`")
            try:
                a, b = index[parts[0]], index[parts[1]]
            except KeyError as exc:
                raise IngestError(f"{edge_file}:{lineno}: unknown node id {exc}") from None
            edges.append((a, b))

    n = len(ids)
    indptr, indices = build_csr(n, np.array(edges, dtype=np.int64).reshape(-1, 2))

    features = np.vstack(feat_rows)
    norms = np.abs(features).sum(axis=1, keepdims=True)
    np.divide(features, norms, out=features, where=norms > 0)

    classes = sorted(set(label_strs))
    class_index = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_index[s] for s in label_strs], dtype=np.int64)

    return Graph(n=n, indptr=indptr, indices=indices,
                 features=np.ascontiguousarray(features), labels=labels,
                 num_classes=len(classes))
