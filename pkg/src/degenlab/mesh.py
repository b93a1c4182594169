"""Graded tensor-product box meshes in the upper half-space.

The last coordinate is vertical (x_d >= 0); vertical layer heights form a
geometric sequence shrinking toward the bottom face.  Boundary facets carry
one of the tags Sigma1 / Sigma2 / Rest; by default the entire bottom face is
Sigma1 and everything else Sigma2.  Refinement doubles every axis and takes
the square root of the grading ratio, which splits each vertical layer into
two sub-layers of the new ratio: node sets are exactly nested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveExtent, TooFewCells, UnknownTag

TAG_REST = 0
TAG_SIGMA1 = 1
TAG_SIGMA2 = 2
_TAG_NAMES = {TAG_REST: "rest", TAG_SIGMA1: "sigma1", TAG_SIGMA2: "sigma2"}
_TAG_CODES = {v: k for k, v in _TAG_NAMES.items()}

MESH_FORMAT_VERSION = 1


def geometric_heights(length: float, n: int, ratio: float) -> np.ndarray:
    """Layer heights from bottom to top; each layer is `ratio` times the one above."""
    r = float(ratio)
    if r == 1.0:
        return np.full(n, length / n)
    top = length * (1.0 - r) / (1.0 - r**n)
    return top * r ** np.arange(n - 1, -1, -1)


@dataclass
class Mesh:
    axes: list  # per-axis node coordinate arrays
    grading: float | None
    tag_name: str = "bottom-sigma1"
    facet_axis: np.ndarray = field(default=None, repr=False)
    facet_side: np.ndarray = field(default=None, repr=False)
    facet_index: np.ndarray = field(default=None, repr=False)  # transverse cell multi-index
    facet_tag: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def cells_per_axis(self):
        return tuple(len(a) - 1 for a in self.axes)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_axis))

    @property
    def n_vertices(self) -> int:
        return int(np.prod([len(a) for a in self.axes]))

    @property
    def lengths(self):
        return tuple(float(a[-1] - a[0]) for a in self.axes)

    def vertex_coords(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def vertex_shape(self):
        return tuple(len(a) for a in self.axes)

    def vertex_id(self, multi_index) -> int:
        return int(np.ravel_multi_index(multi_index, self.vertex_shape()))

    # -- facets ------------------------------------------------------------

    def facet_centroid(self, f: int) -> np.ndarray:
        ax = self.facet_axis[f]
        side = self.facet_side[f]
        idx = self.facet_index[f]
        c = np.empty(self.dim)
        t = 0
        for a in range(self.dim):
            if a == ax:
                c[a] = self.axes[a][0] if side == 0 else self.axes[a][-1]
            else:
                i = idx[t]
                c[a] = 0.5 * (self.axes[a][i] + self.axes[a][i + 1])
                t += 1
        return c

    def facet_vertex_ids(self, f: int) -> np.ndarray:
        """Vertex ids of the 2^(dim-1) corners of boundary facet f."""
        ax = self.facet_axis[f]
        side = self.facet_side[f]
        idx = self.facet_index[f]
        per_axis = []
        t = 0
        for a in range(self.dim):
            if a == ax:
                per_axis.append([0 if side == 0 else len(self.axes[a]) - 1])
            else:
                i = idx[t]
                per_axis.append([i, i + 1])
                t += 1
        combos = np.meshgrid(*per_axis, indexing="ij")
        flat = np.stack([c.ravel() for c in combos], axis=1)
        return np.ravel_multi_index(flat.T, self.vertex_shape())

    def facets_with_tag(self, tag: int) -> np.ndarray:
        return np.nonzero(self.facet_tag == tag)[0]

    def vertex_tag_sets(self):
        """For each boundary vertex id, the set of facet tags it touches."""
        out: dict[int, set] = {}
        for f in range(len(self.facet_axis)):
            tag = int(self.facet_tag[f])
            for v in self.facet_vertex_ids(f):
                out.setdefault(int(v), set()).add(tag)
        return out

    # -- derived meshes ----------------------------------------------------

    def refine(self) -> "Mesh":
        cells = [2 * n for n in self.cells_per_axis]
        ratio = np.sqrt(self.grading) if self.grading is not None else None
        if ratio is None:
            raise ValueError("cannot refine a mesh without a declared grading")
        return build_graded_box(self.lengths, cells, ratio, tag_name=self.tag_name)

    def submesh(self, lo_idx, hi_idx) -> "Mesh":
        """Cell-aligned sub-box mesh (all of its boundary tagged Sigma2)."""
        axes = [self.axes[a][lo_idx[a]:hi_idx[a] + 1].copy() for a in range(self.dim)]
        m = Mesh(axes=axes, grading=self.grading, tag_name="all-sigma2")
        _build_facets(m, lambda c: "sigma2")
        return m

    def descriptor(self) -> dict:
        return {
            "format": MESH_FORMAT_VERSION,
            "dim": self.dim,
            "lengths": list(self.lengths),
            "cells": list(self.cells_per_axis),
            "grading": self.grading,
            "tag_predicate": self.tag_name,
        }


def _default_tagger(centroid) -> str:
    return "sigma1" if centroid[-1] == 0.0 else "sigma2"


def _build_facets(mesh: Mesh, tagger) -> None:
    dim = mesh.dim
    axis_l, side_l, index_l, tag_l = [], [], [], []
    for ax in range(dim):
        transverse = [n for a, n in enumerate(mesh.cells_per_axis) if a != ax]
        for side in (0, 1):
            for idx in np.ndindex(*transverse):
                axis_l.append(ax)
                side_l.append(side)
                index_l.append(idx)
                tag_l.append(0)
    mesh.facet_axis = np.array(axis_l, dtype=np.int8)
    mesh.facet_side = np.array(side_l, dtype=np.int8)
    mesh.facet_index = np.array(index_l, dtype=np.int32).reshape(len(axis_l), dim - 1)
    tags = np.empty(len(axis_l), dtype=np.int8)
    for f in range(len(axis_l)):
        name = tagger(mesh.facet_centroid(f))
        if name not in _TAG_CODES:
            raise UnknownTag(f"facet tag {name!r}")
        tags[f] = _TAG_CODES[name]
    mesh.facet_tag = tags
    # Sigma1 must sit exactly on the bottom face
    for f in mesh.facets_with_tag(TAG_SIGMA1):
        if not (mesh.facet_axis[f] == dim - 1 and mesh.facet_side[f] == 0):
            raise UnknownTag("Sigma1 facets must lie in {x_d = 0}")


def build_graded_box(lengths, cells_per_axis, grading_ratio: float,
                     tagger=None, tag_name: str | None = None) -> Mesh:
    """Mesh a box [0,L_1] x ... x [0,L_d] with geometric vertical grading.

    `tagger` maps a facet centroid to "sigma1" / "sigma2" / "rest"; the
    default tags the whole bottom face Sigma1 and everything else Sigma2.
    """
    lengths = [float(x) for x in lengths]
    cells = [int(n) for n in cells_per_axis]
    dim = len(lengths)
    if dim not in (2, 3):
        raise ValueError("only 2 or 3 spatial dimensions are supported")
    if len(cells) != dim:
        raise ValueError("lengths and cellsPerAxis must have equal length")
    for L in lengths:
        if L <= 0:
            raise NonPositiveExtent(f"axis extent {L} must be positive")
    for n in cells:
        if n < 2:
            raise TooFewCells(f"need at least 2 cells per axis, got {n}")
    r = float(grading_ratio)
    if not (0.0 < r <= 1.0):
        raise ValueError(f"grading ratio must lie in (0, 1], got {r}")

    axes = []
    for a in range(dim - 1):
        axes.append(np.linspace(0.0, lengths[a], cells[a] + 1))
    h = geometric_heights(lengths[-1], cells[-1], r)
    vert = np.concatenate([[0.0], np.cumsum(h)])
    vert[-1] = lengths[-1]
    axes.append(vert)

    mesh = Mesh(axes=axes, grading=r,
                tag_name=tag_name or ("bottom-sigma1" if tagger is None else "custom"))
    _build_facets(mesh, tagger or _default_tagger)
    return mesh


def validate_mesh(mesh: Mesh) -> None:
    """Assert the structural invariants; raises AssertionError on violation."""
    assert np.all(mesh.axes[-1] >= 0.0), "vertical coordinates must be >= 0"
    for a in mesh.axes:
        assert np.all(np.diff(a) > 0), "cell volumes must be positive"
    counts = {t: len(mesh.facets_with_tag(t)) for t in (TAG_REST, TAG_SIGMA1, TAG_SIGMA2)}
    expected = 0
    for ax in range(mesh.dim):
        expected += 2 * int(np.prod([n for a, n in enumerate(mesh.cells_per_axis) if a != ax]))
    assert sum(counts.values()) == expected == len(mesh.facet_tag)
    for f in mesh.facets_with_tag(TAG_SIGMA1):
        assert mesh.facet_axis[f] == mesh.dim - 1 and mesh.facet_side[f] == 0
    if mesh.grading is not None:
        hh = np.diff(mesh.axes[-1])
        if len(hh) > 1:
            ratios = hh[:-1] / hh[1:]
            assert np.allclose(ratios, mesh.grading, rtol=1e-10), "heights not geometric"


def save_mesh(mesh: Mesh, path: str) -> None:
    """Versioned binary container (.npz) plus an embedded JSON descriptor."""
    arrays = {f"axis{i}": a for i, a in enumerate(mesh.axes)}
    arrays.update(
        facet_axis=mesh.facet_axis, facet_side=mesh.facet_side,
        facet_index=mesh.facet_index, facet_tag=mesh.facet_tag,
        descriptor=np.frombuffer(json.dumps(mesh.descriptor()).encode(), dtype=np.uint8),
    )
    np.savez(path, **arrays)


def load_mesh(path: str) -> Mesh:
    data = np.load(path)
    desc = json.loads(bytes(data["descriptor"]).decode())
    if desc["format"] != MESH_FORMAT_VERSION:
        raise ValueError(f"unsupported mesh container version {desc['format']}")
    axes = [data[f"axis{i}"] for i in range(desc["dim"])]
    mesh = Mesh(axes=axes, grading=desc["grading"], tag_name=desc["tag_predicate"],
                facet_axis=data["facet_axis"], facet_side=data["facet_side"],
                facet_index=data["facet_index"], facet_tag=data["facet_tag"])
    return mesh
