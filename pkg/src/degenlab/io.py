"""Field containers and CSV export."""

from __future__ import annotations

import json

import numpy as np

from .mesh import Mesh

FIELD_FORMAT_VERSION = 1


def export_field_csv(path: str, mesh: Mesh, u: np.ndarray) -> None:
    """Rows: dof id, coordinates, real and imaginary parts."""
    coords = mesh.vertex_coords()
    u = np.asarray(u)
    with open(path, "w") as fh:
        fh.write("dof," + ",".join(f"x{a}" for a in range(mesh.dim)) + ",re,im\n")
        for i in range(len(u)):
            xs = ",".join(f"{c:.10e}" for c in coords[i])
            fh.write(f"{i},{xs},{np.real(u[i]):.12e},{np.imag(u[i]):.12e}\n")


def save_field(path: str, mesh: Mesh, u: np.ndarray, name: str = "field") -> None:
    arrays = {f"axis{i}": a for i, a in enumerate(mesh.axes)}
    arrays["values"] = np.asarray(u)
    arrays["descriptor"] = np.frombuffer(json.dumps(
        {"format": FIELD_FORMAT_VERSION, "name": name,
         "dim": mesh.dim}).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_field(path: str):
    data = np.load(path)
    desc = json.loads(bytes(data["descriptor"]).decode())
    if desc["format"] != FIELD_FORMAT_VERSION:
        raise ValueError(f"unsupported field container version {desc['format']}")
    axes = [data[f"axis{i}"] for i in range(desc["dim"])]
    return axes, data["values"], desc
