"""File formats: CSV tables with JSON sidecars, binary field images, run manifests.

Floats are written with ``repr`` so every value round-trips exactly and the
same data always produces the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .cavity_optics import CavityGeometry, ComplexFieldImage
from .coupling import CouplingMatrix, DensityProfile, SpinSite
from .errors import GlasscavError
from .glass_analysis import Histogram
from .replica_dynamics import ReplicaEnsemble

FIELD_MAGIC = b"GCFIELD1"
FIELD_HEADER = struct.Struct("<8sII5d")  # magic, ny, nx, pitch, w0_px, cx, cy, reserved
HEADER_BYTES = 64


class FormatError(GlasscavError, ValueError):
    """Malformed or inconsistent input file."""


def _fmt(v) -> str:
    return repr(float(v))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False, allow_nan=True) + "\n"


def write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path


def write_json(path, obj) -> Path:
    return write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_suffix(".json")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# plain matrices


def matrix_to_csv(A: np.ndarray, header=None) -> str:
    rows = [",".join(header)] if header is not None else []
    rows += [",".join(_fmt(v) for v in row) for row in np.atleast_2d(A)]
    return "\n".join(rows) + "\n"


def read_matrix_csv(path, skip_header: bool = False) -> np.ndarray:
    try:
        A = np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2,
                       encoding="utf-8")
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return A


# ---------------------------------------------------------------------------
# geometry and sites


def geometry_to_dict(geom: CavityGeometry) -> dict:
    return asdict(geom)


def geometry_from_dict(d: dict) -> CavityGeometry:
    return CavityGeometry(**d)


def sites_to_list(sites) -> list:
    return [{"position": [float(s.position[0]), float(s.position[1])],
             "density": asdict(s.density)} for s in sites]


def sites_from_list(items) -> list[SpinSite]:
    return [SpinSite(tuple(it["position"]), DensityProfile(**it["density"])) for it in items]


# ---------------------------------------------------------------------------
# coupling matrices


def write_coupling(path, Jm: CouplingMatrix, seed=None, extra: dict | None = None) -> list[Path]:
    """``J`` as an ``n x n`` CSV plus a JSON sidecar with its provenance."""
    path = Path(path)
    side = {
        "kind": "coupling_matrix",
        "n": Jm.n,
        "sites": sites_to_list(Jm.sites),
        "geometry": geometry_to_dict(Jm.geom),
        "include_local": bool(Jm.include_local),
        "quadrature": Jm.quadrature,
        "eigenvalues": [float(v) for v in Jm.eigvals],
        "seed": seed,
        "digest": Jm.digest(),
    }
    if Jm.flags is not None:
        side["flagged_entries"] = [[int(i), int(j)] for i, j in np.argwhere(Jm.flags) if i <= j]
    side.update(extra or {})
    return [write_text(path, matrix_to_csv(Jm.J)), write_json(sidecar_path(path), side)]


def read_coupling(path) -> CouplingMatrix:
    """Load a J CSV; the sidecar is optional (external matrices get bare metadata)."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    J = read_matrix_csv(path)
    if J.shape[0] != J.shape[1]:
        raise FormatError(f"{path}: J must be square, got {J.shape}")
    J = 0.5 * (J + J.T)
    side = sidecar_path(path)
    if side.exists():
        meta = read_json(side)
        sites = sites_from_list(meta.get("sites", []))
        geom = geometry_from_dict(meta["geometry"]) if "geometry" in meta else CavityGeometry()
        include_local = bool(meta.get("include_local", True))
        quad = meta.get("quadrature", {})
    else:
        sites, geom, include_local, quad = [], CavityGeometry(), True, {}
    if sites and len(sites) != J.shape[0]:
        raise FormatError(f"{path}: sidecar lists {len(sites)} sites for a {J.shape[0]}x{J.shape[0]} J")
    return CouplingMatrix(J, sites, geom, include_local, quadrature=quad)


# ---------------------------------------------------------------------------
# ensembles


def write_ensemble(path, ens: ReplicaEnsemble, extra: dict | None = None) -> list[Path]:
    """Replica CSV (rows = replicas, columns = spins) plus sidecar."""
    path = Path(path)
    header = [f"s{i}" for i in range(ens.n)]
    side = {
        "kind": "replica_ensemble",
        "n": ens.n,
        "n_reps": ens.n_reps,
        "seeds": [int(s) for s in ens.seeds],
        "t_R": None if np.isnan(ens.t_R) else float(ens.t_R),
        "J_digest": ens.J_ref,
        "meta": ens.meta,
    }
    side.update(extra or {})
    return [write_text(path, matrix_to_csv(ens.spins, header)), write_json(sidecar_path(path), side)]


def _has_header(line: str) -> bool:
    try:
        [float(t) for t in line.strip().split(",")]
    except ValueError:
        return True
    return False


def read_ensemble(path) -> ReplicaEnsemble:
    """Load an ensemble CSV; rows are renormalized if they are not unit norm.

    Files without a header row or sidecar (external sources) are accepted.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    S = read_matrix_csv(path, skip_header=_has_header(first))
    norms = np.linalg.norm(S, axis=1)
    if np.any(norms == 0) or not np.all(np.isfinite(S)):
        raise FormatError(f"{path}: every replica needs a finite non-zero configuration")
    if np.any(np.abs(norms - 1.0) > 1e-9):
        S = S / norms[:, None]
    side = sidecar_path(path)
    if side.exists():
        meta = read_json(side)
        seeds = np.asarray(meta.get("seeds", range(len(S))), dtype=np.int64)
        if len(seeds) != len(S):
            raise FormatError(f"{path}: sidecar seeds do not match the row count")
        t_R = meta.get("t_R")
        return ReplicaEnsemble(S, seeds, meta.get("J_digest", ""),
                               float("nan") if t_R is None else float(t_R), None,
                               meta.get("meta", {}))
    return ReplicaEnsemble(S, np.arange(len(S)))


# ---------------------------------------------------------------------------
# histograms and field images


def histogram_to_csv(h: Histogram) -> str:
    lines = ["bin_center,probability,stderr"]
    lines += [f"{_fmt(c)},{_fmt(p)},{_fmt(e)}"
              for c, p, e in zip(h.bin_centers, h.probabilities, h.stderr)]
    return "\n".join(lines) + "\n"


def write_histogram(path, h: Histogram) -> Path:
    return write_text(path, histogram_to_csv(h))


def read_histogram(path) -> Histogram:
    A = read_matrix_csv(path, skip_header=True)
    centers = A[:, 0]
    if len(centers) < 2:
        raise FormatError(f"{path}: need at least two bins")
    w = np.diff(centers)
    if not np.allclose(w, w[0]):
        raise FormatError(f"{path}: bins must be uniform")
    edges = np.concatenate([centers - w[0] / 2, [centers[-1] + w[0] / 2]])
    return Histogram(edges, A[:, 1], A[:, 2])


def write_field_binary(path, image: ComplexFieldImage) -> Path:
    """64-byte little-endian header then complex128 pixels in row-major order."""
    ny, nx = image.shape
    head = FIELD_HEADER.pack(FIELD_MAGIC, ny, nx, image.pixel_pitch, image.w0_px,
                             image.center[0], image.center[1], 0.0)
    head = head.ljust(HEADER_BYTES, b"\0")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(image.grid, dtype="<c16").tobytes())
    return path


def read_field_binary(path) -> ComplexFieldImage:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_BYTES)
        body = fh.read()
    if len(head) < HEADER_BYTES:
        raise FormatError(f"{path}: truncated header")
    magic, ny, nx, pitch, w0_px, cx, cy, _ = FIELD_HEADER.unpack(head[:FIELD_HEADER.size])
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: not a field image (bad magic)")
    if len(body) != ny * nx * 16:
        raise FormatError(f"{path}: expected {ny}x{nx} pixels")
    grid = np.frombuffer(body, dtype="<c16").reshape(ny, nx).copy()
    return ComplexFieldImage(grid, pitch, (cx, cy), w0_px)


def write_field_csv(path, image: ComplexFieldImage) -> list[Path]:
    """Paired ``*_real.csv`` / ``*_imag.csv`` grids plus a sidecar."""
    path = Path(path)
    stem = path.with_suffix("")
    re_p = Path(f"{stem}_real.csv")
    im_p = Path(f"{stem}_imag.csv")
    side = {"kind": "field_image", "pixel_pitch": image.pixel_pitch, "w0_px": image.w0_px,
            "center": list(image.center), "shape": list(image.shape)}
    return [write_text(re_p, matrix_to_csv(image.grid.real)),
            write_text(im_p, matrix_to_csv(image.grid.imag)),
            write_json(Path(f"{stem}.json"), side)]


def read_field_csv(path) -> ComplexFieldImage:
    stem = Path(path).with_suffix("")
    for suffix in ("_real", "_imag"):
        if str(stem).endswith(suffix):
            stem = Path(str(stem)[: -len(suffix)])
    meta = read_json(Path(f"{stem}.json"))
    re = read_matrix_csv(Path(f"{stem}_real.csv"))
    im = read_matrix_csv(Path(f"{stem}_imag.csv"))
    if re.shape != im.shape:
        raise FormatError(f"{stem}: real and imaginary grids differ in shape")
    return ComplexFieldImage(re + 1j * im, meta["pixel_pitch"], tuple(meta["center"]), meta["w0_px"])


def read_field(path) -> ComplexFieldImage:
    """Dispatch on extension: ``.gcf`` binary, otherwise the CSV pair."""
    path = Path(path)
    if path.suffix == ".gcf":
        return read_field_binary(path)
    return read_field_csv(path)


# ---------------------------------------------------------------------------
# manifests


def build_manifest(command: str, args: dict, config_hash: str, base_seed, inputs, outputs,
                   threads: int, started: datetime) -> dict:
    return {
        "tool": "glasscav",
        "version": __version__,
        "command": command,
        "args": args,
        "config_hash": config_hash,
        "base_seed": base_seed,
        "threads": int(threads),
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {str(p): file_digest(p) for p in outputs},
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }


def verify_manifest(manifest: dict) -> dict:
    """Map each recorded output to whether its current digest still matches."""
    out = {}
    for p, d in manifest["outputs"].items():
        out[p] = Path(p).exists() and file_digest(p) == d
    return out
