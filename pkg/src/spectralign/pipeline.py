"""End-to-end alignment of one mesh pair, plus run artifacts.

Stage order: eigenbasis per mesh (cached), coarse extrinsic fit, induced
functional map, intrinsic refinement (neural, linear-ICP baseline, or
none), then shape transfer. Artifact writing is separated from the solve
so library users can keep everything in memory.
"""

import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .errors import InputError
from .fmap import (
    FunctionalMap,
    apply_fmap,
    fmap_from_p2p,
    linear_icp_refine,
    p2p_nearest,
    save_fmap,
    save_pointmap,
)
from .mesh import TriMesh, load_mesh, save_mesh
from .spectral import cached_eigenbasis
from .stage1 import CoarseFitResult, coarse_fit, pose_template
from .stage2 import RefineResult, rectify_target, refine_embeddings
from .transfer import build_transfer_targets, solve_transfer

__all__ = [
    "AlignResult",
    "align_pair",
    "write_artifacts",
    "align_from_manifest",
    "save_matrix",
    "load_matrix",
]


@dataclass
class AlignResult:
    """Everything one pairwise alignment produces."""

    aligned: TriMesh
    point_map: np.ndarray
    fmap: FunctionalMap
    coarse: CoarseFitResult
    refined: RefineResult
    emb_source: np.ndarray
    emb_target: np.ndarray
    transfer_info: dict
    timings: dict


def align_pair(mesh_m, mesh_n, cfg=None, rig=None, pose_n=None, cache_dir=None):
    """Align source mesh_m to target mesh_n.

    Parameters
    ----------
    mesh_m, mesh_n : TriMesh
        Source (whose topology the output keeps) and target.
    cfg : PipelineConfig, optional
    rig : Rig, optional
        Skeleton bound to the source for posing toward the target.
    pose_n : Pose, optional
        Target pose; required when a rig is given.
    cache_dir : str, optional
        Eigenbasis cache directory (content-hash keyed).

    Returns
    -------
    AlignResult
    """
    cfg = cfg or PipelineConfig()
    timings = {}

    t0 = time.perf_counter()
    basis_m = cached_eigenbasis(mesh_m, cfg.K, cache_dir)
    basis_n = cached_eigenbasis(mesh_n, cfg.K, cache_dir)
    timings["spectral"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    v_posed = pose_template(mesh_m, rig, pose_n)
    coarse = coarse_fit(v_posed, basis_m.phi, mesh_m, mesh_n, cfg)
    timings["stage1"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    a0 = fmap_from_p2p(basis_m, basis_n, coarse.point_map)
    rectified = rectify_target(basis_n, a0, basis_m.eigenvalues)
    timings["fmap"] = time.perf_counter() - t0

    use_colors = bool(
        cfg.use_colors and mesh_m.colors is not None and mesh_n.colors is not None
    )
    t0 = time.perf_counter()
    refined = None
    if cfg.refine == "neural":
        refined = refine_embeddings(
            basis_m.phi_scaled,
            rectified,
            mesh_m.boundary_vertex,
            mesh_n.boundary_vertex,
            cfg,
            colors_m=mesh_m.colors if use_colors else None,
            colors_n=mesh_n.colors if use_colors else None,
        )
        emb_m, emb_n, pmap = refined.emb_source, refined.emb_target, refined.point_map
    elif cfg.refine == "linear":
        icp_map, pmap, _errors = linear_icp_refine(
            basis_m.phi_scaled, rectified, rounds=cfg.icp_rounds
        )
        emb_m = basis_m.phi_scaled
        emb_n = apply_fmap(rectified, icp_map)
    else:  # "none": correspondence straight from the rectified embeddings
        emb_m = basis_m.phi_scaled
        emb_n = rectified
        pmap, _ = p2p_nearest(emb_m, emb_n)
    timings["stage2"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    targets, tw = build_transfer_targets(
        emb_m, emb_n, mesh_n.vertices,
        mesh_m.boundary_vertex, mesh_n.boundary_vertex,
        k=cfg.knn_k, c_boost=cfg.c_boost, eps=cfg.knn_eps,
    )
    aligned, info = solve_transfer(targets, mesh_m, mesh_n, tw.nearest)
    timings["transfer"] = time.perf_counter() - t0

    return AlignResult(
        aligned=aligned,
        point_map=pmap,
        fmap=a0,
        coarse=coarse,
        refined=refined,
        emb_source=emb_m,
        emb_target=emb_n,
        transfer_info=info,
        timings=timings,
    )


# ------------------------------------------------------------ artifacts

def save_matrix(M, path):
    """Binary matrix sidecar: magic, int64 rows/cols, float64 row-major."""
    M = np.ascontiguousarray(M, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(b"MTRX")
        fh.write(struct.pack("<qq", M.shape[0], M.shape[1]))
        fh.write(M.tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        if fh.read(4) != b"MTRX":
            raise InputError(f"{path}: not a matrix sidecar")
        r, c = struct.unpack("<qq", fh.read(16))
        return np.frombuffer(fh.read(8 * r * c), dtype="<f8").reshape(r, c).copy()


def _loss_csv(history, path, terms):
    rows = np.column_stack([np.arange(len(history)), history])
    np.savetxt(
        path, rows, fmt="%.17g", delimiter=",",
        header="iteration," + ",".join(terms), comments="",
    )


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_artifacts(result, cfg, out_dir, inputs=None):
    """Write the fixed-name artifact set for one alignment run.

    aligned.ply, point_map.txt, fmap.txt, coarse.ply,
    coarse_point_map.txt, stage1_loss.csv, stage2_loss.csv (neural mode),
    emb_source.mtx, emb_target.mtx, manifest.json.

    ``inputs`` maps role names (source, target, rig, pose, config) to the
    paths the run was invoked with; they are hashed into the manifest so
    a run can be reproduced from it.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_mesh(result.aligned, os.path.join(out_dir, "aligned.ply"))
    save_pointmap(result.point_map, os.path.join(out_dir, "point_map.txt"))
    save_fmap(result.fmap, os.path.join(out_dir, "fmap.txt"))
    coarse_mesh = result.aligned.with_vertices(result.coarse.vertices)
    save_mesh(coarse_mesh, os.path.join(out_dir, "coarse.ply"))
    save_pointmap(result.coarse.point_map, os.path.join(out_dir, "coarse_point_map.txt"))
    _loss_csv(result.coarse.history, os.path.join(out_dir, "stage1_loss.csv"),
              ["total", "data", "boundary", "edge"])
    if result.refined is not None:
        _loss_csv(result.refined.history, os.path.join(out_dir, "stage2_loss.csv"),
                  ["total", "data", "boundary", "regularizer"])
    save_matrix(result.emb_source, os.path.join(out_dir, "emb_source.mtx"))
    save_matrix(result.emb_target, os.path.join(out_dir, "emb_target.mtx"))

    import numpy
    import scipy

    from . import __version__

    manifest = {
        "package_version": __version__,
        "numpy_version": numpy.__version__,
        "scipy_version": scipy.__version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "inputs": {
            role: {"path": os.path.abspath(p), "sha256": _sha256(p)}
            for role, p in (inputs or {}).items()
            if p is not None
        },
        "transfer_info": result.transfer_info,
        "timings": result.timings,
        "artifacts": sorted(
            f for f in os.listdir(out_dir) if f != "manifest.json"
        ),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def align_from_manifest(manifest_path, out_dir, cache_dir=None):
    """Re-run an alignment from its manifest; verifies input hashes."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg = PipelineConfig.from_dict(manifest["config"])
    inputs = manifest.get("inputs", {})
    for role in ("source", "target"):
        if role not in inputs:
            raise InputError(f"manifest lacks required input {role!r}")
    for role, rec in inputs.items():
        if _sha256(rec["path"]) != rec["sha256"]:
            raise InputError(f"input {role!r} changed since the manifest was written")
    mesh_m = load_mesh(inputs["source"]["path"])
    mesh_n = load_mesh(inputs["target"]["path"])
    rig = pose_n = None
    if "rig" in inputs:
        from .rig import load_pose, load_rig

        rig = load_rig(inputs["rig"]["path"], inputs["rig_weights"]["path"])
        pose_n = load_pose(inputs["pose"]["path"])
    result = align_pair(mesh_m, mesh_n, cfg, rig=rig, pose_n=pose_n, cache_dir=cache_dir)
    write_artifacts(result, cfg, out_dir,
                    inputs={role: rec["path"] for role, rec in inputs.items()})
    return result
