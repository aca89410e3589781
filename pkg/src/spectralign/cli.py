"""Command-line pipeline driver.

Exit codes: 0 success, 2 configuration error, 3 input error, 4 numerical
failure. Heavy imports happen after argument parsing so that --threads
can pin the BLAS thread pools before numpy loads; --threads 1 is the
reference deterministic mode used for reproducibility checks.
"""

import argparse
import json
import os
import sys

__all__ = ["main"]


def _build_parser():
    p = argparse.ArgumentParser(
        prog="spectralign",
        description="Align two triangle meshes of the same deformable object.",
    )
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS thread count (1 = reference deterministic mode)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("smooth-template", help="fit a smooth rest-space template")
    sp.add_argument("mesh")
    sp.add_argument("--rig", help="rig JSON (joint tree + rest transforms)")
    sp.add_argument("--weights", help="skinning weights sidecar (.npy)")
    sp.add_argument("--pose", help="pose JSON the mesh was captured in")
    sp.add_argument("--config", help="pipeline config JSON")
    sp.add_argument("--out", required=True, help="output mesh path")
    sp.set_defaults(func=_cmd_smooth_template)

    sp = sub.add_parser("align", help="full pipeline: spectral, coarse, map, refine, transfer")
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--config")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--refine", choices=["neural", "linear", "none"],
                    help="override the refinement strategy")
    sp.add_argument("--no-colors", action="store_true",
                    help="ignore vertex colors even if present")
    sp.add_argument("--rig")
    sp.add_argument("--weights")
    sp.add_argument("--pose", help="target pose JSON (requires --rig)")
    sp.add_argument("--cache-dir", help="eigenbasis cache directory")
    sp.set_defaults(func=_cmd_align)

    sp = sub.add_parser("rerun", help="reproduce an alignment from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--cache-dir")
    sp.set_defaults(func=_cmd_rerun)

    sp = sub.add_parser("eval", help="geometric metrics between two meshes")
    sp.add_argument("aligned")
    sp.add_argument("target")
    sp.add_argument("--point-map", help="predicted correspondence (point_map.txt)")
    sp.add_argument("--truth", help="ground-truth correspondence file")
    sp.add_argument("--config")
    sp.add_argument("--out", help="write the JSON report here (default stdout)")
    sp.set_defaults(func=_cmd_eval)

    sp = sub.add_parser("spectral", help="eigenbasis of one mesh to a sidecar file")
    sp.add_argument("mesh")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True, help="basis sidecar path")
    sp.add_argument("--eigenvalues", help="also write eigenvalues as text")
    sp.set_defaults(func=_cmd_spectral)

    sp = sub.add_parser("stage1", help="coarse extrinsic fit only")
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--config")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--rig")
    sp.add_argument("--weights")
    sp.add_argument("--pose")
    sp.add_argument("--cache-dir")
    sp.set_defaults(func=_cmd_stage1)

    sp = sub.add_parser("stage2", help="intrinsic refinement from a coarse point map")
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--p2p", required=True, help="coarse point map text file")
    sp.add_argument("--config")
    sp.add_argument("--refine", choices=["neural", "linear", "none"])
    sp.add_argument("--no-colors", action="store_true")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--cache-dir")
    sp.set_defaults(func=_cmd_stage2)

    sp = sub.add_parser("transfer", help="solve the aligned mesh from embeddings")
    sp.add_argument("source")
    sp.add_argument("target")
    sp.add_argument("--emb-source", required=True)
    sp.add_argument("--emb-target", required=True)
    sp.add_argument("--truth", help="ground-truth map; writes per-vertex errors")
    sp.add_argument("--config")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=_cmd_transfer)

    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .errors import ConfigError, InputError, NumericalError

    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


def _load_cfg(args):
    from .config import PipelineConfig, load_config

    cfg = load_config(args.config) if args.config else PipelineConfig()
    if getattr(args, "refine", None):
        cfg = cfg.replace(refine=args.refine)
    if getattr(args, "no_colors", False):
        cfg = cfg.replace(use_colors=False)
    return cfg


def _load_rig_args(args):
    from .errors import ConfigError
    from .rig import load_pose, load_rig

    rig = pose = None
    if args.pose and not args.rig:
        raise ConfigError("--pose requires --rig")
    if args.rig:
        if not args.weights:
            raise ConfigError("--rig requires --weights")
        rig = load_rig(args.rig, args.weights)
        if args.pose:
            pose = load_pose(args.pose)
    return rig, pose


def _cmd_smooth_template(args):
    from .errors import ConfigError
    from .mesh import load_mesh, save_mesh
    from .rig import smooth_template

    cfg = _load_cfg(args)
    rig, pose = _load_rig_args(args)
    if args.pose and rig is None:
        raise ConfigError("--pose requires --rig")
    mesh = load_mesh(args.mesh)
    lr = cfg.template_lr if cfg.template_lr > 0 else None
    template, energies = smooth_template(
        mesh, rig=rig, pose=pose, w1=cfg.w1, w2=cfg.w2, w3=cfg.w3,
        iterations=cfg.template_iterations, lr=lr,
    )
    save_mesh(template, args.out)
    print(json.dumps({"energies": energies, "out": args.out}))
    return 0


def _inputs_dict(args):
    d = {"source": args.source, "target": args.target}
    if getattr(args, "config", None):
        d["config"] = args.config
    if getattr(args, "rig", None):
        d["rig"] = args.rig
        d["rig_weights"] = args.weights
        d["pose"] = args.pose
    return d


def _cmd_align(args):
    from .mesh import load_mesh
    from .pipeline import align_pair, write_artifacts

    cfg = _load_cfg(args)
    rig, pose = _load_rig_args(args)
    mesh_m = load_mesh(args.source)
    mesh_n = load_mesh(args.target)
    result = align_pair(mesh_m, mesh_n, cfg, rig=rig, pose_n=pose,
                        cache_dir=args.cache_dir)
    write_artifacts(result, cfg, args.out_dir, inputs=_inputs_dict(args))
    print(json.dumps({"out_dir": args.out_dir, "timings": result.timings,
                      "transfer_info": result.transfer_info}))
    return 0


def _cmd_rerun(args):
    from .pipeline import align_from_manifest

    align_from_manifest(args.manifest, args.out_dir, cache_dir=args.cache_dir)
    print(json.dumps({"out_dir": args.out_dir}))
    return 0


def _cmd_eval(args):
    import numpy as np

    from .bench import chamfer_metric, correspondence_error, normal_cosine
    from .errors import InputError
    from .fmap import load_pointmap
    from .mesh import load_mesh

    cfg = _load_cfg(args)
    aligned = load_mesh(args.aligned)
    target = load_mesh(args.target)
    diag = target.bbox_diagonal()
    cd = chamfer_metric(aligned, target, samples=cfg.eval_samples, seed=cfg.seed)
    report = {
        "chamfer": cd,
        "chamfer_normalized": cd / diag**2,
        "normal_cosine": normal_cosine(aligned, target,
                                       samples=cfg.eval_samples, seed=cfg.seed),
        "config_hash": cfg.content_hash(),
    }
    if args.truth:
        if not args.point_map:
            raise InputError("--truth requires --point-map")
        predicted = load_pointmap(args.point_map)
        truth = load_pointmap(args.truth)
        if len(predicted) != len(truth):
            raise InputError(
                f"point map covers {len(predicted)} vertices, truth {len(truth)}"
            )
        if max(predicted.max(), truth.max()) >= target.n_vertices:
            raise InputError("correspondence index exceeds target vertex count")
        report["correspondence"] = correspondence_error(predicted, truth, target)
    blob = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(blob + "\n")
    print(blob)
    return 0


def _cmd_spectral(args):
    import numpy as np

    from .mesh import load_mesh
    from .spectral import cotangent_matrix, eigenbasis, save_basis

    cfg = _load_cfg(args)
    mesh = load_mesh(args.mesh)
    W, mass, _ = cotangent_matrix(mesh)
    basis = eigenbasis(W, mass, cfg.K)
    save_basis(basis, args.out)
    if args.eigenvalues:
        np.savetxt(args.eigenvalues, basis.eigenvalues, fmt="%.17g")
    print(json.dumps({"K": basis.K, "n_vertices": basis.n_vertices, "out": args.out}))
    return 0


def _cmd_stage1(args):
    import os as _os

    from .mesh import load_mesh, save_mesh
    from .pipeline import _loss_csv
    from .fmap import save_pointmap
    from .spectral import cached_eigenbasis
    from .stage1 import coarse_fit, pose_template

    cfg = _load_cfg(args)
    rig, pose = _load_rig_args(args)
    mesh_m = load_mesh(args.source)
    mesh_n = load_mesh(args.target)
    basis_m = cached_eigenbasis(mesh_m, cfg.K, args.cache_dir)
    v_posed = pose_template(mesh_m, rig, pose)
    result = coarse_fit(v_posed, basis_m.phi, mesh_m, mesh_n, cfg)
    _os.makedirs(args.out_dir, exist_ok=True)
    save_mesh(mesh_m.with_vertices(result.vertices), _os.path.join(args.out_dir, "coarse.ply"))
    save_pointmap(result.point_map, _os.path.join(args.out_dir, "coarse_point_map.txt"))
    _loss_csv(result.history, _os.path.join(args.out_dir, "stage1_loss.csv"),
              ["total", "data", "boundary", "edge"])
    print(json.dumps({"out_dir": args.out_dir, "final_loss": float(result.history[-1, 0])}))
    return 0


def _cmd_stage2(args):
    import os as _os

    from .fmap import (apply_fmap, fmap_from_p2p, linear_icp_refine,
                       load_pointmap, p2p_nearest, save_fmap, save_pointmap)
    from .mesh import load_mesh
    from .pipeline import _loss_csv, save_matrix
    from .spectral import cached_eigenbasis
    from .stage2 import rectify_target, refine_embeddings

    cfg = _load_cfg(args)
    mesh_m = load_mesh(args.source)
    mesh_n = load_mesh(args.target)
    basis_m = cached_eigenbasis(mesh_m, cfg.K, args.cache_dir)
    basis_n = cached_eigenbasis(mesh_n, cfg.K, args.cache_dir)
    p2p = load_pointmap(args.p2p)
    a0 = fmap_from_p2p(basis_m, basis_n, p2p)
    rectified = rectify_target(basis_n, a0, basis_m.eigenvalues)
    use_colors = bool(cfg.use_colors and mesh_m.colors is not None
                      and mesh_n.colors is not None)
    _os.makedirs(args.out_dir, exist_ok=True)
    if cfg.refine == "neural":
        res = refine_embeddings(
            basis_m.phi_scaled, rectified,
            mesh_m.boundary_vertex, mesh_n.boundary_vertex, cfg,
            colors_m=mesh_m.colors if use_colors else None,
            colors_n=mesh_n.colors if use_colors else None,
        )
        emb_m, emb_n, pmap = res.emb_source, res.emb_target, res.point_map
        _loss_csv(res.history, _os.path.join(args.out_dir, "stage2_loss.csv"),
                  ["total", "data", "boundary", "regularizer"])
    elif cfg.refine == "linear":
        icp_map, pmap, _err = linear_icp_refine(basis_m.phi_scaled, rectified,
                                                rounds=cfg.icp_rounds)
        emb_m, emb_n = basis_m.phi_scaled, apply_fmap(rectified, icp_map)
    else:
        emb_m, emb_n = basis_m.phi_scaled, rectified
        pmap, _ = p2p_nearest(emb_m, emb_n)
    save_fmap(a0, _os.path.join(args.out_dir, "fmap.txt"))
    save_matrix(emb_m, _os.path.join(args.out_dir, "emb_source.mtx"))
    save_matrix(emb_n, _os.path.join(args.out_dir, "emb_target.mtx"))
    save_pointmap(pmap, _os.path.join(args.out_dir, "point_map.txt"))
    print(json.dumps({"out_dir": args.out_dir, "fmap_residual": a0.residual}))
    return 0


def _cmd_transfer(args):
    import os as _os

    from .mesh import load_mesh, save_mesh
    from .pipeline import load_matrix
    from .transfer import build_transfer_targets, solve_transfer

    cfg = _load_cfg(args)
    mesh_m = load_mesh(args.source)
    mesh_n = load_mesh(args.target)
    emb_m = load_matrix(args.emb_source)
    emb_n = load_matrix(args.emb_target)
    targets, tw = build_transfer_targets(
        emb_m, emb_n, mesh_n.vertices,
        mesh_m.boundary_vertex, mesh_n.boundary_vertex,
        k=cfg.knn_k, c_boost=cfg.c_boost, eps=cfg.knn_eps,
    )
    aligned, info = solve_transfer(targets, mesh_m, mesh_n, tw.nearest)
    _os.makedirs(args.out_dir, exist_ok=True)
    save_mesh(aligned, _os.path.join(args.out_dir, "aligned.ply"))
    if args.truth:
        import numpy as np

        from .errors import InputError
        from .fmap import load_pointmap

        truth = load_pointmap(args.truth)
        if len(truth) != len(tw.nearest):
            raise InputError(
                f"truth covers {len(truth)} vertices, transfer {len(tw.nearest)}"
            )
        errs = np.linalg.norm(
            mesh_n.vertices[tw.nearest] - mesh_n.vertices[truth], axis=1
        ) / mesh_n.bbox_diagonal()
        np.savetxt(_os.path.join(args.out_dir, "per_vertex_error.txt"),
                   np.column_stack([np.arange(len(errs)), errs]),
                   fmt=["%d", "%.17g"])
        info = {**info, "mean_correspondence_error": float(errs.mean())}
    print(json.dumps({"out_dir": args.out_dir, "transfer_info": info}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
