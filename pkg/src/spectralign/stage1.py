"""Coarse extrinsic fit: pose the template, then train the 3D field.

The deformation network consumes only the source mesh's intrinsic
embedding (eigenfunction rows), never 3D coordinates. Two surface points
that nearly coincide in space but are geodesically far apart therefore
present distinct inputs and can be pulled apart -- the property that
makes the fit robust to self-contact of the posed template.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .distances import chamfer
from .errors import NumericalError
from .fmap import p2p_nearest
from .nn import AdamState, MlpField, adam_step, backward_from_cache, cosine_lr, mlp_forward
from .rig import lbs
from .stage2 import augment_embedding

__all__ = ["CoarseFitResult", "pose_template", "coarse_fit"]


@dataclass
class CoarseFitResult:
    """Outcome of the extrinsic fit.

    vertices : (n, 3) deformed template in world units.
    field : trained deformation MLP (acts in normalized units).
    history : (iters, 4) columns total, data, boundary, edge.
    point_map : (n,) nearest target vertex per deformed source vertex,
        the input that induces the functional map.
    """

    vertices: np.ndarray
    field: MlpField
    history: np.ndarray
    point_map: np.ndarray


def pose_template(template, rig=None, pose=None):
    """Skin template vertices into the target's pose; identity without a rig."""
    v = template.vertices if hasattr(template, "vertices") else np.asarray(template)
    if rig is None:
        return v.copy()
    if pose is None:
        raise ValueError("rig given but no pose; pass pose or drop the rig")
    return lbs(v, rig, pose)


def coarse_fit(v_posed, phi_m, mesh_m, mesh_n, cfg, history_out=None):
    """Train the intrinsic field so the posed template covers the target.

    Minimizes  w4 * CD(V'', V_N) + w5 * CD(V''_bnd, V_N_bnd)
             + w6 * |max(E(V'') - E_rest, 0)|^2
    over the parameters of a network D with V'' = V' + D(phi_m). The edge
    term only penalizes stretching (squeezing is free: occluded regions
    of a capture may be smaller than the template). When both meshes
    carry colors and the config enables them, the first Chamfer term runs
    on color-augmented points; the boundary term and the network input
    never see colors.

    Parameters
    ----------
    v_posed : ndarray
        (n, 3) posed template vertices V'.
    phi_m : ndarray
        (n, K) source eigenfunctions, unscaled; rows align with v_posed.
    mesh_m : TriMesh
        Supplies rest edge lengths, boundary flags, and colors.
    mesh_n : TriMesh
        Target; supplies vertices, boundary flags, and colors.
    cfg : PipelineConfig

    Returns
    -------
    CoarseFitResult
    """
    v_posed = np.asarray(v_posed, dtype=np.float64)
    phi_m = np.asarray(phi_m, dtype=np.float64)
    if len(v_posed) != len(phi_m):
        raise ValueError("phi_m rows must align with posed vertices")

    v_n = mesh_n.vertices
    if cfg.normalize:
        center = 0.5 * (v_n.max(axis=0) + v_n.min(axis=0))
        scale = 1.0 / max(np.linalg.norm(v_n.max(axis=0) - v_n.min(axis=0)), 1e-300)
    else:
        center, scale = np.zeros(3), 1.0
    vp = (v_posed - center) * scale
    vn = (v_n - center) * scale
    rest = mesh_m.edge_lengths() * scale
    ei, ej = mesh_m.edges[:, 0], mesh_m.edges[:, 1]

    bm, bn = mesh_m.boundary_vertex, mesh_n.boundary_vertex
    use_boundary = bool(bm.any() and bn.any())
    if bm.any() != bn.any():
        warnings.warn(
            "boundary Chamfer skipped: only one mesh has boundary vertices",
            RuntimeWarning,
        )

    use_colors = bool(
        cfg.use_colors and mesh_m.colors is not None and mesh_n.colors is not None
    )
    target_data = (
        augment_embedding(vn, mesh_n.colors, cfg.beta1, cfg.beta2) if use_colors else vn
    )

    net = MlpField.create(
        cfg.mlp_widths(phi_m.shape[1], 3), np.random.default_rng([cfg.seed, 1])
    )
    state = AdamState.for_params(
        net.parameters(), lr=cfg.stage1_lr, beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2, eps=cfg.adam_eps,
    )

    history = np.empty((cfg.stage1_iterations, 4))
    for it in range(cfg.stage1_iterations):
        # cosine decay lets the fit settle well below the Adam bounce
        # radius of a constant step size
        state.lr = cosine_lr(cfg.stage1_lr, it, cfg.stage1_iterations)
        cache = []
        delta = mlp_forward(net, phi_m, cache=cache)
        v2 = vp + delta

        if use_colors:
            source_data = augment_embedding(v2, mesh_m.colors, cfg.beta1, cfg.beta2)
        else:
            source_data = v2
        cd, d_src, _ = chamfer(source_data, target_data)
        e_data = cfg.w4 * cd
        g = cfg.w4 * (cfg.beta1 * d_src[:, :3] if use_colors else d_src)

        e_bnd = 0.0
        if use_boundary:
            cdb, db, _ = chamfer(v2[bm], vn[bn])
            e_bnd = cfg.w5 * cdb
            g[bm] += cfg.w5 * db

        d = v2[ei] - v2[ej]
        lens = np.linalg.norm(d, axis=1)
        excess = np.maximum(lens - rest, 0.0)
        e_edge = cfg.w6 * float(excess @ excess)
        coef = 2.0 * cfg.w6 * excess / np.maximum(lens, 1e-300)
        ge = coef[:, None] * d
        np.add.at(g, ei, ge)
        np.add.at(g, ej, -ge)

        total = e_data + e_bnd + e_edge
        if not np.isfinite(total):
            raise NumericalError(f"non-finite coarse-fit loss at iteration {it}")
        history[it] = (total, e_data, e_bnd, e_edge)
        if total < 1e-20:
            # numerically exact already; further steps only let the
            # scale-invariant optimizer wander off the solution
            history = history[: it + 1]
            break

        grads, _ = backward_from_cache(net, cache, g)
        net.set_parameters(adam_step(state, net.parameters(), grads))

    delta = mlp_forward(net, phi_m)
    # denormalize additively so a zero field reproduces V' bit for bit
    v2_world = v_posed + delta / scale
    pmap, _ = p2p_nearest(vp + delta, vn)
    if history_out is not None:
        history_out.append(history)
    return CoarseFitResult(
        vertices=v2_world, field=net, history=history, point_map=pmap
    )
