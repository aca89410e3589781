"""Intrinsic refinement: rectify the target embedding, then bend the
source embedding onto it with a second network.

The functional map from the coarse fit removes sign flips and eigenvalue
switching, but being linear it cannot absorb what a stretching, shearing
deformation does to the eigenfunctions. The refinement network is the
non-linear correction: it deforms only the source embedding (the target
stays fixed) and is kept small by an explicit magnitude regularizer.
"""

from dataclasses import dataclass

import numpy as np

from .distances import chamfer
from .errors import NumericalError
from .fmap import apply_fmap, p2p_nearest
from .nn import AdamState, MlpField, adam_step, backward_from_cache, cosine_lr, mlp_forward

__all__ = ["RefineResult", "rectify_target", "augment_embedding", "refine_embeddings"]


@dataclass
class RefineResult:
    """Outcome of the intrinsic refinement.

    emb_source : (n, K) refined source embedding (scaled basis + field).
    emb_target : (m, K) rectified target embedding the source was fit to.
    field : trained refinement MLP.
    history : (iters, 4) columns total, data, boundary, regularizer.
    point_map : (n,) final intrinsic correspondence.
    """

    emb_source: np.ndarray
    emb_target: np.ndarray
    field: MlpField
    history: np.ndarray
    point_map: np.ndarray


def rectify_target(basis_n, fmap, eigenvalues_m=None):
    """Rectified, scaled target embedding.

    The map is applied to the raw eigenfunctions (the space it was
    estimated in) and the result is scaled by the source-side
    eigenvalues: column k of the rectified embedding plays the role of
    the source's k-th eigenfunction transported onto the target, so it
    must be damped by the same factor as the source column it is
    compared against. Scaling before the map is only equivalent for
    pure sign/permutation maps; under eigenvalue mixing it misaligns
    the embeddings.

    Parameters
    ----------
    basis_n : SpectralBasis
        Target basis.
    fmap : FunctionalMap
        Induced map from the coarse correspondences.
    eigenvalues_m : ndarray, optional
        Source eigenvalues for the post-map scaling; the target's own
        spectrum is used when omitted (adequate for near-isometric
        pairs, exact for permutation maps).
    """
    lam = basis_n.eigenvalues if eigenvalues_m is None else np.asarray(eigenvalues_m)
    return apply_fmap(basis_n.phi, fmap) / np.sqrt(lam)


def augment_embedding(emb, colors, beta1, beta2):
    """Column-concatenate balanced colors onto an embedding.

    Used only inside Chamfer data terms: boundary terms, regularizers and
    network inputs stay purely geometric. Without colors this is just the
    beta1-scaled embedding, so distance structure is unchanged.
    """
    emb = np.asarray(emb, dtype=np.float64)
    if colors is None:
        return beta1 * emb
    colors = np.asarray(colors, dtype=np.float64)
    if len(colors) != len(emb):
        raise ValueError(
            f"colors rows ({len(colors)}) must match embedding rows ({len(emb)})"
        )
    return np.hstack([beta1 * emb, beta2 * colors])


def refine_embeddings(phi_m_scaled, phi_n_hat_scaled, boundary_m, boundary_n,
                      cfg, colors_m=None, colors_n=None):
    """Train the refinement field on the rectified embeddings.

    Minimizes  w7 * CD(emb_src, emb_tgt) + w8 * CD(emb_src_bnd, emb_tgt_bnd)
             + w9 * |D(phi_m_scaled)|^2
    with emb_src = phi_m_scaled + D(phi_m_scaled). Colors, when given for
    both sides, augment only the first Chamfer term; the final point map
    is extracted in the same (augmented) space the data term optimized.

    Parameters
    ----------
    phi_m_scaled : ndarray
        (n, K) scaled source embedding.
    phi_n_hat_scaled : ndarray
        (m, K) rectified scaled target embedding.
    boundary_m, boundary_n : ndarray
        Boolean boundary-vertex flags of the two meshes.
    cfg : PipelineConfig
    colors_m, colors_n : ndarray, optional
        (n, 3) / (m, 3) per-vertex colors.

    Returns
    -------
    RefineResult
    """
    src = np.asarray(phi_m_scaled, dtype=np.float64)
    tgt = np.asarray(phi_n_hat_scaled, dtype=np.float64)
    if src.shape[1] != tgt.shape[1]:
        raise ValueError(f"embedding widths differ: {src.shape[1]} vs {tgt.shape[1]}")
    K = src.shape[1]
    bm = np.asarray(boundary_m, dtype=bool)
    bn = np.asarray(boundary_n, dtype=bool)
    use_boundary = bool(bm.any() and bn.any())
    use_colors = colors_m is not None and colors_n is not None

    tgt_data = (
        augment_embedding(tgt, colors_n, cfg.beta1, cfg.beta2) if use_colors else tgt
    )

    net = MlpField.create(cfg.mlp_widths(K, K), np.random.default_rng([cfg.seed, 2]))
    state = AdamState.for_params(
        net.parameters(), lr=cfg.stage2_lr, beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2, eps=cfg.adam_eps,
    )

    history = np.empty((cfg.stage2_iterations, 4))
    for it in range(cfg.stage2_iterations):
        state.lr = cosine_lr(cfg.stage2_lr, it, cfg.stage2_iterations)
        cache = []
        delta = mlp_forward(net, src, cache=cache)
        emb = src + delta

        if use_colors:
            src_data = augment_embedding(emb, colors_m, cfg.beta1, cfg.beta2)
        else:
            src_data = emb
        cd, d_src, _ = chamfer(src_data, tgt_data)
        e_data = cfg.w7 * cd
        g = cfg.w7 * (cfg.beta1 * d_src[:, :K] if use_colors else d_src)

        e_bnd = 0.0
        if use_boundary:
            cdb, db, _ = chamfer(emb[bm], tgt[bn])
            e_bnd = cfg.w8 * cdb
            g[bm] += cfg.w8 * db

        # per-row mean, so w9 balances the (mean-form) Chamfer terms at
        # any vertex count
        e_reg = cfg.w9 * float(np.sum(delta * delta)) / len(src)
        g += (2.0 * cfg.w9 / len(src)) * delta

        total = e_data + e_bnd + e_reg
        if not np.isfinite(total):
            raise NumericalError(f"non-finite refinement loss at iteration {it}")
        history[it] = (total, e_data, e_bnd, e_reg)
        if total < 1e-20:
            # numerically exact already; stop before optimizer noise
            # disturbs the solution
            history = history[: it + 1]
            break

        grads, _ = backward_from_cache(net, cache, g)
        net.set_parameters(adam_step(state, net.parameters(), grads))

    emb = src + mlp_forward(net, src)
    if use_colors:
        pmap, _ = p2p_nearest(
            augment_embedding(emb, colors_m, cfg.beta1, cfg.beta2),
            augment_embedding(tgt, colors_n, cfg.beta1, cfg.beta2),
        )
    else:
        pmap, _ = p2p_nearest(emb, tgt)
    return RefineResult(
        emb_source=emb, emb_target=tgt, field=net, history=history, point_map=pmap
    )
