"""Functional-map algebra between truncated eigenbases.

A point-to-point map j(i) induces a K-by-K matrix between the spectral
coefficient spaces of two meshes: gather the target eigenfunctions
through j, then solve the least-squares system gathered @ C = source.
That matrix rectifies the target embedding (fixing sign flips and
eigenvalue switching mechanically), after which correspondence extraction
is nearest neighbors in embedding space. The orthogonality-projected ICP
refinement here is the classical linear baseline the non-linear stage is
measured against.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .distances import nearest_neighbors
from .errors import NumericalError

__all__ = [
    "FunctionalMap",
    "p2p_nearest",
    "fmap_from_p2p",
    "apply_fmap",
    "linear_icp_refine",
    "save_fmap",
    "load_fmap",
    "save_pointmap",
    "load_pointmap",
]

# gathered eigenfunction matrices this ill-conditioned usually mean the
# coarse fit collapsed many source vertices onto few target vertices
_COND_WARN = 1e8


@dataclass
class FunctionalMap:
    """K-by-K linear map between spectral coefficient spaces.

    ``residual`` is the Frobenius norm of the least-squares misfit of the
    inducing system (zero for maps constructed rather than estimated).
    """

    C: np.ndarray
    residual: float = 0.0

    @property
    def K(self):
        return self.C.shape[0]


def p2p_nearest(source_points, target_points):
    """Nearest target row for each source row; exact, lowest index on ties.

    Returns
    -------
    idx : ndarray
        (n,) target indices.
    dist : ndarray
        (n,) Euclidean distances to the matched rows.
    """
    return nearest_neighbors(source_points, target_points)


def fmap_from_p2p(basis_m, basis_n, p2p):
    """Functional map induced by a source-to-target point map.

    Builds the gathered matrix by reindexing the target eigenfunctions
    through the map, then solves gathered @ C = phi_m in the least-squares
    sense (QR with column pivoting).

    Parameters
    ----------
    basis_m, basis_n : SpectralBasis
        Bases with a shared K.
    p2p : ndarray
        (n_m,) indices into the target mesh vertices.

    Returns
    -------
    FunctionalMap

    Raises
    ------
    NumericalError
        Rank-deficient gathered matrix (fewer than K independent rows).
    """
    if basis_m.K != basis_n.K:
        raise ValueError(f"basis sizes differ: {basis_m.K} vs {basis_n.K}")
    p2p = np.asarray(p2p, dtype=np.int64)
    if p2p.shape != (basis_m.n_vertices,):
        raise ValueError("point map must cover every source vertex")
    gathered = basis_n.phi[p2p]

    cond = np.linalg.cond(gathered)
    if cond > _COND_WARN:
        warnings.warn(
            f"gathered eigenfunctions nearly rank-deficient (cond {cond:.2e})",
            RuntimeWarning,
        )
    C, _res, rank, _sv = scipy.linalg.lstsq(
        gathered, basis_m.phi, lapack_driver="gelsy"
    )
    if rank < basis_m.K:
        raise NumericalError(
            f"gathered matrix rank {rank} < K={basis_m.K}: "
            "too few distinct target rows to induce a functional map"
        )
    residual = float(np.linalg.norm(gathered @ C - basis_m.phi))
    return FunctionalMap(C=C, residual=residual)


def apply_fmap(embedding, fmap):
    """Right-multiply an (n, K) embedding by the map matrix.

    Works on both the raw and the 1/sqrt(eigenvalue)-scaled embeddings.
    """
    C = fmap.C if isinstance(fmap, FunctionalMap) else np.asarray(fmap)
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape[1] != C.shape[0]:
        raise ValueError(
            f"embedding width {embedding.shape[1]} does not match map size {C.shape[0]}"
        )
    return embedding @ C


def linear_icp_refine(emb_m, emb_n, rounds=10):
    """Classical linear refinement: alternate matching and Procrustes.

    Each round matches source rows to current target rows, then updates
    the map by the orthogonal matrix (SVD projection) that best aligns
    the matched pairs, accumulating it into C and into the moving target
    embedding. The mean squared alignment error is non-increasing.

    Parameters
    ----------
    emb_m : ndarray
        (n, K) fixed source embedding.
    emb_n : ndarray
        (m, K) target embedding, moved by the accumulated map.
    rounds : int
        Number of alternations (>= 1).

    Returns
    -------
    fmap : FunctionalMap
        Accumulated orthogonal map applied to the target embedding.
    p2p : ndarray
        (n,) final source-to-target match.
    errors : ndarray
        (rounds,) mean squared alignment error after each round.
    """
    emb_m = np.asarray(emb_m, dtype=np.float64)
    emb_n = np.asarray(emb_n, dtype=np.float64)
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    K = emb_m.shape[1]
    C = np.eye(K)
    current = emb_n
    errors = np.empty(rounds)
    idx = None
    for r in range(rounds):
        idx, _ = nearest_neighbors(emb_m, current)
        cross = current[idx].T @ emb_m
        try:
            U, _s, Vt = np.linalg.svd(cross)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed in ICP round {r}: {exc}") from exc
        Q = U @ Vt
        C = C @ Q
        current = current @ Q
        errors[r] = float(np.mean(np.sum((current[idx] - emb_m) ** 2, axis=1)))
    return FunctionalMap(C=C, residual=errors[-1]), idx, errors


# ------------------------------------------------------------ file I/O

def save_fmap(fmap, path):
    """Whitespace-delimited K-by-K text matrix."""
    np.savetxt(path, fmap.C, fmt="%.17g")


def load_fmap(path):
    C = np.loadtxt(path, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise NumericalError(f"{path}: expected a square matrix")
    return FunctionalMap(C=C)


def save_pointmap(p2p, path):
    """Two-column text: source index, matched target index."""
    n = len(p2p)
    np.savetxt(
        path,
        np.column_stack([np.arange(n), np.asarray(p2p, dtype=np.int64)]),
        fmt="%d",
    )


def load_pointmap(path):
    data = np.loadtxt(path, dtype=np.int64, ndmin=2)
    return data[:, 1].copy()
