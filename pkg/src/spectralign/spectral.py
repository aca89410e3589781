"""Cotangent Laplace-Beltrami discretization and its truncated eigenbasis.

The generalized problem W phi = lambda A phi (stiffness W from cotangent
weights, lumped mixed-Voronoi mass A) yields the intrinsic embedding used
everywhere downstream: each vertex maps to its row of the first K
non-constant eigenfunctions.
"""

import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import NumericalError

__all__ = [
    "SpectralBasis",
    "cotangent_matrix",
    "eigenbasis",
    "scale_basis",
    "save_basis",
    "load_basis",
    "cached_eigenbasis",
]

# |cot| cap: bounds stiffness entries on sliver triangles without touching
# well-shaped ones (cot of a 1-degree angle).
COT_CLAMP = 1.0 / np.tan(np.deg2rad(1.0))

# Meshes at or below this size use a dense symmetric eigensolve, which is
# exact, deterministic and fast enough; larger ones go through shift-invert
# Lanczos (ARPACK).
DENSE_CUTOFF = 3000


@dataclass
class SpectralBasis:
    """Truncated Laplace-Beltrami eigenbasis of one mesh.

    Attributes
    ----------
    eigenvalues : ndarray
        (K,) positive, ascending; the constant mode is excluded.
    phi : ndarray
        (n, K) eigenfunctions, A-orthonormal columns.
    phi_scaled : ndarray
        (n, K) with column j equal to phi[:, j] / sqrt(eigenvalues[j]).
        This damping of high-frequency columns is what makes nearest
        neighbors in embedding space meaningful.
    mass : ndarray
        (n,) lumped mass diagonal.
    stiffness : csr_matrix
        (n, n) cotangent stiffness matrix.
    """

    eigenvalues: np.ndarray
    phi: np.ndarray
    mass: np.ndarray
    stiffness: sparse.csr_matrix
    phi_scaled: np.ndarray = field(init=False)

    def __post_init__(self):
        self.phi_scaled = self.phi / np.sqrt(self.eigenvalues)

    @property
    def K(self):
        return self.phi.shape[1]

    @property
    def n_vertices(self):
        return self.phi.shape[0]


def cotangent_matrix(mesh):
    """Assemble cotangent stiffness and mixed-Voronoi lumped mass.

    Off-diagonal stiffness entries are -(cot a + cot b)/2 over the angles
    opposite each edge (one angle on boundary edges); diagonals make rows
    sum to zero. The mass entry of a vertex accumulates, per incident
    triangle, its Voronoi area when the triangle is non-obtuse, otherwise
    half the triangle area at the obtuse corner and a quarter elsewhere.

    Parameters
    ----------
    mesh : TriMesh

    Returns
    -------
    W : csr_matrix
        (n, n) symmetric positive semidefinite stiffness.
    mass : ndarray
        (n,) strictly positive lumped areas; sums to the surface area.
    n_clamped : int
        Number of corner cotangents clamped to the sliver cap. Nonzero
        counts also raise a RuntimeWarning.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices

    p = v[f]  # (m, 3, 3)
    # edge vector opposite corner k, and its squared length
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    l2 = np.einsum("mkd,mkd->mk", e, e)
    # cot at corner k from the two edges leaving it: cot = dot / (2 * area)
    dots = np.stack(
        [
            np.einsum("md,md->m", p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]),
            np.einsum("md,md->m", p[:, 2] - p[:, 1], p[:, 0] - p[:, 1]),
            np.einsum("md,md->m", p[:, 0] - p[:, 2], p[:, 1] - p[:, 2]),
        ],
        axis=1,
    )
    double_area = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    cots = dots / double_area[:, None]

    clamped = np.abs(cots) > COT_CLAMP
    n_clamped = int(clamped.sum())
    if n_clamped:
        warnings.warn(
            f"clamped {n_clamped} near-degenerate cotangents to +/-{COT_CLAMP:.2f}",
            RuntimeWarning,
            stacklevel=2,
        )
    w_cots = np.clip(cots, -COT_CLAMP, COT_CLAMP)

    # off-diagonal: edge opposite corner k connects the other two corners
    ii = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    jj = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    ww = -0.5 * w_cots.T.ravel()
    W = sparse.coo_matrix(
        (np.concatenate([ww, ww]), (np.concatenate([ii, jj]), np.concatenate([jj, ii]))),
        shape=(n, n),
    ).tocsr()
    W.setdiag(-np.asarray(W.sum(axis=1)).ravel())

    # mixed Voronoi mass (unclamped cotangents: the area formula is exact)
    area = 0.5 * double_area
    vor = np.empty_like(cots)
    for k in range(3):
        j1, j2 = (k + 1) % 3, (k + 2) % 3
        vor[:, k] = 0.125 * (l2[:, j1] * cots[:, j1] + l2[:, j2] * cots[:, j2])
    obtuse = cots < 0  # at most one corner per triangle
    any_obtuse = obtuse.any(axis=1)
    if any_obtuse.any():
        fallback = np.where(obtuse, 0.5, 0.25) * area[:, None]
        vor[any_obtuse] = fallback[any_obtuse]
    mass = np.zeros(n)
    for k in range(3):
        np.add.at(mass, f[:, k], vor[:, k])

    if (mass <= 0).any():
        raise NumericalError("non-positive lumped mass entry; mesh too degenerate")
    return W, mass, n_clamped


def eigenbasis(W, mass, K, zero_tol=None):
    """First K non-constant eigenpairs of W phi = lambda A phi.

    One near-zero eigenvalue per connected component (the constant modes)
    is computed and discarded; the next K pairs are returned in ascending
    order with a deterministic sign convention: each eigenvector is
    flipped so its entry of largest magnitude (lowest index on ties) is
    positive.

    Parameters
    ----------
    W : sparse matrix
        (n, n) symmetric PSD stiffness.
    mass : ndarray
        (n,) strictly positive lumped mass.
    K : int
        Basis size; must satisfy K + #components <= n - 1.
    zero_tol : float, optional
        Absolute threshold separating null modes. Default: 1e-6 times the
        largest computed eigenvalue, with a 1e-8 absolute floor.

    Returns
    -------
    SpectralBasis

    Raises
    ------
    NumericalError
        Eigensolver non-convergence (reported with attained residuals) or
        a null-space dimension that does not match the component count.
    """
    W = W.tocsr()
    n = W.shape[0]
    mass = np.asarray(mass, dtype=np.float64)
    n_comp = connected_components(W, directed=False)[0]
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if K + n_comp > n - 1:
        raise ValueError(
            f"K={K} too large for a mesh with {n} vertices and {n_comp} component(s)"
        )

    kreq = K + n_comp
    for _attempt in range(3):
        lam, vec = _solve_smallest(W, mass, kreq)
        if zero_tol is None:
            tol = max(1e-6 * float(lam[-1]), 1e-8)
        else:
            tol = zero_tol
        n_null = int(np.sum(lam < tol))
        if n_null == n_comp and kreq - n_null >= K:
            break
        kreq = K + max(n_null, n_comp)
        if kreq > n - 1:
            raise NumericalError(
                f"null space ({n_null}) plus K={K} exceeds mesh size {n}"
            )
    else:
        raise NumericalError(
            f"null-space dimension {n_null} never matched component count {n_comp}"
        )

    lam = lam[n_null:n_null + K].copy()
    vec = vec[:, n_null:n_null + K].copy()

    # deterministic sign: largest-magnitude entry positive, first on ties
    flip = vec[np.argmax(np.abs(vec), axis=0), np.arange(K)] < 0
    vec[:, flip] *= -1.0

    _check_residuals(W, mass, lam, vec)
    return SpectralBasis(eigenvalues=lam, phi=vec, mass=mass, stiffness=W)


def _solve_smallest(W, mass, kreq):
    n = W.shape[0]
    if n <= DENSE_CUTOFF:
        # symmetrize with the diagonal mass: B = A^-1/2 W A^-1/2
        d = 1.0 / np.sqrt(mass)
        B = (W.multiply(d[:, None]).multiply(d[None, :])).toarray()
        B = 0.5 * (B + B.T)
        lam, psi = eigh(B, subset_by_index=[0, kreq - 1])
        return lam, psi * d[:, None]
    shift = 1e-8 * float(mass.sum())
    v0 = np.random.default_rng(12345).standard_normal(n)
    M = sparse.diags(mass).tocsc()
    try:
        lam, vec = eigsh(
            W.tocsc(), k=kreq, M=M, sigma=-shift, which="LM", v0=v0, maxiter=50 * n
        )
    except ArpackNoConvergence as exc:
        got = len(exc.eigenvalues)
        raise NumericalError(
            f"eigensolver converged only {got}/{kreq} pairs "
            f"(attained eigenvalues: {np.array2string(exc.eigenvalues, precision=3)})"
        ) from exc
    order = np.argsort(lam)
    return lam[order], vec[:, order]


def _check_residuals(W, mass, lam, vec):
    r = W @ vec - mass[:, None] * vec * lam[None, :]
    denom = lam * np.linalg.norm(mass[:, None] * vec, axis=0)
    rel = np.linalg.norm(r, axis=0) / np.maximum(denom, 1e-300)
    if (rel > 1e-5).any():
        raise NumericalError(
            f"eigenpair residuals too large: max {rel.max():.2e} "
            f"(per-column: {np.array2string(rel, precision=2)})"
        )


def scale_basis(basis):
    """Eigenfunctions damped by 1/sqrt(eigenvalue), column by column.

    Already stored on the basis as ``phi_scaled``; exposed separately for
    callers holding raw (phi, eigenvalues) pairs.
    """
    return basis.phi / np.sqrt(basis.eigenvalues)


# ------------------------------------------------------------- sidecar

_MAGIC = b"SBAS"


def save_basis(basis, path):
    """Serialize eigenvalues and eigenfunctions to a binary sidecar.

    Layout: magic, int64 n, int64 K, K float64 eigenvalues, then phi in
    row-major float64. Mass and stiffness are cheap to reassemble from
    the mesh and are not stored.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qq", basis.n_vertices, basis.K))
        fh.write(basis.eigenvalues.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.phi, dtype="<f8").tobytes())


def load_basis(path, mass, stiffness):
    """Load a sidecar written by :func:`save_basis`.

    The caller supplies mass and stiffness recomputed from the mesh; the
    file only stores the expensive eigensolve output.
    """
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise NumericalError(f"{path}: not a spectral-basis sidecar")
        n, K = struct.unpack("<qq", fh.read(16))
        lam = np.frombuffer(fh.read(8 * K), dtype="<f8").copy()
        phi = np.frombuffer(fh.read(8 * n * K), dtype="<f8").reshape(n, K).copy()
    return SpectralBasis(eigenvalues=lam, phi=phi, mass=mass, stiffness=stiffness)


def cached_eigenbasis(mesh, K, cache_dir=None):
    """Eigenbasis of a mesh, cached on disk keyed by content hash and K.

    With no cache directory this is just ``eigenbasis`` on the assembled
    operators.
    """
    W, mass, _ = cotangent_matrix(mesh)
    if cache_dir is None:
        return eigenbasis(W, mass, K)
    os.makedirs(cache_dir, exist_ok=True)
    key = os.path.join(cache_dir, f"{mesh.content_hash()}_K{K}.sbas")
    if os.path.exists(key):
        return load_basis(key, mass, W.tocsr())
    basis = eigenbasis(W, mass, K)
    save_basis(basis, key)
    return basis
