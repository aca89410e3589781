"""Generic linear blend skinning and smooth-template extraction.

A rig is a joint tree with global rest transforms and fixed per-vertex
skinning weights (supplied as input; this package does not solve for
weight fields). Posing and template fitting never assume a particular
body model: any skeleton of any joint count works, and every operation
has an un-rigged identity mode for data without pose estimates.
"""

import json
from dataclasses import dataclass

import numpy as np

from .bench import rotation_matrix
from .errors import InputError, NumericalError
from .nn import AdamState, adam_step

__all__ = [
    "Rig",
    "Pose",
    "lbs",
    "smooth_template",
    "load_rig",
    "load_pose",
    "save_rig",
    "save_pose",
]


@dataclass
class Rig:
    """Joint tree plus skinning weights bound to one mesh topology.

    parents : (J,) int, -1 exactly once (the root); parents precede
        children (parents[j] < j).
    rest : (J, 4, 4) global rest-pose transforms.
    weights : (n, J) non-negative rows summing to 1.
    names : optional joint names.
    """

    parents: np.ndarray
    rest: np.ndarray
    weights: np.ndarray
    names: list = None

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.rest = np.asarray(self.rest, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        J = len(self.parents)
        if self.rest.shape != (J, 4, 4):
            raise InputError(f"rest transforms must be ({J}, 4, 4)")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise InputError(f"rig must have exactly one root, found {len(roots)}")
        if (self.parents >= np.arange(J)).any():
            bad = np.flatnonzero(self.parents >= np.arange(J))[0]
            raise InputError(f"joint {bad} precedes its parent; sort joints topologically")
        if self.weights.ndim != 2 or self.weights.shape[1] != J:
            raise InputError(f"weights must be (n, {J})")
        if (self.weights < -1e-12).any():
            raise InputError("skinning weights must be non-negative")
        sums = self.weights.sum(axis=1)
        if (np.abs(sums - 1.0) > 1e-6).any():
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise InputError(
                f"weight row {bad} sums to {sums[bad]:.8f}, expected 1 within 1e-6"
            )

    @property
    def n_joints(self):
        return len(self.parents)


@dataclass
class Pose:
    """Per-joint axis-angle rotations plus a root translation."""

    rotations: np.ndarray
    root_translation: np.ndarray = None

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.rotations).all():
            raise InputError("pose rotations must be finite")
        if self.root_translation is None:
            self.root_translation = np.zeros(3)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)

    @classmethod
    def identity(cls, n_joints):
        return cls(rotations=np.zeros((n_joints, 3)))

    @property
    def n_joints(self):
        return len(self.rotations)


def _is_identity_pose(pose):
    return not pose.rotations.any() and not pose.root_translation.any()


def _skin_matrices(rig, pose):
    """Per-joint 4x4 transforms mapping rest-pose points to posed points."""
    J = rig.n_joints
    if pose.n_joints != J:
        raise InputError(f"pose has {pose.n_joints} joints, rig has {J}")
    posed = np.empty((J, 4, 4))
    for j in range(J):
        rot = np.eye(4)
        rot[:3, :3] = rotation_matrix(pose.rotations[j])
        p = rig.parents[j]
        if p < 0:
            posed[j] = rig.rest[j] @ rot
            posed[j][:3, 3] += pose.root_translation
        else:
            local = np.linalg.solve(rig.rest[p], rig.rest[j])
            posed[j] = posed[p] @ local @ rot
    skin = np.empty((J, 4, 4))
    for j in range(J):
        skin[j] = posed[j] @ np.linalg.inv(rig.rest[j])
    return skin


def lbs(vertices, rig, pose):
    """Pose rest-space points by blended forward-kinematics transforms.

    The identity pose is the identity map. Blending is linear in the
    weights: a vertex weighted across joints moves to the weighted
    average of its single-joint images.

    Returns
    -------
    ndarray
        (n, 3) posed points.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if rig.weights.shape[0] != len(v):
        raise InputError(
            f"rig weights cover {rig.weights.shape[0]} vertices, mesh has {len(v)}"
        )
    if _is_identity_pose(pose):
        # contractually exact, not merely up to kinematic round-off
        return v.copy()
    skin = _skin_matrices(rig, pose)
    # per-vertex blended affine: (n, 3, 4)
    blended = np.einsum("nj,jab->nab", rig.weights, skin[:, :3, :])
    return np.einsum("nab,nb->na", blended[:, :, :3], v) + blended[:, :, 3]


def blended_affine(rig, pose, n_vertices):
    """Per-vertex (3, 4) blended skinning transforms; identity when rig is None."""
    if rig is None or pose is None or _is_identity_pose(pose):
        out = np.zeros((n_vertices, 3, 4))
        out[:, :, :3] = np.eye(3)
        return out
    skin = _skin_matrices(rig, pose)
    return np.einsum("nj,jab->nab", rig.weights, skin[:, :3, :])


def smooth_template(mesh, rig=None, pose=None, w1=1e4, w2=1e3, w3=1.0,
                    iterations=1500, lr=None, initial_vertices=None,
                    history_out=None):
    """Fit a smooth rest-space template whose posed shape matches the mesh.

    Minimizes, over free vertex positions V:

        w1 * |pose(V) - V_mesh|^2  (posed data fit)
      + w2 * |E(V) - E_mesh|^2     (edge-length preservation)
      + w3 * |L_mesh V|^2          (uniform-Laplacian smoothness)

    with a first-order optimizer (vertices as free variables). With no
    rig, posing is the identity, which supports targets without pose
    estimates. Returns the best-energy iterate.

    Parameters
    ----------
    mesh : TriMesh
    rig : Rig, optional
    pose : Pose, optional
        Pose the mesh was captured in; identity when omitted.
    w1, w2, w3 : float
        Term weights (the defaults assume roughly unit-scale meshes).
    iterations : int
    lr : float, optional
        Adam step size; default 1e-3 times the bbox diagonal.
    initial_vertices : ndarray, optional
        Starting point of the free variables; defaults to the mesh's own
        vertices. Rest edge lengths and the Laplacian always come from
        the mesh regardless of the start.
    history_out : list, optional
        Appended with (total, data, edge, smooth) per iteration.

    Returns
    -------
    template : TriMesh
        Same faces as the input.
    energies : dict
        Final per-term energies at the returned iterate.

    Raises
    ------
    NumericalError
        If the energy keeps increasing for 50 consecutive steps.
    """
    V0 = mesh.vertices
    n = mesh.n_vertices
    target = V0
    B = blended_affine(rig, pose, n)
    Blin = B[:, :, :3]
    Boff = B[:, :, 3]
    L = mesh.uniform_laplacian()
    rest_len = mesh.edge_lengths()
    ei, ej = mesh.edges[:, 0], mesh.edges[:, 1]
    if lr is None:
        lr = 1e-3 * mesh.bbox_diagonal()

    def energy_grad(V):
        posed = np.einsum("nab,nb->na", Blin, V) + Boff
        r_data = posed - target
        e_data = w1 * float(np.sum(r_data * r_data))
        g = 2.0 * w1 * np.einsum("nba,nb->na", Blin, r_data)

        d = V[ei] - V[ej]
        lens = np.linalg.norm(d, axis=1)
        excess = lens - rest_len
        e_edge = w2 * float(np.sum(excess * excess))
        coef = 2.0 * w2 * excess / np.maximum(lens, 1e-300)
        ge = coef[:, None] * d
        np.add.at(g, ei, ge)
        np.add.at(g, ej, -ge)

        lv = L @ V
        e_smooth = w3 * float(np.sum(lv * lv))
        g += 2.0 * w3 * (L.T @ lv)
        return e_data + e_edge + e_smooth, (e_data, e_edge, e_smooth), g

    V = (V0 if initial_vertices is None else np.asarray(initial_vertices, dtype=np.float64)).copy()
    state = AdamState.for_params([V], lr=lr)
    best = np.inf
    best_V = V.copy()
    previous = np.inf
    rising = 0
    for it in range(iterations):
        total, terms, grad = energy_grad(V)
        if history_out is not None:
            history_out.append((total, *terms))
        if total < best:
            best = total
            best_V = V.copy()
        # divergence = a sustained monotone climb, not oscillation near
        # a converged floor
        if total > previous * (1.0 + 1e-12):
            rising += 1
            if rising >= 50:
                raise NumericalError(
                    f"template fit diverging: energy rose for {rising} consecutive "
                    f"steps (iteration {it}, energy {total:.6e}, best {best:.6e})"
                )
        else:
            rising = 0
        previous = total
        (V,) = adam_step(state, [V], [grad])

    total, terms, _ = energy_grad(best_V)
    energies = {
        "total": total,
        "data": terms[0],
        "edge": terms[1],
        "smooth": terms[2],
    }
    return mesh.with_vertices(best_V), energies


# ------------------------------------------------------------ file I/O

def load_rig(json_path, weights_path):
    """Rig from a joints JSON plus a binary (n, J) weights sidecar (.npy)."""
    try:
        with open(json_path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read rig {json_path}: {exc}") from exc
    joints = doc.get("joints")
    if not joints:
        raise InputError(f"{json_path}: no joints array")
    parents, rest, names = [], [], []
    for j, joint in enumerate(joints):
        p = joint.get("parent", -1)
        parents.append(-1 if p is None else int(p))
        t = np.asarray(joint["rest_transform"], dtype=np.float64)
        if t.size != 16:
            raise InputError(f"{json_path}: joint {j} rest_transform needs 16 floats")
        rest.append(t.reshape(4, 4))
        names.append(joint.get("name", f"joint{j}"))
    try:
        weights = np.load(weights_path)
    except OSError as exc:
        raise InputError(f"cannot read weights {weights_path}: {exc}") from exc
    return Rig(parents=np.array(parents), rest=np.array(rest), weights=weights, names=names)


def save_rig(rig, json_path, weights_path):
    doc = {
        "joints": [
            {
                "name": rig.names[j] if rig.names else f"joint{j}",
                "parent": int(rig.parents[j]),
                "rest_transform": [float(x) for x in rig.rest[j].ravel()],
            }
            for j in range(rig.n_joints)
        ]
    }
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2)
    np.save(weights_path, rig.weights)


def load_pose(path):
    """Pose from JSON: per-joint axis-angle triples plus root translation."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read pose {path}: {exc}") from exc
    if "rotations" not in doc:
        raise InputError(f"{path}: pose needs a rotations array")
    return Pose(
        rotations=np.asarray(doc["rotations"], dtype=np.float64),
        root_translation=np.asarray(doc.get("root_translation", [0, 0, 0]), dtype=np.float64),
    )


def save_pose(pose, path):
    doc = {
        "rotations": [[float(x) for x in r] for r in pose.rotations],
        "root_translation": [float(x) for x in pose.root_translation],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
