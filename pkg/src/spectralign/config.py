"""Pipeline configuration: every knob in one validated dataclass.

An empty JSON file is a valid configuration (all fields have defaults);
unknown keys are rejected rather than ignored, because nine energy-weight
names are easy to misspell silently.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["PipelineConfig", "load_config"]


@dataclass
class PipelineConfig:
    """Weights, balances, and optimizer settings for a full run.

    w1..w3 weight the template-smoothing energy (posed data fit, edge
    preservation, Laplacian smoothness); w4..w6 the coarse extrinsic fit
    (full Chamfer, boundary Chamfer, clipped edge stretch); w7..w9 the
    intrinsic refinement (full Chamfer, boundary Chamfer, deformation
    magnitude). beta1/beta2 balance geometry against color inside the
    color-augmented data terms.
    """

    K: int = 60
    # template smoothing
    w1: float = 1e4
    w2: float = 1e3
    w3: float = 1.0
    # coarse extrinsic fit; w6 brakes stretching only, keep it mild so
    # non-isometric targets can still be covered (raise for occluded
    # captures)
    w4: float = 1.0
    w5: float = 1.0
    w6: float = 0.05
    # intrinsic refinement
    w7: float = 1.0
    w8: float = 1.0
    w9: float = 0.1
    # color augmentation (use_colors=False is the no-texture ablation)
    beta1: float = 1.0
    beta2: float = 0.3
    use_colors: bool = True
    # transfer weighting
    knn_k: int = 6
    c_boost: float = 10.0
    knn_eps: float = 1e-9
    # optimizers (full-batch Adam throughout)
    template_iterations: int = 1500
    template_lr: float = 0.0  # 0 means 1e-3 * bbox diagonal
    stage1_iterations: int = 2000
    stage1_lr: float = 3e-4
    stage2_iterations: int = 2000
    stage2_lr: float = 1e-3
    hidden_width: int = 256
    hidden_layers: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # refinement strategy: neural | linear | none
    refine: str = "neural"
    icp_rounds: int = 10
    # misc
    seed: int = 0
    normalize: bool = True
    eval_samples: int = 100_000

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9",
                     "beta1", "beta2", "c_boost", "knn_eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.K < 2:
            raise ConfigError(f"K must be >= 2, got {self.K}")
        if self.knn_k < 1:
            raise ConfigError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.refine not in ("neural", "linear", "none"):
            raise ConfigError(f"refine must be neural|linear|none, got {self.refine!r}")
        for name in ("template_iterations", "stage1_iterations", "stage2_iterations",
                     "icp_rounds", "hidden_width", "hidden_layers", "eval_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(
                f"unknown config key(s): {sorted(unknown)}; known keys: {sorted(known)}"
            )
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def content_hash(self):
        """Stable hash of the full configuration, used in run manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def mlp_widths(self, d_in, d_out):
        return [d_in] + [self.hidden_width] * self.hidden_layers + [d_out]


def load_config(path):
    """Read a JSON config; an empty object {} yields all defaults."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return PipelineConfig.from_dict(doc)
