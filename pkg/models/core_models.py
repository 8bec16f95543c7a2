# Path-dependent McKean-Vlasov sampler
# File: models/core_models.py

import hashlib
import json
import math
from typing import List, Optional, Dict, Any, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator
from enum import Enum


class PotentialKind(str, Enum):
    """Analytic benchmark landscapes"""
    MUELLER_BROWN = "mueller_brown"
    DOUBLE_WELL_1D = "double_well_1d"
    MULTI_WELL_2D = "multi_well_2d"
    PERIODIC_CHAIN = "periodic_chain"


class CvKind(str, Enum):
    """Collective-variable map families"""
    IDENTITY = "identity"
    COORDINATE_SUBSET = "coordinate_subset"
    CHAIN_ANGLES = "chain_angles"


class WeightSchemeKind(str, Enum):
    """History weighting q"""
    UNIFORM = "uniform"
    EXP_RECENCY = "exp_recency"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Configuration Models
class PotentialSpec(_Strict):
    """Energy landscape U with its kind-specific parameters"""
    kind: PotentialKind
    dim: int = Field(gt=0)
    params: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_dim(self):
        expected = {
            PotentialKind.MUELLER_BROWN: 2,
            PotentialKind.DOUBLE_WELL_1D: 1,
            PotentialKind.MULTI_WELL_2D: 2,
        }.get(self.kind)
        if self.kind == PotentialKind.PERIODIC_CHAIN:
            expected = 2 * int(self.params.get("n_beads", 4))
        if self.dim != expected:
            raise ValueError(f"{self.kind.value} requires dim={expected}, got {self.dim}")
        return self

    @classmethod
    def mueller_brown(cls) -> "PotentialSpec":
        return cls(kind=PotentialKind.MUELLER_BROWN, dim=2)

    @classmethod
    def double_well(cls, height: float = 1.0) -> "PotentialSpec":
        return cls(kind=PotentialKind.DOUBLE_WELL_1D, dim=1, params={"height": height})

    @classmethod
    def multi_well(cls, centers: List[List[float]], height: float = 1.0,
                   width: float = 1.0) -> "PotentialSpec":
        return cls(kind=PotentialKind.MULTI_WELL_2D, dim=2,
                   params={"centers": centers, "height": height, "width": width})

    @classmethod
    def periodic_chain(cls, n_beads: int = 4, **params) -> "PotentialSpec":
        return cls(kind=PotentialKind.PERIODIC_CHAIN, dim=2 * n_beads,
                   params={"n_beads": n_beads, **params})


class CvMapSpec(_Strict):
    """Collective-variable map xi: R^d -> R^m"""
    kind: CvKind = CvKind.IDENTITY
    dim: int = Field(gt=0)
    indices: Optional[List[int]] = None
    n_beads: Optional[int] = None
    periodic: Optional[List[bool]] = None

    @model_validator(mode="after")
    def _check_layout(self):
        if self.kind == CvKind.COORDINATE_SUBSET:
            if not self.indices:
                raise ValueError("coordinate_subset needs a non-empty 'indices' list")
            if any(i < 0 or i >= self.dim for i in self.indices):
                raise ValueError(f"indices {self.indices} out of range for dim={self.dim}")
        if self.kind == CvKind.CHAIN_ANGLES:
            if self.n_beads is None or self.n_beads < 3:
                raise ValueError("chain_angles needs n_beads >= 3")
            if self.dim != 2 * self.n_beads:
                raise ValueError(f"chain_angles with {self.n_beads} beads needs dim={2 * self.n_beads}")
        if self.periodic is not None and len(self.periodic) != self.m:
            raise ValueError(f"periodic mask has {len(self.periodic)} entries, expected {self.m}")
        return self

    @property
    def m(self) -> int:
        if self.kind == CvKind.IDENTITY:
            return self.dim
        if self.kind == CvKind.COORDINATE_SUBSET:
            return len(self.indices)
        return self.n_beads - 2

    @property
    def periodic_mask(self) -> List[bool]:
        if self.kind == CvKind.CHAIN_ANGLES:
            return [True] * self.m
        return list(self.periodic) if self.periodic is not None else [False] * self.m


class DynParams(_Strict):
    """Overdamped Langevin integration parameters"""
    dt: float = Field(gt=0)
    gamma: float = Field(gt=0)
    beta: float = Field(gt=0)
    zero_temperature: bool = False
    # caps |dt/gamma * F| per walker; None is plain Euler-Maruyama
    max_drift_step: Optional[float] = Field(default=None, gt=0)

    @property
    def sigma(self) -> float:
        if self.zero_temperature:
            return 0.0
        return math.sqrt(2.0 / (self.beta * self.gamma))


class WeightScheme(_Strict):
    """History weights over accumulated stages"""
    kind: WeightSchemeKind = WeightSchemeKind.UNIFORM
    lam: float = 0.0


class BasisConfig(_Strict):
    """Gaussian features per coordinate"""
    p: int = Field(default=31, ge=2)
    delta: float = Field(default=0.2, gt=0)


class FhtConfig(_Strict):
    """Hierarchical tensor fit settings"""
    rank: int = Field(default=15, ge=1)
    oversampling: int = Field(default=5, ge=0)
    sketch_seed: int = 0
    margin: float = Field(default=0.02, ge=0)


class RegularizerConfig(_Strict):
    """Softplus floor and bias strength"""
    eps: float = Field(default=0.1, gt=0)
    tau: float = Field(default=0.1, gt=0)
    alpha: float = Field(default=0.0, ge=0)


class ProductionConfig(_Strict):
    """Fixed-bias production run"""
    n_traj: int = Field(default=1, ge=1)
    n_step: int = Field(default=0, ge=0)
    seed: int = 1


class BasinSpec(_Strict):
    """Metastable basins used for transition counting"""
    centers: List[List[float]]
    radius: float = Field(default=0.2, gt=0)

    @model_validator(mode="after")
    def _check_disjoint(self):
        for i, ci in enumerate(self.centers):
            for cj in self.centers[i + 1:]:
                dist = math.dist(ci, cj)
                if dist <= 2.0 * self.radius:
                    raise ValueError(f"basins at {ci} and {cj} overlap for radius {self.radius}")
        return self


class AnalysisConfig(_Strict):
    """Post-processing settings"""
    bins: int = Field(default=64, ge=2)
    ranges: Optional[List[Tuple[float, float]]] = None
    subset: Optional[List[int]] = None
    basins: Optional[BasinSpec] = None
    fes_cutoff: float = Field(default=10.0, gt=0)  # in units of k_BT


class SimConfig(_Strict):
    """Every tunable of the adaptive loop"""
    potential: PotentialSpec
    cv: CvMapSpec
    dynamics: DynParams
    walkers: int = Field(default=8, ge=1)
    n_step: int = Field(gt=0)
    n_save: int = Field(gt=0)
    t_max: int = Field(gt=0)
    basis: BasisConfig = Field(default_factory=BasisConfig)
    fht: FhtConfig = Field(default_factory=FhtConfig)
    regularizer: RegularizerConfig = Field(default_factory=RegularizerConfig)
    weight_scheme: WeightScheme = Field(default_factory=WeightScheme)
    production: ProductionConfig = Field(default_factory=ProductionConfig)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    initial_positions: List[List[float]]
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.cv.dim != self.potential.dim:
            raise ValueError(f"cv.dim={self.cv.dim} does not match potential.dim={self.potential.dim}")
        if self.n_step % self.n_save != 0:
            raise ValueError(f"n_save={self.n_save} must divide n_step={self.n_step}")
        if len(self.initial_positions) not in (1, self.walkers):
            raise ValueError("initial_positions needs one entry or one per walker")
        for point in self.initial_positions:
            if len(point) != self.potential.dim:
                raise ValueError(f"initial position {point} has wrong length")
        return self

    def config_hash(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunConfigFile(SimConfig):
    """Structured run-config document"""
    experiment: str = "run"
    output_dir: Optional[str] = None


# Record Models
class IterationDiagnostics(BaseModel):
    """Per-iteration fit diagnostics"""
    iteration: int
    n_samples: int
    ranks: List[int]
    density_integral: Optional[float] = None
    rho_min: float
    rho_max: float
    out_of_domain: int = 0
    bias_hash: str


class ManifestEntry(BaseModel):
    """One emitted file"""
    path: str
    sha256: str
    command: str


class RunManifest(BaseModel):
    """Index of everything a command wrote"""
    experiment: str
    config_hash: str
    seeds: Dict[str, int]
    entries: List[ManifestEntry] = Field(default_factory=list)
