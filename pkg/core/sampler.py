# File: core/sampler.py
# Adaptive loop: collect, rescale, fit, update bias; then fixed-bias production

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from core.bias import BiasedForceField, BiasPotential
from core.cv import CvMap
from core.dynamics import StageRecord, WalkerEnsemble, run_stage
from core.fht import (DimensionTree, SampleMoments, SketchSpec, density_integral, evaluate, fit, make_bases,
                      out_of_domain)
from core.history import HistoryDataset, append_stage, fit_rescale
from core.potentials import build_potential
from models.core_models import IterationDiagnostics, SimConfig
from models.errors import IncompatibleBiasError, InvalidArgumentError, SamplerError
from utils.file_manager import RunFileManager, load_bias
from utils.history_manager import HistoryStore

logger = logging.getLogger(__name__)

TRAJECTORY_CSV = "trajectory.csv"
DIAGNOSTICS_CSV = "diagnostics.csv"
PRODUCTION_CSV = "production.csv"
CHECKPOINT_JSON = "checkpoint.json"
DENSITY_POINTS = 2000
DENSITY_INTEGRAL_MAX_M = 3


class ProcessState(str, Enum):
    """Adaptive sampling process states"""
    INITIALIZING = "initializing"
    COLLECTING = "collecting"
    RESCALING = "rescaling"
    FITTING = "fitting"
    UPDATING_BIAS = "updating_bias"
    PRODUCTION = "production"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class AdaptResult:
    """Outcome of the adaptive loop"""
    bias: BiasPotential
    biases: List[BiasPotential]
    dataset: HistoryDataset
    diagnostics: List[IterationDiagnostics]
    trajectory: pd.DataFrame
    final_positions: np.ndarray
    stage_hashes: List[Tuple[int, str, str]] = field(default_factory=list)


def cv_columns(m: int) -> List[str]:
    return [f"z_{k + 1}" for k in range(m)]


def _stage_frame(iteration: int, record: StageRecord) -> pd.DataFrame:
    frame = pd.DataFrame(record.cv, columns=cv_columns(record.cv.shape[1]))
    frame.insert(0, "step", record.step)
    frame.insert(0, "walker", record.walker)
    frame.insert(0, "iteration", np.full(len(record), iteration, dtype=int))
    return frame


class AdaptiveSampler:
    """Central orchestrator of the path-dependent adaptive bias loop"""

    def __init__(self, config: SimConfig, files: Optional[RunFileManager] = None):
        self.config = config
        self.files = files
        self.store = HistoryStore(files) if files is not None else None
        self.potential = build_potential(config.potential)
        self.cv_map = CvMap(config.cv)
        self.periodic_mask = np.array(config.cv.periodic_mask, dtype=bool)
        self.bases = make_bases(self.cv_map.m, self.periodic_mask, config.basis)
        self.tree = DimensionTree.balanced(self.cv_map.m)
        self.sketch = SketchSpec.from_config(config.fht)
        self.state = ProcessState.INITIALIZING
        self.iteration = 0

    # Helpers
    def _initial_positions(self, n: int) -> np.ndarray:
        starts = np.asarray(self.config.initial_positions, dtype=float)
        return starts[np.arange(n) % len(starts)]

    def _zero_bias(self) -> BiasPotential:
        return BiasPotential.zero(self.cv_map.m, self.config.dynamics.beta, self.config.regularizer,
                                  self.periodic_mask)

    def _density_range(self, model, ds: HistoryDataset, rescale) -> Tuple[float, float]:
        """min/max of the fitted density on a grid (m <= 2) or on dataset points"""
        if self.cv_map.m <= 2:
            axes = [np.linspace(*basis.domain, 32, endpoint=not basis.periodic) for basis in self.bases]
            points = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        else:
            stride = max(1, ds.n_samples // DENSITY_POINTS)
            points = rescale.rescale(ds.samples[::stride])
        rho = evaluate(model, points)
        return float(rho.min()), float(rho.max())

    # Phases
    def _collect(self, ensemble: WalkerEnsemble, bias: BiasPotential) -> Tuple[WalkerEnsemble, StageRecord]:
        """Step A: trajectories under the frozen bias"""
        force = BiasedForceField(self.potential, self.cv_map, bias)
        start_hash = bias.content_hash()
        started = time.perf_counter()
        ensemble, record = run_stage(ensemble, force, self.config.dynamics, self.config.n_step,
                                     self.config.n_save, observer=self.cv_map.evaluate)
        end_hash = bias.content_hash()
        if start_hash != end_hash:
            raise SamplerError(f"bias changed during stage {self.iteration}")
        self._stage_hashes.append((self.iteration, start_hash, end_hash))
        logger.info(f"Stage {self.iteration}: {len(record)} snapshots from {ensemble.n_walkers} walkers "
                    f"in {time.perf_counter() - started:.2f}s")
        return ensemble, record

    def _rescale(self, ds: HistoryDataset, record: StageRecord):
        """Step B: extend the history and refit the coordinate box"""
        ds = append_stage(ds, record.cv, self.config.weight_scheme, stage=self.iteration)
        rescale = fit_rescale(ds, self.config.fht.margin)
        logger.debug(f"Rescale bounds lo={rescale.lo.tolist()} hi={rescale.hi.tolist()}")
        return ds, rescale

    def _fit(self, ds: HistoryDataset, rescale):
        """Step C: sketched FHT density of the rescaled history"""
        started = time.perf_counter()
        source = SampleMoments(rescale.rescale(ds.samples), ds.weights, self.bases)
        model = fit(source, self.tree, self.bases, self.sketch)
        logger.info(f"Iteration {self.iteration}: FHT ranks {model.ranks} on {ds.n_samples} samples "
                    f"in {time.perf_counter() - started:.2f}s")
        return model

    def _update_bias(self, model, rescale) -> BiasPotential:
        """Step D: regularized log-density bias.

        The returned bias is rebuilt from its snapshot dict, so the force used
        for the next stage is the one a resumed run loads from disk.
        """
        reg = self.config.regularizer
        bias = BiasPotential(model=model, rescale=rescale, eps=reg.eps, tau=reg.tau, alpha=reg.alpha,
                             beta=self.config.dynamics.beta, iteration=self.iteration)
        return BiasPotential.from_dict(bias.to_dict())

    def _diagnostics(self, bias: BiasPotential, previous: BiasPotential, ds: HistoryDataset,
                     record: StageRecord) -> IterationDiagnostics:
        integral = density_integral(bias.model) if self.cv_map.m <= DENSITY_INTEGRAL_MAX_M else None
        rho_min, rho_max = self._density_range(bias.model, ds, bias.rescale)
        outside = 0
        if previous.model is not None:
            outside = out_of_domain(previous.model, previous.rescale.rescale(record.cv))
            if outside:
                logger.warning(f"Iteration {self.iteration}: {outside} snapshots left the previous bias box")
        return IterationDiagnostics(iteration=self.iteration, n_samples=ds.n_samples, ranks=bias.model.ranks,
                                    density_integral=integral, rho_min=rho_min, rho_max=rho_max,
                                    out_of_domain=outside, bias_hash=bias.content_hash())

    # Persistence
    def _persist_iteration(self, frame: pd.DataFrame, ds: HistoryDataset, bias: BiasPotential,
                           diag: IterationDiagnostics, ensemble: WalkerEnsemble):
        if self.files is None:
            return
        m = self.cv_map.m
        self.files.append_csv(TRAJECTORY_CSV, frame, schema="iteration,walker,step," + ",".join(cv_columns(m)))
        bias_path = self.files.save_bias(bias)
        self.store.save(ds, bias.rescale)
        row = diag.model_dump()
        row["ranks"] = "-".join(str(r) for r in diag.ranks)
        self.files.append_csv(DIAGNOSTICS_CSV, pd.DataFrame([row]), schema=",".join(row.keys()))
        checkpoint = {
            "iteration": self.iteration,
            "config_hash": self.config.config_hash(),
            "positions": ensemble.positions.tolist(),
            "n_steps": ensemble.n_steps,
            "t": ensemble.t,
            "bias": bias_path.relative_to(self.files.base_dir).as_posix(),
        }
        self.files.write_json(CHECKPOINT_JSON, checkpoint, register=False)

    def _resume(self):
        """Restore the state saved after the last completed iteration"""
        checkpoint = self.files.read_json(CHECKPOINT_JSON)
        if checkpoint["config_hash"] != self.config.config_hash():
            raise IncompatibleBiasError("checkpoint was written by a different configuration")
        self.iteration = int(checkpoint["iteration"])
        m = self.cv_map.m
        self.files.truncate_csv(TRAJECTORY_CSV, "iteration", self.iteration,
                                schema="iteration,walker,step," + ",".join(cv_columns(m)))
        diag_frame = self.files.read_csv(DIAGNOSTICS_CSV)
        self.files.truncate_csv(DIAGNOSTICS_CSV, "iteration", self.iteration,
                                schema=",".join(diag_frame.columns))
        ds, _ = self.store.load(max_stage=self.iteration)
        biases = [load_bias(self.files.path(self.files.bias_relpath(t))) for t in range(1, self.iteration + 1)]
        for t in range(1, self.iteration + 1):
            self.files.register(self.files.bias_relpath(t))
        ensemble = WalkerEnsemble(positions=np.asarray(checkpoint["positions"], dtype=float), rngs=[],
                                  t=float(checkpoint["t"]), n_steps=int(checkpoint["n_steps"]))
        logger.info(f"Resuming after iteration {self.iteration} with {ds.n_samples} samples")
        return ensemble, ds, biases

    def _clear_previous(self):
        """A fresh run must not append to the outputs of an earlier one"""
        if self.files is None:
            return
        for relpath in (TRAJECTORY_CSV, DIAGNOSTICS_CSV, CHECKPOINT_JSON):
            self.files.discard(relpath)
        for name in self.files.list_biases():
            self.files.discard(f"biases/{name}")

    def _load_trajectory(self) -> pd.DataFrame:
        if self.files is not None and self.files.path(TRAJECTORY_CSV).exists():
            return self.files.read_csv(TRAJECTORY_CSV)
        return pd.DataFrame(columns=["iteration", "walker", "step"] + cv_columns(self.cv_map.m))

    # Main loop
    def adapt(self, resume: bool = False) -> AdaptResult:
        """Run T_max bias iterations, persisting and checkpointing each one"""
        config = self.config
        logger.info(f"Starting adaptive sampling: T_max={config.t_max}, M={config.walkers}, "
                    f"n_step={config.n_step}, alpha={config.regularizer.alpha}")
        self._stage_hashes: List[Tuple[int, str, str]] = []
        diagnostics: List[IterationDiagnostics] = []
        frames: List[pd.DataFrame] = []

        try:
            if resume and self.files is not None and self.files.path(CHECKPOINT_JSON).exists():
                ensemble, ds, biases = self._resume()
                frames.append(self._load_trajectory())
                bias = biases[-1] if biases else self._zero_bias()
            else:
                if resume:
                    logger.warning("No checkpoint found; starting from iteration 1")
                self._clear_previous()
                ensemble = WalkerEnsemble(positions=self._initial_positions(config.walkers), rngs=[])
                ds = HistoryDataset.empty(self.cv_map.m, self.periodic_mask, config.weight_scheme)
                biases = []
                bias = self._zero_bias()

            while self.iteration < config.t_max:
                self.iteration += 1
                ensemble = ensemble.reseed(config.seed, self.iteration)

                self.state = ProcessState.COLLECTING
                ensemble, record = self._collect(ensemble, bias)

                self.state = ProcessState.RESCALING
                ds, rescale = self._rescale(ds, record)

                self.state = ProcessState.FITTING
                model = self._fit(ds, rescale)

                self.state = ProcessState.UPDATING_BIAS
                previous, bias = bias, self._update_bias(model, rescale)
                biases.append(bias)
                diag = self._diagnostics(bias, previous, ds, record)
                diagnostics.append(diag)
                frame = _stage_frame(self.iteration, record)
                frames.append(frame)
                self._persist_iteration(frame, ds, bias, diag, ensemble)
                logger.info(f"Iteration {self.iteration}/{config.t_max} done: rho in "
                            f"[{diag.rho_min:.3g}, {diag.rho_max:.3g}], integral {diag.density_integral}")

            self.state = ProcessState.COMPLETED
        except Exception as e:
            logger.error(f"Adaptive sampling failed at iteration {self.iteration}: {str(e)}")
            self.state = ProcessState.FAILED
            raise

        trajectory = pd.concat(frames, ignore_index=True) if frames else self._load_trajectory()
        return AdaptResult(bias=bias, biases=biases, dataset=ds, diagnostics=diagnostics, trajectory=trajectory,
                           final_positions=ensemble.positions, stage_hashes=list(self._stage_hashes))

    def production(self, bias: Optional[BiasPotential], n_traj: Optional[int] = None,
                   n_step: Optional[int] = None, seed: Optional[int] = None,
                   starts: Optional[np.ndarray] = None) -> pd.DataFrame:
        """Independent trajectories under the frozen bias, with V_bias at every snapshot"""
        prod = self.config.production
        n_traj = prod.n_traj if n_traj is None else int(n_traj)
        n_step = prod.n_step if n_step is None else int(n_step)
        seed = prod.seed if seed is None else int(seed)
        if bias is not None and bias.m != self.cv_map.m:
            raise IncompatibleBiasError(f"bias has m={bias.m} but the configured CV map has m={self.cv_map.m}")
        if n_step % self.config.n_save != 0:
            raise InvalidArgumentError(f"n_save={self.config.n_save} must divide production n_step={n_step}")

        self.state = ProcessState.PRODUCTION
        logger.info(f"Production: {n_traj} trajectories x {n_step} steps")
        try:
            positions = self._initial_positions(n_traj) if starts is None else np.asarray(starts, dtype=float)
            ensemble = WalkerEnsemble.create(positions, seed, stage=0)
            force = BiasedForceField(self.potential, self.cv_map, bias)
            _, record = run_stage(ensemble, force, self.config.dynamics, n_step, self.config.n_save,
                                  observer=self.cv_map.evaluate)
            frame = pd.DataFrame(record.cv, columns=cv_columns(self.cv_map.m))
            frame.insert(0, "step", record.step)
            frame.insert(0, "traj", record.walker)
            frame["bias"] = force.bias_energy(record.positions) if len(record) else np.zeros(0)
        except Exception as e:
            logger.error(f"Production failed: {str(e)}")
            self.state = ProcessState.FAILED
            raise

        if self.files is not None:
            self.files.write_csv(PRODUCTION_CSV, frame, schema=",".join(frame.columns))
        self.state = ProcessState.COMPLETED
        return frame

    def get_process_status(self) -> Dict[str, Any]:
        """Current process status for logs and the CLI"""
        state_progress = {
            ProcessState.INITIALIZING: 0.0,
            ProcessState.COLLECTING: 0.25,
            ProcessState.RESCALING: 0.5,
            ProcessState.FITTING: 0.75,
            ProcessState.UPDATING_BIAS: 0.9,
            ProcessState.PRODUCTION: 0.95,
            ProcessState.COMPLETED: 1.0,
            ProcessState.FAILED: 0.0,
        }
        return {
            "current_state": self.state.value,
            "iteration": self.iteration,
            "t_max": self.config.t_max,
            "stage_progress": state_progress.get(self.state, 0.0),
        }
