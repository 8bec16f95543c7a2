# File: utils/history_manager.py

from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np
import pandas as pd

from core.history import HistoryDataset, RescaleMap, history_weights
from models.core_models import WeightScheme
from utils.file_manager import RunFileManager

logger = logging.getLogger(__name__)

DATASET_CSV = "dataset.csv"
DATASET_META = "dataset.json"


class HistoryStore:
    """Persists the weighted history dataset and summarises it per stage"""

    def __init__(self, files: RunFileManager):
        self.files = files

    @staticmethod
    def _columns(m: int):
        return [f"z_{k + 1}" for k in range(m)]

    def save(self, ds: HistoryDataset, rescale: Optional[RescaleMap] = None) -> Path:
        """Write dataset.csv plus the dataset.json sidecar"""
        frame = pd.DataFrame(ds.samples, columns=self._columns(ds.m))
        frame.insert(0, "stage", ds.stages)
        path = self.files.write_csv(DATASET_CSV, frame, schema="stage," + ",".join(self._columns(ds.m)))
        meta = {
            "m": ds.m,
            "n_samples": ds.n_samples,
            "periodic": ds.periodic_mask.tolist(),
            "weight_scheme": ds.scheme.model_dump(mode="json"),
            "stage_ranges": [list(r) for r in ds.stage_ranges],
            "rescale": None if rescale is None else rescale.to_dict(),
        }
        self.files.write_json(DATASET_META, meta)
        logger.info(f"History dataset saved: {ds.n_samples} samples over {len(ds.stage_ranges)} stages")
        return path

    def load(self, max_stage: Optional[int] = None) -> Tuple[HistoryDataset, Optional[RescaleMap]]:
        """Rebuild the dataset; weights are recomputed from the stored scheme"""
        try:
            meta = self.files.read_json(DATASET_META)
            frame = self.files.read_csv(DATASET_CSV)
        except (OSError, ValueError) as e:
            logger.error(f"Error loading history dataset from {self.files.base_dir}: {e}")
            raise
        if max_stage is not None:
            frame = frame[frame["stage"] <= max_stage]
        scheme = WeightScheme(**meta["weight_scheme"])
        stages = frame["stage"].to_numpy(dtype=int)
        samples = frame[self._columns(int(meta["m"]))].to_numpy(dtype=float)
        ds = HistoryDataset(samples=samples, weights=history_weights(stages, scheme), stages=stages,
                            periodic_mask=np.asarray(meta["periodic"], dtype=bool), scheme=scheme)
        rescale = None if meta.get("rescale") is None else RescaleMap.from_dict(meta["rescale"])
        return ds, rescale

    def get_stage_metrics(self, ds: HistoryDataset) -> Dict[str, Any]:
        """Sample counts and history-weight mass per stage"""
        if ds.n_samples == 0:
            return {"total_samples": 0, "stages": 0, "latest_stage_mass": 0.0, "per_stage": []}
        per_stage = []
        for stage, start, stop in ds.stage_ranges:
            per_stage.append({
                "stage": stage,
                "samples": stop - start,
                "weight_mass": float(ds.weights[start:stop].sum()),
            })
        return {
            "total_samples": ds.n_samples,
            "stages": len(per_stage),
            "latest_stage_mass": per_stage[-1]["weight_mass"],
            "per_stage": per_stage,
        }
