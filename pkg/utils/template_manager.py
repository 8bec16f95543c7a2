# File: utils/template_manager.py
from pathlib import Path
from typing import Any, Dict, List, Union
import logging

import yaml
from pydantic import ValidationError

from core.potentials import MUELLER_BROWN_DEEPEST
from models.core_models import (AnalysisConfig, BasinSpec, BasisConfig, CvKind, CvMapSpec, DynParams, FhtConfig,
                                PotentialSpec, ProductionConfig, RegularizerConfig, RunConfigFile)
from models.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

RECIPES_DIR = Path(__file__).resolve().parent.parent / "recipes"

# Well centres of the Mueller-Brown surface, deepest first
MUELLER_BASINS = [[-0.558, 1.442], [0.623, 0.028], [-0.050, 0.467]]


def load_run_config(path: Union[str, Path]) -> RunConfigFile:
    """Parse a YAML run config; unknown keys are rejected"""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"config file not found: {file_path}")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        logger.error(f"Error parsing config {file_path}: {str(e)}")
        raise InvalidArgumentError(f"config {file_path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise InvalidArgumentError(f"config {file_path} must be a mapping at the top level")
    try:
        return RunConfigFile(**data)
    except ValidationError as e:
        raise InvalidArgumentError(f"invalid config {file_path}: {e}") from e


def dump_run_config(config: RunConfigFile) -> str:
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)


class RecipeManager:
    """Shipped experiment recipes, stored as YAML run configs"""

    def __init__(self, recipes_dir: Union[str, Path] = RECIPES_DIR):
        self.recipes_dir = Path(recipes_dir)
        self.recipes_dir.mkdir(parents=True, exist_ok=True)
        self._ensure_default_recipes()

    def _builtin(self) -> Dict[str, RunConfigFile]:
        return {
            "mueller_desk": self._create_mueller_desk_recipe(),
            "mueller_full": self._create_mueller_full_recipe(),
            "doublewell_reweight": self._create_doublewell_recipe(),
            "periodic_chain": self._create_periodic_chain_recipe(),
        }

    def _ensure_default_recipes(self):
        """Write the built-in recipes that are missing on disk"""
        for name, recipe in self._builtin().items():
            if not (self.recipes_dir / f"{name}.yaml").exists():
                self.save_recipe_to_file(name, recipe)

    def list_recipes(self) -> List[str]:
        return sorted(path.stem for path in self.recipes_dir.glob("*.yaml"))

    def load_recipe(self, name: str) -> RunConfigFile:
        """Load a recipe from disk, falling back to the built-in version"""
        recipe_file = self.recipes_dir / f"{name}.yaml"
        if recipe_file.exists():
            return load_run_config(recipe_file)
        builtin = self._builtin()
        if name not in builtin:
            raise InvalidArgumentError(f"unknown recipe {name!r}; available: {self.list_recipes()}")
        logger.info(f"Recipe {name} not on disk, regenerating it")
        self.save_recipe_to_file(name, builtin[name])
        return builtin[name]

    def save_recipe_to_file(self, name: str, recipe: RunConfigFile) -> Path:
        recipe_file = self.recipes_dir / f"{name}.yaml"
        try:
            with open(recipe_file, "w", encoding="utf-8") as f:
                f.write(dump_run_config(recipe))
        except OSError as e:
            logger.error(f"Error saving recipe {name}: {e}")
            raise
        logger.info(f"Recipe saved: {recipe_file}")
        return recipe_file

    def _create_mueller_desk_recipe(self) -> RunConfigFile:
        """Scaled Mueller-Brown run: 50 updates of 20,000 steps"""
        return RunConfigFile(
            experiment="mueller_desk",
            output_dir="runs/mueller_desk",
            potential=PotentialSpec.mueller_brown(),
            cv=CvMapSpec(kind=CvKind.IDENTITY, dim=2),
            dynamics=DynParams(dt=0.005, gamma=5.0, beta=0.4, max_drift_step=0.25),
            walkers=8,
            n_step=20000,
            n_save=100,
            t_max=50,
            basis=BasisConfig(p=31, delta=0.2),
            fht=FhtConfig(rank=15, oversampling=5, sketch_seed=0),
            regularizer=RegularizerConfig(eps=0.1, tau=0.1, alpha=16.0),
            production=ProductionConfig(n_traj=1, n_step=1000000, seed=1),
            analysis=AnalysisConfig(bins=64, ranges=[(-1.5, 1.2), (-0.4, 2.0)],
                                    basins=BasinSpec(centers=MUELLER_BASINS, radius=0.2)),
            initial_positions=[list(MUELLER_BROWN_DEEPEST)],
            seed=0,
        )

    def _create_mueller_full_recipe(self) -> RunConfigFile:
        """Mueller-Brown at full length: 150 updates of 100,000 steps, 6e6 production steps"""
        desk = self._create_mueller_desk_recipe()
        return desk.model_copy(update={
            "experiment": "mueller_full",
            "output_dir": "runs/mueller_full",
            "n_step": 100000,
            "t_max": 150,
            "production": ProductionConfig(n_traj=1, n_step=6000000, seed=1),
        })

    def _create_doublewell_recipe(self) -> RunConfigFile:
        return RunConfigFile(
            experiment="doublewell_reweight",
            output_dir="runs/doublewell_reweight",
            potential=PotentialSpec.double_well(),
            cv=CvMapSpec(kind=CvKind.IDENTITY, dim=1),
            dynamics=DynParams(dt=0.001, gamma=1.0, beta=4.0),
            walkers=4,
            n_step=10000,
            n_save=10,
            t_max=10,
            basis=BasisConfig(p=21, delta=0.2),
            fht=FhtConfig(rank=15, oversampling=5, sketch_seed=0),
            regularizer=RegularizerConfig(eps=0.1, tau=0.1, alpha=1.0),
            production=ProductionConfig(n_traj=1, n_step=2000000, seed=1),
            analysis=AnalysisConfig(bins=64, ranges=[(-2.0, 2.0)],
                                    basins=BasinSpec(centers=[[-1.0], [1.0]], radius=0.2)),
            initial_positions=[[-1.0]],
            seed=0,
        )

    def _create_periodic_chain_recipe(self) -> RunConfigFile:
        """Planar four-bead chain biased along its two turn angles"""
        return RunConfigFile(
            experiment="periodic_chain",
            output_dir="runs/periodic_chain",
            potential=PotentialSpec.periodic_chain(n_beads=4),
            cv=CvMapSpec(kind=CvKind.CHAIN_ANGLES, dim=8, n_beads=4),
            dynamics=DynParams(dt=0.001, gamma=1.0, beta=1.0),
            walkers=8,
            n_step=10000,
            n_save=50,
            t_max=20,
            basis=BasisConfig(p=21, delta=0.5),
            fht=FhtConfig(rank=10, oversampling=5, sketch_seed=0),
            regularizer=RegularizerConfig(eps=0.1, tau=0.1, alpha=2.0),
            production=ProductionConfig(n_traj=4, n_step=200000, seed=1),
            analysis=AnalysisConfig(bins=48),
            initial_positions=[[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 2.0, 1.0]],
            seed=0,
        )

    def describe(self, name: str) -> Dict[str, Any]:
        """Summary of a recipe for listings"""
        recipe = self.load_recipe(name)
        return {
            "name": name,
            "experiment": recipe.experiment,
            "potential": recipe.potential.kind.value,
            "m": recipe.cv.m,
            "walkers": recipe.walkers,
            "t_max": recipe.t_max,
            "n_step": recipe.n_step,
            "alpha": recipe.regularizer.alpha,
        }
