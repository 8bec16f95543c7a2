# File: tests/conftest.py
import pytest
import yaml

from core.basis import build_basis
from models.core_models import (BasinSpec, BasisConfig, CvMapSpec, DynParams, FhtConfig, PotentialSpec,
                                ProductionConfig, RegularizerConfig, RunConfigFile, AnalysisConfig)
from utils.file_manager import RunFileManager


@pytest.fixture
def double_well():
    return PotentialSpec.double_well()


@pytest.fixture
def mueller():
    return PotentialSpec.mueller_brown()


@pytest.fixture(scope="session")
def small_basis():
    return build_basis(6, 0.4)


@pytest.fixture
def tiny_config() -> RunConfigFile:
    """Seconds-long adaptive run on the 1D double well"""
    return RunConfigFile(
        experiment="tiny",
        potential=PotentialSpec.double_well(),
        cv=CvMapSpec(dim=1),
        dynamics=DynParams(dt=0.005, gamma=1.0, beta=3.0),
        walkers=2,
        n_step=200,
        n_save=10,
        t_max=3,
        basis=BasisConfig(p=9, delta=0.3),
        fht=FhtConfig(rank=4, oversampling=2, sketch_seed=0),
        regularizer=RegularizerConfig(eps=0.1, tau=0.1, alpha=1.0),
        production=ProductionConfig(n_traj=2, n_step=100, seed=1),
        analysis=AnalysisConfig(bins=16, ranges=[(-2.0, 2.0)],
                                basins=BasinSpec(centers=[[-1.0], [1.0]], radius=0.2)),
        initial_positions=[[-1.0]],
        seed=0,
    )


@pytest.fixture
def tiny_mueller_config() -> RunConfigFile:
    """Seconds-long adaptive run on the 2D Mueller-Brown surface"""
    return RunConfigFile(
        experiment="tiny_mueller",
        potential=PotentialSpec.mueller_brown(),
        cv=CvMapSpec(dim=2),
        dynamics=DynParams(dt=0.005, gamma=5.0, beta=0.4, max_drift_step=0.25),
        walkers=2,
        n_step=200,
        n_save=10,
        t_max=4,
        basis=BasisConfig(p=9, delta=0.3),
        fht=FhtConfig(rank=3, oversampling=2, sketch_seed=0),
        regularizer=RegularizerConfig(eps=0.1, tau=0.1, alpha=2.0),
        production=ProductionConfig(n_traj=1, n_step=100, seed=1),
        initial_positions=[[-0.558, 1.442], [0.623, 0.028]],
        seed=0,
    )


@pytest.fixture
def run_files(tmp_path) -> RunFileManager:
    return RunFileManager(str(tmp_path / "run"))


@pytest.fixture
def write_config(tmp_path):
    """Dump a RunConfigFile to YAML and return its path"""
    def _write(config: RunConfigFile, name: str = "config.yaml"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(config.model_dump(mode="json"), f, sort_keys=False)
        return path
    return _write
