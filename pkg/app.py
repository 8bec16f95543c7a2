# File: app.py - Command-line front end of the adaptive sampler

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from dotenv import load_dotenv

from core.analysis import (FesGrid, count_transitions, fes_difference, fes_histogram, fes_rmse, flattened_fes,
                           merge_transition_counts, reference_fes_quadrature, reweight_weights)
from core.fht import DimensionTree, density_integral, evaluate, fit_samples, make_bases
from core.history import HistoryDataset, append_stage, fit_rescale
from core.sampler import PRODUCTION_CSV, AdaptiveSampler, cv_columns
from models.core_models import RunConfigFile
from models.errors import EmptyDatasetError, IncompatibleBiasError, InvalidArgumentError, SamplerError
from utils.file_manager import RunFileManager, load_bias, read_table
from utils.template_manager import RecipeManager, load_run_config

load_dotenv()

# Configure logging
logging.basicConfig(level=os.getenv("PATHMV_LOG_LEVEL", "INFO").upper(),
                    format="%(asctime)s %(levelname)s %(name)s: %(message)s")
logger = logging.getLogger(__name__)

# Exit statuses
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2

INPUT_ERRORS = (InvalidArgumentError, IncompatibleBiasError, EmptyDatasetError, FileNotFoundError, yaml.YAMLError,
                pd.errors.ParserError, pd.errors.EmptyDataError, json.JSONDecodeError)
# numerical failures outside the sampler hierarchy still end as a runtime error
RUNTIME_ERRORS = (SamplerError, np.linalg.LinAlgError, FloatingPointError, OSError)

TRANSITION_DEFINITION = ("dwell-based: a walker keeps its last basin while outside every capture disk; "
                         "each first entry into a different basin counts once")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pathmv", description="Path-dependent adaptive enhanced sampling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--config", help="YAML run config")
        source.add_argument("--recipe", help="name of a shipped recipe")
        p.add_argument("--seed", type=int, default=None, help="override the seed of this command")
        p.add_argument("--output", default=None, help="output directory")

    adapt = sub.add_parser("adapt", help="run the adaptive bias loop")
    common(adapt)
    adapt.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    production = sub.add_parser("production", help="fixed-bias production trajectories")
    common(production)
    production.add_argument("--bias", default=None, help="bias snapshot (default: latest in the output dir)")
    production.add_argument("--n-step", type=int, default=None)
    production.add_argument("--n-traj", type=int, default=None)

    analyze = sub.add_parser("analyze", help="FES, differences and transition counts")
    common(analyze)
    analyze.add_argument("--mode", choices=["fes", "diff", "transitions", "reference"], required=True)
    analyze.add_argument("--input", default=None, help="production or trajectory CSV")
    analyze.add_argument("--reference", default=None, help="reference FES grid CSV for --mode diff")

    fit_density = sub.add_parser("fit-density", help="standalone FHT density fit on a CSV of samples")
    common(fit_density)
    fit_density.add_argument("--samples", required=True, help="CSV with z_1..z_m and optional weight column")

    recipes = sub.add_parser("recipes", help="list the shipped recipes")
    recipes.add_argument("--dir", default=None, help="recipe directory")
    return parser


class SamplerApp:
    """Main command-line application class"""

    def __init__(self, recipe_manager: Optional[RecipeManager] = None):
        self.parser = _build_parser()
        self._recipe_manager = recipe_manager

    @property
    def recipe_manager(self) -> RecipeManager:
        if self._recipe_manager is None:
            self._recipe_manager = RecipeManager()
        return self._recipe_manager

    def run(self, argv: Optional[Sequence[str]] = None) -> int:
        """Parse arguments, dispatch the subcommand and map failures to exit codes"""
        args = self.parser.parse_args(argv)
        handlers = {
            "adapt": self._cmd_adapt,
            "production": self._cmd_production,
            "analyze": self._cmd_analyze,
            "fit-density": self._cmd_fit_density,
            "recipes": self._cmd_recipes,
        }
        try:
            summary = handlers[args.command](args)
        except INPUT_ERRORS as e:
            return self._fail(e, EXIT_INPUT)
        except RUNTIME_ERRORS as e:
            return self._fail(e, EXIT_RUNTIME)
        self._emit({"status": "ok", "command": args.command, **summary})
        return EXIT_OK

    # Output
    @staticmethod
    def _emit(payload: Dict[str, Any]):
        print(json.dumps(payload, sort_keys=True))

    def _fail(self, error: Exception, code: int) -> int:
        logger.error(f"{type(error).__name__}: {error}")
        self._emit({"error": type(error).__name__, "message": str(error)})
        return code

    # Configuration
    def _load_config(self, args) -> RunConfigFile:
        if args.recipe:
            return self.recipe_manager.load_recipe(args.recipe)
        return load_run_config(args.config)

    @staticmethod
    def _output_dir(args, config: RunConfigFile) -> Path:
        return Path(args.output or config.output_dir or os.getenv("PATHMV_OUTPUT_DIR")
                    or Path("runs") / config.experiment)

    @staticmethod
    def _seeds(config: RunConfigFile) -> Dict[str, int]:
        return {"master": config.seed, "production": config.production.seed, "sketch": config.fht.sketch_seed}

    def _finish(self, files: RunFileManager, config: RunConfigFile) -> Dict[str, Any]:
        files.write_manifest(config.experiment, config.config_hash(), self._seeds(config))
        return {"output": str(files.base_dir), "manifest_sha256": files.manifest_hash()}

    # Commands
    def _cmd_adapt(self, args) -> Dict[str, Any]:
        config = self._load_config(args)
        if args.seed is not None:
            config = config.model_copy(update={"seed": args.seed})
        files = RunFileManager(self._output_dir(args, config), command="adapt")
        with files:
            files.write_json("config.json", config.model_dump(mode="json"))
            sampler = AdaptiveSampler(config, files)
            result = sampler.adapt(resume=args.resume)
            summary = self._finish(files, config)
        return {**summary, "iterations": len(result.biases), "n_samples": result.dataset.n_samples,
                "status_detail": sampler.get_process_status()}

    def _cmd_production(self, args) -> Dict[str, Any]:
        config = self._load_config(args)
        if args.seed is not None:
            config = config.model_copy(update={"production": config.production.model_copy(update={"seed": args.seed})})
        files = RunFileManager(self._output_dir(args, config), command="production")
        bias_path = args.bias
        if bias_path is None:
            snapshots = files.list_biases()
            if not snapshots:
                raise FileNotFoundError(f"no bias snapshot in {files.biases_dir}; pass --bias")
            bias_path = files.biases_dir / snapshots[-1]
        bias = load_bias(bias_path)
        with files:
            sampler = AdaptiveSampler(config, files)
            frame = sampler.production(bias, n_traj=args.n_traj, n_step=args.n_step)
            summary = self._finish(files, config)
        return {**summary, "bias": str(bias_path), "snapshots": len(frame)}

    def _cmd_analyze(self, args) -> Dict[str, Any]:
        config = self._load_config(args)
        files = RunFileManager(self._output_dir(args, config), command=f"analyze:{args.mode}")
        with files:
            if args.mode == "reference":
                result = self._write_reference(files, config)
            elif args.mode == "transitions":
                result = self._write_transitions(files, config, args)
            else:
                result = self._write_fes(files, config, args)
            summary = self._finish(files, config)
        return {**summary, **result}

    def _cmd_fit_density(self, args) -> Dict[str, Any]:
        config = self._load_config(args)
        if args.seed is not None:
            config = config.model_copy(update={"fht": config.fht.model_copy(update={"sketch_seed": args.seed})})
        frame = read_table(Path(args.samples))
        m = config.cv.m
        columns = cv_columns(m)
        missing = [c for c in columns if c not in frame.columns]
        if missing:
            raise InvalidArgumentError(f"samples file lacks columns {missing}")
        samples = frame[columns].to_numpy(dtype=float)
        periodic = np.array(config.cv.periodic_mask, dtype=bool)
        ds = append_stage(HistoryDataset.empty(m, periodic), samples, stage=1)
        weights = frame["weight"].to_numpy(dtype=float) if "weight" in frame.columns else ds.weights
        rescale = fit_rescale(ds, config.fht.margin)
        bases = make_bases(m, periodic, config.basis)
        model = fit_samples(rescale.rescale(ds.samples), weights, bases, config.fht, DimensionTree.balanced(m))

        files = RunFileManager(self._output_dir(args, config), command="fit-density")
        with files:
            files.write_json("density.json", {"rescale": rescale.to_dict(), "model": model.to_dict()})
            out = pd.DataFrame(ds.samples, columns=columns)
            out["rho"] = evaluate(model, rescale.rescale(ds.samples)) * np.prod(rescale.jacobian)
            files.write_csv("density_eval.csv", out, schema=",".join(out.columns))
            summary = self._finish(files, config)
        integral = density_integral(model) if m <= 3 else None
        return {**summary, "ranks": model.ranks, "density_integral": integral, "n_samples": ds.n_samples}

    def _cmd_recipes(self, args) -> Dict[str, Any]:
        manager = RecipeManager(args.dir) if args.dir else self.recipe_manager
        return {"recipes": [manager.describe(name) for name in manager.list_recipes()]}

    # Analysis helpers
    @staticmethod
    def _subset_and_ranges(config: RunConfigFile) -> Tuple[Tuple[int, ...], Optional[List[Tuple[float, float]]]]:
        m = config.cv.m
        subset = tuple(config.analysis.subset) if config.analysis.subset else tuple(range(min(m, 2)))
        ranges = config.analysis.ranges
        if ranges is not None and len(ranges) == m and len(subset) < m:
            ranges = [ranges[k] for k in subset]
        return subset, None if ranges is None else [tuple(r) for r in ranges]

    def _read_input(self, files: RunFileManager, args) -> pd.DataFrame:
        path = Path(args.input) if args.input else files.path(PRODUCTION_CSV)
        if not path.exists():
            raise FileNotFoundError(f"input not found: {path}")
        return read_table(path)

    def _reweighted_fes(self, files: RunFileManager, config: RunConfigFile, args) -> FesGrid:
        frame = self._read_input(files, args)
        beta = config.dynamics.beta
        samples = frame[cv_columns(config.cv.m)].to_numpy(dtype=float)
        bias = frame["bias"].to_numpy(dtype=float) if "bias" in frame.columns else np.zeros(len(frame))
        subset, ranges = self._subset_and_ranges(config)
        return fes_histogram(samples, reweight_weights(bias, beta), beta, bins=config.analysis.bins,
                             ranges=ranges, subset=subset)

    def _write_fes(self, files: RunFileManager, config: RunConfigFile, args) -> Dict[str, Any]:
        if args.mode == "diff":
            ref_path = Path(args.reference) if args.reference else files.fes_dir / "reference.csv"
            if not ref_path.exists():
                raise FileNotFoundError(f"reference FES grid not found: {ref_path}; run --mode reference first")
            reference = FesGrid.from_frame(read_table(ref_path), config.dynamics.beta)
        fes = self._reweighted_fes(files, config, args)
        schema = ",".join(fes.to_frame().columns)
        if args.mode == "fes":
            files.write_csv("fes/fes.csv", fes.to_frame(), schema=schema)
            flat = flattened_fes(fes, config.regularizer.alpha)
            files.write_csv("fes/fes_flattened.csv", flat.to_frame(), schema=schema)
            return {"defined_bins": int(fes.mask.sum())}

        diff = fes_difference(fes, reference)
        files.write_csv("fes/diff.csv", diff.to_frame(), schema=schema)
        cutoff = config.analysis.fes_cutoff / config.dynamics.beta
        rmse = fes_rmse(fes, reference, cutoff=cutoff)
        files.write_json("fes/diff_summary.json", {"rmse": rmse, "rmse_kT": rmse * config.dynamics.beta,
                                                   "cutoff": cutoff, "compared_bins": int(diff.mask.sum())})
        logger.info(f"Reweighted FES vs reference: RMSE {rmse:.4f} ({rmse * config.dynamics.beta:.3f} kT)")
        return {"rmse": rmse}

    def _write_reference(self, files: RunFileManager, config: RunConfigFile) -> Dict[str, Any]:
        subset, ranges = self._subset_and_ranges(config)
        if ranges is None:
            raise InvalidArgumentError("reference FES needs analysis.ranges in the config")
        bins = config.analysis.bins
        axes = [np.linspace(lo, hi, bins + 1) for lo, hi in ranges]
        axes = [0.5 * (edges[:-1] + edges[1:]) for edges in axes]
        other_range = None
        full = config.analysis.ranges
        if len(subset) < config.potential.dim and full is not None and len(full) == config.potential.dim:
            other_range = tuple(full[1 - subset[0]])
        ref = reference_fes_quadrature(config.potential, config.cv, axes, config.dynamics.beta,
                                       subset=subset, other_range=other_range)
        files.write_csv("fes/reference.csv", ref.to_frame(), schema=",".join(ref.to_frame().columns))
        return {"defined_bins": int(ref.mask.sum())}

    def _write_transitions(self, files: RunFileManager, config: RunConfigFile, args) -> Dict[str, Any]:
        basins = config.analysis.basins
        if basins is None:
            raise InvalidArgumentError("transition counting needs analysis.basins in the config")
        frame = self._read_input(files, args)
        group = "traj" if "traj" in frame.columns else "walker"
        order = [c for c in ("iteration", "step") if c in frame.columns]
        columns = cv_columns(config.cv.m)
        per_series = {}
        for key, series in frame.groupby(group, sort=True):
            if order:
                series = series.sort_values(order, kind="stable")
            per_series[str(key)] = count_transitions(series[columns].to_numpy(dtype=float), basins)
        merged = merge_transition_counts(list(per_series.values()))
        files.write_json("transitions.json", {**merged, "per_series": per_series, "grouped_by": group,
                                              "definition": TRANSITION_DEFINITION})
        return {"transitions": merged["total"]}


def main(argv: Optional[Sequence[str]] = None) -> int:
    app = SamplerApp()
    return app.run(argv)


# Main application entry point
if __name__ == "__main__":
    sys.exit(main())
