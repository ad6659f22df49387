"""Scripts behind the command-line commands."""
import logging
import os
import time
from typing import List, Optional, Sequence

import pandas as pd

from ..dataset import PhantomConfig, generate_from_config, save_dataset, stratified_kfold
from .encoders import VARIANT_NAMES, build_variant, count_params, describe
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    load_grid,
    run_ablation,
    run_experiment,
)
from .gradsuite import check_cells, check_ops

logger = logging.getLogger(__name__)


def train(config_path: str, output_dir: Optional[str] = None) -> None:
    """Cross-validate one configured cell.

    :param config_path: JSON config file.
    :type config_path: str
    :param output_dir: Overrides ``output_dir`` of the config.
    :type output_dir: Optional[str]
    :rtype: None
    """
    config = ExperimentConfig.from_json(config_path)
    if output_dir:
        config = config.override({"output_dir": output_dir})
    report(run_experiment(config))


def benchmark(output_dir: Optional[str] = None) -> None:
    """Run the phantom benchmark preset and print its wall time.

    :param output_dir: Overrides the preset output directory.
    :type output_dir: Optional[str]
    :rtype: None
    """
    overrides = {"output_dir": output_dir} if output_dir else {}
    config = ExperimentConfig.phantom_benchmark(verbose=True, **overrides)
    start = time.time()
    result = run_experiment(config)
    report(result)
    print(f"benchmark wall time {time.time() - start:.1f} s")


def report(result: ExperimentResult) -> None:
    """Print the mean ± std AUC of a finished run."""
    s = result.summary
    print(
        f"{result.config.label()}: AUC {s['auc_mean']:.4f} ± {s['auc_std']:.4f}, "
        f"{s['failed_folds']} failed fold(s); results in {result.config.output_dir}"
    )


def ablate(grid_path: str, output_dir: Optional[str] = None) -> None:
    """Run an ablation grid and print its table.

    :param grid_path: JSON grid file.
    :type grid_path: str
    :param output_dir: Overrides ``output_dir`` of the base config.
    :type output_dir: Optional[str]
    :rtype: None
    """
    base, cells, sort_key = load_grid(grid_path)
    table = run_ablation(base, cells, sort_key, output_dir)
    columns = ["cell", "arch", "mode", "aggregator", "recipe", "params", "auc", "best"]
    print(table[columns].to_string(index=False))


def params(arch: str) -> pd.DataFrame:
    """Print learnable parameter counts of one variant or of all ('all').

    :param arch: Variant name or 'all'.
    :type arch: str
    :rtype: pd.DataFrame
    """
    names: Sequence[str] = VARIANT_NAMES if arch == "all" else [arch]
    df = pd.DataFrame(
        [{"arch": name, "params": count_params(build_variant(name))} for name in names]
    )
    print(df.to_string(index=False, formatters={"params": "{:,}".format}))
    return df


def describe_arch(arch: str, depth: int = 8, size: int = 64) -> None:
    """Print the per-layer table of a variant.

    :param arch: Variant name.
    :type arch: str
    :param depth: Probe depth D.
    :type depth: int
    :param size: Probe in-plane extent.
    :type size: int
    :rtype: None
    """
    print(describe(build_variant(arch), (1, 1, depth, size, size)))


def gen_phantoms(
    n: int,
    difficulty: float,
    seed: int,
    out: str,
    class_balance: float = 0.7,
    size: int = 64,
    folds: int = 0,
) -> List[str]:
    """Generate a phantom dataset directory, optionally with stratified folds.

    :param n: Number of volumes.
    :type n: int
    :param difficulty: Value in [0, 1].
    :type difficulty: float
    :param seed: Seed.
    :type seed: int
    :param out: Output directory.
    :type out: str
    :param class_balance: Fraction of label-1 volumes.
    :type class_balance: float
    :param size: In-plane extent.
    :type size: int
    :param folds: Number of folds to store in ``folds.json``; none when 0.
    :type folds: int
    :rtype: List[str]
    """
    config = PhantomConfig(n, class_balance, difficulty, seed, size)
    volumes = generate_from_config(config, verbose=True)
    assignment = None
    if folds:
        assignment = stratified_kfold([v.label for v in volumes], folds, seed).to_lists()
    names = save_dataset(volumes, out, assignment)
    print(f"{len(names)} volumes written to {os.path.abspath(out)}")
    return names


def check_grads(
    seeds: int = 1,
    n_coords: int = 8,
    archs: Optional[Sequence[str]] = None,
    out: Optional[str] = None,
) -> pd.DataFrame:
    """Run the gradient oracle over all ops and classifier cells.

    :param seeds: Number of seeds.
    :type seeds: int
    :param n_coords: Coordinates checked per cell.
    :type n_coords: int
    :param archs: Variants; all when None.
    :type archs: Optional[Sequence[str]]
    :param out: Optional csv path for the full table.
    :type out: Optional[str]
    :rtype: pd.DataFrame
    """
    seed_list = list(range(seeds))
    ops = check_ops(seed_list)
    cells = check_cells(seed_list, archs, n_coords=n_coords, verbose=True)
    print(ops.groupby("case")["max_rel_error"].max().to_string())
    print(
        cells.groupby(["arch", "aggregator", "recipe"])["max_rel_error"].max().to_string()
    )
    table = pd.concat(
        [ops.assign(kind="op"), cells.assign(kind="cell")], ignore_index=True
    )
    worst = table["max_rel_error"].max()
    print(f"worst relative error: {worst:.3e}")
    if out:
        table.to_csv(out, index=False)
    return table
