"""Finite-difference checks of every op and of whole classifier cells."""
import logging
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..dataset.volume import Volume
from ..tensor import (
    Conv2Plus1D,
    ConvSpec,
    RunningStats,
    Tensor,
    batch_norm,
    conv2d,
    conv3d,
    fully_connected,
    global_avg_pool_xy,
    grad_check,
    l2_normalize,
    max_pool_xy,
    no_grad,
    relu,
    sigmoid,
    signed_sqrt,
    softmax,
)
from .aggregation import AGGREGATORS, aggregate
from .classifier import Classifier, build_classifier
from .encoders import VARIANT_NAMES
from .losses import (
    RECIPES,
    CenterState,
    LabeledBatch,
    LossConfig,
    center_loss,
    combine_terms,
    focal_loss,
    joint_loss_terms,
    triplet_loss_batch_hard,
)

logger = logging.getLogger(__name__)

TOY_SHAPE = (3, 1, 4, 32, 32)
TOY_LABELS = (0, 1, 1)

Case = Tuple[str, Callable[..., Tensor], List[Tensor]]


def _scalarize(op: Callable[..., Tensor], inputs: Sequence[Tensor], rng) -> Callable[..., Tensor]:
    with no_grad():
        shape = op(*inputs).shape
    weights = Tensor(rng.normal(size=shape))
    return lambda *xs: (op(*xs) * weights).sum()


def _leaf(rng, *shape, away: float = 0.0) -> Tensor:
    x = rng.normal(size=shape)
    if away:
        x = np.sign(x) * (np.abs(x) + away)
    return Tensor(x, requires_grad=True)


def op_cases(rng: np.random.Generator) -> Iterator[Case]:
    """Named (function, inputs) pairs covering every differentiable op."""
    spec2 = ConvSpec((3, 3), (2, 2), (1, 1), 3, 4)
    yield "conv2d", lambda x, w: conv2d(x, spec2, w), [
        _leaf(rng, 2, 3, 7, 7),
        _leaf(rng, 4, 3, 3, 3),
    ]
    spec3 = ConvSpec.same((3, 3, 3), 2, 3, 2)
    yield "conv3d", lambda x, w: conv3d(x, spec3, w), [
        _leaf(rng, 2, 2, 3, 6, 6),
        _leaf(rng, 3, 2, 3, 3, 3),
    ]
    layer = Conv2Plus1D(2, 3, 4, rng)
    yield "conv2plus1d", lambda x: layer(x), [_leaf(rng, 2, 2, 3, 6, 6)]
    stats = RunningStats.init(3)
    yield "batch_norm", lambda x, g, b: batch_norm(x, g, b, stats, True), [
        _leaf(rng, 4, 3, 5),
        _leaf(rng, 3),
        _leaf(rng, 3),
    ]
    yield "relu", relu, [_leaf(rng, 4, 5, away=0.05)]
    yield "sigmoid", sigmoid, [_leaf(rng, 4, 5)]
    yield "softmax", lambda x: softmax(x, axis=-1), [_leaf(rng, 3, 6)]
    yield "max_pool_xy", max_pool_xy, [_leaf(rng, 2, 2, 7, 7)]
    yield "global_avg_pool_xy", global_avg_pool_xy, [_leaf(rng, 2, 3, 2, 4, 4)]
    yield "fully_connected", fully_connected, [_leaf(rng, 3, 5), _leaf(rng, 2, 5), _leaf(rng, 2)]
    yield "signed_sqrt", signed_sqrt, [_leaf(rng, 4, 5, away=0.1)]
    yield "l2_normalize", lambda x: l2_normalize(x, axis=-1), [_leaf(rng, 4, 5)]
    for kind in AGGREGATORS:
        yield f"aggregate[{kind}]", lambda x, k=kind: aggregate(x, k), [_leaf(rng, 2, 3, 4)]
    labels = np.array([0, 1, 1, 0, 1])
    yield "focal_loss", lambda z: focal_loss(z, labels), [_leaf(rng, 5, 1)]
    centers = CenterState(rng.normal(size=(2, 4)))
    yield "center_loss", lambda e: center_loss(e, labels, centers, training=False)[0], [
        _leaf(rng, 5, 4)
    ]
    yield "triplet_loss", lambda e: triplet_loss_batch_hard(e, labels), [_leaf(rng, 5, 4)]


def check_ops(seeds: Sequence[int] = (0,), step: float = 1e-5) -> pd.DataFrame:
    """Max relative error of every op per seed.

    :param seeds: Seeds of the random inputs.
    :type seeds: Sequence[int]
    :param step: Finite-difference step.
    :type step: float
    :rtype: pd.DataFrame
    """
    rows = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for name, op, inputs in op_cases(rng):
            f = op if name.endswith("_loss") else _scalarize(op, inputs, rng)
            rows.append({"case": name, "seed": seed, "max_rel_error": grad_check(f, inputs, step)})
    return pd.DataFrame(rows)


def toy_volumes(seed: int, shape: Sequence[int] = TOY_SHAPE) -> List[Volume]:
    """Small labeled volumes for end-to-end checks."""
    rng = np.random.default_rng(seed)
    n, _, d, h, w = shape
    labels = (TOY_LABELS * n)[:n]
    return [
        Volume(rng.normal(size=(d, h, w)), (0.45, 0.45), 3.0, labels[i], (1, min(2, d - 1)))
        for i in range(n)
    ]


def cell_loss_fn(
    model: Classifier, volumes: Sequence[Volume], config: LossConfig
) -> Callable[[Tensor], Tensor]:
    """Joint loss of ``model`` as a function of the stacked input batch."""
    centers = CenterState.init(model.embedding_dim, config.center_alpha)

    def f(x: Tensor) -> Tensor:
        logits, embeddings, rows = model.batch_outputs(volumes, x)
        labels = np.array([volumes[r].label for r in rows])
        terms, _ = joint_loss_terms(
            LabeledBatch(logits, embeddings, labels), config, centers, training=False
        )
        return combine_terms(terms, config)

    return f


def check_cells(
    seeds: Sequence[int] = (0,),
    archs: Optional[Sequence[str]] = None,
    aggregators: Optional[Sequence[Optional[str]]] = None,
    recipes: Optional[Sequence[str]] = None,
    n_coords: int = 8,
    step: float = 1e-5,
    verbose: bool = False,
) -> pd.DataFrame:
    """Max relative error of input gradients for every variant × aggregator × recipe cell.

    ``None`` in ``aggregators`` stands for the slice-mode classifier.

    :param seeds: Seeds of weights and inputs.
    :type seeds: Sequence[int]
    :param archs: Variants; all when None.
    :type archs: Optional[Sequence[str]]
    :param aggregators: Aggregators; slice mode plus all four when None.
    :type aggregators: Optional[Sequence[Optional[str]]]
    :param recipes: Loss recipes; all when None.
    :type recipes: Optional[Sequence[str]]
    :param n_coords: Input coordinates checked per cell (largest gradients first).
    :type n_coords: int
    :param step: Finite-difference step.
    :type step: float
    :param verbose: Progress bar.
    :type verbose: bool
    :rtype: pd.DataFrame
    """
    archs = archs or VARIANT_NAMES
    aggregators = aggregators or (None,) + AGGREGATORS
    recipes = recipes or RECIPES
    cells = [(a, g, r, s) for a in archs for g in aggregators for r in recipes for s in seeds]
    rows = []
    for arch, agg, recipe, seed in tqdm(cells, disable=not verbose, desc="cells"):
        model = build_classifier(arch, "volume" if agg else "slice", agg, seed)
        volumes = toy_volumes(seed)
        x = Tensor(np.stack([v.voxels[None] for v in volumes]), requires_grad=True)
        f = cell_loss_fn(model, volumes, LossConfig(recipe=recipe))
        err = grad_check(f, [x], step, n_coords=n_coords, coord_mode="largest", seed=seed)
        rows.append(
            {
                "arch": arch,
                "aggregator": agg or "slice",
                "recipe": recipe,
                "seed": seed,
                "max_rel_error": err,
            }
        )
    return pd.DataFrame(rows)

