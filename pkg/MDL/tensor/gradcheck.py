"""Finite-difference oracle for autodiff gradients."""
import logging
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .tensor import Tensor, no_grad, track_branches

logger = logging.getLogger(__name__)


class KinkError(RuntimeError):
    """Inputs could not be drawn away from non-differentiable points."""


def relative_error(ad: float, fd: float) -> float:
    """``|ad - fd| / max(1e-8, |ad| + |fd|)``."""
    return abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))


def _scalar(out: Tensor) -> Tensor:
    if not isinstance(out, Tensor) or out.size != 1:
        shape = out.shape if isinstance(out, Tensor) else type(out)
        raise ValueError(f"grad_check needs a scalar-valued function, got {shape}.")
    return out


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-4,
    n_coords: int = None,
    coord_mode: str = "random",
    seed: int = 0,
    max_resample: int = 20,
) -> float:
    """Compare autodiff gradients of ``f(*inputs)`` with central differences.

    A coordinate whose perturbation flips any non-smooth decision (ReLU mask,
    argmax pick, mining choice) is skipped and replaced by another one.

    :param f: Scalar-valued function of the inputs.
    :type f: Callable[..., Tensor]
    :param inputs: Tensors to differentiate; must have ``requires_grad``.
    :type inputs: Sequence[Tensor]
    :param step: Half-width h of the central difference.
    :type step: float
    :param n_coords: Number of coordinates to check; all when None.
    :type n_coords: int
    :param coord_mode: 'random' or 'largest' (largest |autodiff| entries).
    :type coord_mode: str
    :param seed: Seed for coordinate sampling.
    :type seed: int
    :param max_resample: Replacement budget per skipped coordinate.
    :type max_resample: int
    :rtype: float
    """
    for t in inputs:
        t.grad = None
    with track_branches() as base:
        out = _scalar(f(*inputs))
    out.backward()
    ad = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]

    coords = [(i, j) for i, t in enumerate(inputs) for j in range(t.size)]
    rng = np.random.default_rng(seed)
    if n_coords is None or n_coords >= len(coords):
        queue = coords
        spare: List[Tuple[int, int]] = []
    elif coord_mode == "largest":
        order = sorted(coords, key=lambda c: -abs(ad[c[0]].reshape(-1)[c[1]]))
        queue, spare = order[:n_coords], order[n_coords : n_coords * (1 + max_resample)]
    elif coord_mode == "random":
        perm = rng.permutation(len(coords))
        picked = [coords[k] for k in perm]
        queue, spare = picked[:n_coords], picked[n_coords : n_coords * (1 + max_resample)]
    else:
        raise ValueError(f"Unknown coord_mode '{coord_mode}'.")

    worst = 0.0
    skipped = 0
    pending = list(queue)
    while pending:
        i, j = pending.pop(0)
        flat = inputs[i].data.reshape(-1)
        orig = flat[j]
        values = []
        smooth = True
        for sign in (1.0, -1.0):
            flat[j] = orig + sign * step
            with no_grad(), track_branches() as tracker:
                values.append(_scalar(f(*inputs)).item())
            smooth = smooth and tracker.digest == base.digest
        flat[j] = orig
        if not smooth:
            skipped += 1
            if spare:
                pending.append(spare.pop(0))
            continue
        fd = (values[0] - values[1]) / (2 * step)
        worst = max(worst, relative_error(float(ad[i].reshape(-1)[j]), fd))
    if skipped:
        logger.debug("grad_check skipped %d coordinate(s) at kinks.", skipped)
    return worst


def sample_away_from_kinks(
    make_inputs: Callable[[np.random.Generator], Sequence[Tensor]],
    f: Callable[..., Tensor],
    seed: int = 0,
    step: float = 1e-4,
    max_tries: int = 100,
) -> Sequence[Tensor]:
    """Redraw inputs until every ReLU/clip input is farther than ``10 * step`` from its kink.

    :param make_inputs: Draws a fresh input list from a generator.
    :type make_inputs: Callable[[np.random.Generator], Sequence[Tensor]]
    :param f: Function under test.
    :type f: Callable[..., Tensor]
    :param seed: Seed of the generator.
    :type seed: int
    :param step: Finite-difference step.
    :type step: float
    :param max_tries: Redraw budget.
    :type max_tries: int
    :rtype: Sequence[Tensor]
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        inputs = make_inputs(rng)
        with no_grad(), track_branches() as tracker:
            f(*inputs)
        if tracker.min_margin > 10 * step:
            return inputs
    raise KinkError(f"No input draw cleared the kink margin {10 * step} in {max_tries} tries.")
