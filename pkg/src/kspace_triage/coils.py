"""Multi-coil combination: root-sum-of-squares images and emulated single coil k-space.

The ESC variant here fits one global complex weight per coil. The weights
minimize the least-squares gap between the combined image and a target made of
the RSS magnitude with the phase of the uniform-weight combination.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .spectral import kspace_to_image


def _check_stack(stack):
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ShapeError(f"coil stack must be (n_coils, rows, cols), got {stack.shape}")
    return stack


def coil_images(stack):
    """Per-coil complex images of a DC-centered coil stack."""
    return kspace_to_image(_check_stack(stack).astype(np.complex128))


def rss_combine(stack):
    """sqrt(sum_j |F^-1(x_j)|^2) per pixel."""
    images = coil_images(stack)
    return np.sqrt(np.sum(images.real ** 2 + images.imag ** 2, axis=0))


@dataclass
class EscResult:
    kspace: np.ndarray
    weights: np.ndarray
    fallback: bool = False
    rank_deficient: bool = False
    notes: list = field(default_factory=list)


def esc_combine(stack, return_info=False):
    """Emulated single coil k-space, sum_j w_j x_j.

    Returns the combined DC-centered k-space, or an :class:`EscResult` with the
    weights and fallback flags when ``return_info`` is set.
    """
    stack = _check_stack(stack).astype(np.complex128)
    n_coils = stack.shape[0]
    images = kspace_to_image(stack)
    rss = np.sqrt(np.sum(np.abs(images) ** 2, axis=0))
    uniform = np.full(n_coils, 1.0 / n_coils, dtype=np.complex128)
    phase = np.exp(1j * np.angle(np.tensordot(uniform, images, axes=1)))
    target = (rss * phase).ravel()
    design = images.reshape(n_coils, -1).T

    result = EscResult(kspace=None, weights=uniform)
    weights, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < n_coils:
        # minimum-norm solution is still exact for e.g. identical coils
        result.rank_deficient = True
        result.notes.append(f"design rank {rank} < {n_coils} coils")
    if not np.all(np.isfinite(weights)) or not np.any(weights):
        result.fallback = True
        result.notes.append("singular least-squares system; using uniform weights")
        weights = uniform
    result.weights = weights
    result.kspace = np.tensordot(weights, stack, axes=1)
    return result if return_info else result.kspace
