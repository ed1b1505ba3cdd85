"""Weight-subset smoothing: distances, kernels, displacement sampling, losses.

The smoothed losses evaluate the network at its current weights plus ``y``
random displacements drawn inside a region around the current point, then
combine the per-point cross-entropies:

* ``plea_loss``  -- negative log of the mean of exponentiated negative
  losses (softmin-flavored; sharp hypercube sampling region).
* ``pla_loss``   -- plain arithmetic mean of the per-point losses.
* ``soft_plea_loss`` -- like ``plea_loss`` but with a finite-sharpness
  kernel: displaced terms carry an additive distance penalty, so points
  outside the soft support are exponentially discounted.
* ``kernel_averaged_loss`` -- arithmetic mean with multiplicative kernel
  weights on the displaced terms.

Displacements act only on the synaptic-weight coordinates selected by a
``WeightMask``; biases are never displaced. All combination arithmetic is
done in float64 regardless of the network dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .net import FlatGradient, Network

KERNEL_SHARP = "hypercube-sharp"
KERNEL_SOFT = "sigmoid-soft"
KERNEL_GAUSSIAN = "gaussian"

KERNEL_FAMILIES = (KERNEL_SHARP, KERNEL_SOFT, KERNEL_GAUSSIAN)


@dataclass(frozen=True)
class SmoothingSpec:
    """Smoothing region description: kernel family, size, and sample count.

    ``radius`` is the half-edge of the (soft) hypercube support;
    ``sharpness`` controls how steeply the soft kernel falls off at the
    boundary (infinite sharpness = hard indicator). ``gamma`` is the decay
    rate of the Gaussian variant. ``samples`` is the number of displaced
    evaluation points ``y``.
    """

    family: str = KERNEL_SHARP
    radius: float = 0.0
    sharpness: float = math.inf
    gamma: float = 0.0
    samples: int = 0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.samples < 0:
            raise ValueError("samples must be >= 0")
        if self.family in (KERNEL_SHARP, KERNEL_SOFT) and not self.radius > 0:
            raise ValueError(f"{self.family} kernel requires radius > 0")
        if self.family == KERNEL_SHARP and not math.isinf(self.sharpness):
            raise ValueError("hypercube-sharp kernel means infinite sharpness")
        if self.family == KERNEL_SOFT:
            if math.isinf(self.sharpness) or not self.sharpness > 0:
                raise ValueError("sigmoid-soft kernel requires finite sharpness > 0")
        if self.family == KERNEL_GAUSSIAN and self.gamma < 0:
            raise ValueError("gaussian kernel requires gamma >= 0")

    @classmethod
    def sharp(cls, radius, samples):
        return cls(KERNEL_SHARP, radius=radius, samples=samples)

    @classmethod
    def soft(cls, radius, sharpness, samples):
        return cls(KERNEL_SOFT, radius=radius, sharpness=sharpness, samples=samples)

    @classmethod
    def gaussian(cls, gamma, samples=0):
        return cls(KERNEL_GAUSSIAN, gamma=gamma, samples=samples)


class WeightMask:
    """Boolean indicator over the N flat synaptic-weight coordinates."""

    def __init__(self, active):
        self.active = np.ascontiguousarray(active, dtype=bool)
        if self.active.ndim != 1:
            raise ValueError("mask must be a 1-D boolean vector")
        self.active_count = int(self.active.sum())

    @classmethod
    def from_layers(cls, net: Network, layers) -> "WeightMask":
        """Mask selecting whole layers, given 1-based parameterized-layer ordinals."""
        active = np.zeros(net.n_weights, dtype=bool)
        for ordinal in layers:
            if ordinal not in net.weight_index:
                valid = sorted(net.weight_index)
                raise ValueError(
                    f"layer {ordinal} has no smoothable weights "
                    f"(parameterized layer ordinals are {valid})"
                )
            active[net.weight_index[ordinal]] = True
        return cls(active)

    @classmethod
    def all_weights(cls, net: Network) -> "WeightMask":
        return cls(np.ones(net.n_weights, dtype=bool))

    def __len__(self):
        return self.active.size

    def __repr__(self):
        return f"WeightMask({self.active_count}/{self.active.size} active)"


# ---------------------------------------------------------------------------
# Distances and kernels (act on the active-coordinate values of a displacement)
# ---------------------------------------------------------------------------


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def soft_distance(delta, radius, sharpness) -> float:
    """Additive sigmoid-wall distance of a displacement from the origin.

    Flat (nearly zero) inside ``[-radius, radius]`` per coordinate, rising
    linearly with slope ~2*sharpness outside. Symmetric under delta -> -delta.
    """
    d = np.asarray(delta, dtype=np.float64)
    k2 = 2.0 * sharpness
    terms = _log_sigmoid(k2 * (radius - d)) + _log_sigmoid(k2 * (radius + d))
    return float(-terms.sum())


def gaussian_distance(delta, gamma) -> float:
    """Quadratic distance (gamma/2)*||delta||^2."""
    d = np.asarray(delta, dtype=np.float64)
    return float(0.5 * gamma * np.dot(d, d))


def sharp_kernel(delta, radius) -> float:
    """Hypercube indicator: 1 strictly inside, 0 outside.

    Boundary coordinates (|delta_i| == radius) contribute a factor 1/2,
    matching the infinite-sharpness limit of the sigmoid kernel.
    """
    d = np.abs(np.asarray(delta, dtype=np.float64))
    if np.any(d > radius):
        return 0.0
    return float(0.5 ** np.count_nonzero(d == radius))


def distance(spec: SmoothingSpec, delta) -> float:
    """Distance of a displacement under the spec's kernel family."""
    if spec.family == KERNEL_SOFT:
        return soft_distance(delta, spec.radius, spec.sharpness)
    if spec.family == KERNEL_GAUSSIAN:
        return gaussian_distance(delta, spec.gamma)
    k = sharp_kernel(delta, spec.radius)
    return math.inf if k == 0.0 else -math.log(k)


def kernel(spec: SmoothingSpec, delta) -> float:
    """Kernel value exp(-distance) of a displacement."""
    if spec.family == KERNEL_SHARP:
        return sharp_kernel(delta, spec.radius)
    return math.exp(-distance(spec, delta))


def restricted_distance(spec: SmoothingSpec, mask: WeightMask, delta_full) -> float:
    """Distance of the projection of a full-length displacement onto the mask.

    Coordinates outside ``mask.active`` have no effect on the value.
    """
    delta_full = np.asarray(delta_full)
    if delta_full.shape != (len(mask),):
        raise ValueError(f"expected displacement of length {len(mask)}, got {delta_full.shape}")
    return distance(spec, delta_full[mask.active])


def restricted_kernel(spec: SmoothingSpec, mask: WeightMask, delta_full) -> float:
    delta_full = np.asarray(delta_full)
    if delta_full.shape != (len(mask),):
        raise ValueError(f"expected displacement of length {len(mask)}, got {delta_full.shape}")
    return kernel(spec, delta_full[mask.active])


def kernel_curve(radius, sharpness, deltas):
    """1-D section of the soft distance and kernel along one coordinate.

    Returns ``(distances, kernel_values)`` evaluated at each scalar in
    ``deltas`` with a single active coordinate.
    """
    deltas = np.asarray(deltas, dtype=np.float64)
    k2 = 2.0 * sharpness
    d = -(_log_sigmoid(k2 * (radius - deltas)) + _log_sigmoid(k2 * (radius + deltas)))
    return d, np.exp(-d)


# ---------------------------------------------------------------------------
# Displacement sampling
# ---------------------------------------------------------------------------


def sample_displacements(mask: WeightMask, spec: SmoothingSpec, rng, count=None):
    """Draw displacement vectors, one per row, zero outside the mask.

    Sharp family: active coordinates uniform on [-R, R] (the kernel's exact
    support). Soft family: uniform on [-2R, 2R], twice the nominal radius,
    so the kernel's soft tails are actually explored; the kernel factor is
    applied in the loss, not here.
    """
    y = spec.samples if count is None else int(count)
    if spec.family == KERNEL_SHARP:
        half = spec.radius
    elif spec.family == KERNEL_SOFT:
        half = 2.0 * spec.radius
    else:
        raise ValueError(f"displacement sampling is not defined for {spec.family!r}")
    out = np.zeros((y, len(mask)), dtype=np.float64)
    if y and mask.active_count:
        idx = np.flatnonzero(mask.active)
        out[:, idx] = rng.uniform(-half, half, size=(y, idx.size))
    return out


# ---------------------------------------------------------------------------
# Smoothed losses
# ---------------------------------------------------------------------------


def _displaced_evaluations(net, batch, labels, displacements):
    """Loss/gradient at the center and at each displaced weight vector."""
    w0 = net.flat_weights()
    losses = []
    grads = []
    loss0, grad0 = net.backward(batch, labels)
    losses.append(loss0)
    grads.append(grad0)
    base = w0.astype(np.float64)
    try:
        for delta in displacements:
            net.set_flat_weights((base + delta).astype(net.dtype))
            loss_a, grad_a = net.backward(batch, labels)
            losses.append(loss_a)
            grads.append(grad_a)
    finally:
        net.set_flat_weights(w0)
    return losses, grads


def _combine_grads(coeffs, grads, dtype):
    """Linear combination of FlatGradients, accumulated in float64."""
    wacc = np.zeros(grads[0].wgrad.shape, dtype=np.float64)
    bacc = np.zeros(grads[0].bgrad.shape, dtype=np.float64)
    for c, g in zip(coeffs, grads):
        wacc += c * g.wgrad
        bacc += c * g.bgrad
    return FlatGradient(wacc.astype(dtype), bacc.astype(dtype))


def log_mean_exp_combine(losses, penalties=None):
    """-log mean exp(-loss - penalty) with softmin point weights.

    Returns ``(combined_loss, weights)`` where ``weights`` are the exact
    derivative coefficients of the combined loss with respect to each
    per-point loss (they sum to 1).
    """
    scores = -np.asarray(losses, dtype=np.float64)
    if penalties is not None:
        scores = scores - np.asarray(penalties, dtype=np.float64)
    m = scores.max()
    log_sum = m + np.log(np.exp(scores - m).sum())
    weights = np.exp(scores - log_sum)
    return float(np.log(len(scores)) - log_sum), weights


def _check_sampling_spec(spec, expected_family, op):
    if spec.family != expected_family:
        raise ValueError(f"{op} requires the {expected_family!r} kernel family, got {spec.family!r}")


def plea_loss(net, batch, labels, mask, spec, rng, displacements=None):
    """Exponential-average smoothed loss over the center plus y sampled points.

    Sharp-kernel (infinite sharpness) variant: displaced points are drawn
    uniformly from the masked hypercube and enter with no penalty. With
    ``samples == 0`` this is exactly the cross-entropy loss and gradient.
    """
    _check_sampling_spec(spec, KERNEL_SHARP, "plea_loss")
    if displacements is None:
        displacements = sample_displacements(mask, spec, rng)
    losses, grads = _displaced_evaluations(net, batch, labels, displacements)
    loss, weights = log_mean_exp_combine(losses)
    return loss, _combine_grads(weights, grads, net.dtype)


def pla_loss(net, batch, labels, mask, spec, rng, displacements=None):
    """Arithmetic-average smoothed loss over the center plus y sampled points.

    The gradient is the mean (never the sum) of the per-point gradients, so
    sampling does not amplify the effective learning rate.
    """
    _check_sampling_spec(spec, KERNEL_SHARP, "pla_loss")
    if displacements is None:
        displacements = sample_displacements(mask, spec, rng)
    losses, grads = _displaced_evaluations(net, batch, labels, displacements)
    n = len(losses)
    loss = float(np.asarray(losses, dtype=np.float64).sum() / n)
    return loss, _combine_grads(np.full(n, 1.0 / n), grads, net.dtype)


def soft_plea_loss(net, batch, labels, mask, spec, rng, displacements=None):
    """Finite-sharpness exponential average: displaced terms carry an
    additive distance penalty exp(-L - d), the center term none.

    The penalty is constant in the weights for a fixed draw, so the exact
    gradient is the softmin-weighted combination of per-point gradients.
    """
    _check_sampling_spec(spec, KERNEL_SOFT, "soft_plea_loss")
    if displacements is None:
        displacements = sample_displacements(mask, spec, rng)
    losses, grads = _displaced_evaluations(net, batch, labels, displacements)
    penalties = np.zeros(len(losses))
    for a, delta in enumerate(displacements, start=1):
        penalties[a] = restricted_distance(spec, mask, delta)
    loss, weights = log_mean_exp_combine(losses, penalties)
    return loss, _combine_grads(weights, grads, net.dtype)


def kernel_averaged_loss(net, batch, labels, mask, spec, rng, displacements=None):
    """Arithmetic average with multiplicative kernel weights on displaced terms.

    Works for both kernel families; with the sharp kernel the sampled points
    all lie inside the support (weight 1), so this reduces to ``pla_loss``
    in distribution.
    """
    if spec.family not in (KERNEL_SHARP, KERNEL_SOFT):
        raise ValueError(f"kernel_averaged_loss requires a hypercube kernel, got {spec.family!r}")
    if displacements is None:
        displacements = sample_displacements(mask, spec, rng)
    losses, grads = _displaced_evaluations(net, batch, labels, displacements)
    n = len(losses)
    coeffs = np.empty(n)
    coeffs[0] = 1.0 / n
    for a, delta in enumerate(displacements, start=1):
        coeffs[a] = restricted_kernel(spec, mask, delta) / n
    loss = float(sum(l * c for l, c in zip(losses, coeffs)))
    return loss, _combine_grads(coeffs, grads, net.dtype)


LOSS_KINDS = ("ce", "pla", "plea", "plea-soft")


def make_loss_fn(kind, mask=None, spec=None):
    """Build a ``loss_fn(net, batch, labels, rng) -> (loss, FlatGradient)``.

    ``kind`` is one of ``ce``, ``pla``, ``plea``, ``plea-soft``; all but
    ``ce`` require a mask and smoothing spec.
    """
    if kind == "ce":
        return lambda net, batch, labels, rng=None: net.backward(batch, labels)
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    if mask is None or spec is None:
        raise ValueError(f"loss kind {kind!r} requires a mask and a smoothing spec")
    fn = {"pla": pla_loss, "plea": plea_loss, "plea-soft": soft_plea_loss}[kind]
    return lambda net, batch, labels, rng: fn(net, batch, labels, mask, spec, rng)
