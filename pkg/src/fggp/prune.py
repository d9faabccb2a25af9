"""Gradual pruning: cubic schedule, two-stage top-K selection, ERK masks."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .netcore import DTYPE, ConfigError, Conv2D, FullyConnected, Network, OptimizerState

# Guards floor() against products like 0.29 * 100 == 28.999999999999996.
_FLOOR_EPS = 1e-9


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PruneSchedule:
    s_ini: float
    s_fin: float
    t_ini: int
    t_fin: int
    delta_t: int

    def __post_init__(self):
        if not 0.0 <= self.s_ini < 1.0:
            raise ConfigError(f"s_ini must be in [0, 1), got {self.s_ini}")
        if not self.s_ini < self.s_fin < 1.0:
            raise ConfigError(f"s_fin must be in (s_ini, 1), got {self.s_fin}")
        if self.t_fin <= self.t_ini:
            raise ConfigError(f"t_fin ({self.t_fin}) must exceed t_ini ({self.t_ini})")
        if self.delta_t < 1:
            raise ConfigError(f"delta_t must be positive, got {self.delta_t}")

    def event_times(self) -> list[int]:
        """Iterations at which prune events fire: multiples of delta_t in
        ``(t_ini, t_fin]`` plus ``t_fin`` itself, so the schedule always lands."""
        first = (self.t_ini // self.delta_t + 1) * self.delta_t
        times = list(range(first, self.t_fin + 1, self.delta_t))
        if not times or times[-1] != self.t_fin:
            times.append(self.t_fin)
        return times


def scheduled_sparsity(sched: PruneSchedule, t: int) -> float:
    """Cubic sparsity law; exact at both ends, held at ``s_fin`` past ``t_fin``."""
    if t < sched.t_ini:
        raise ValueError(f"t={t} precedes t_ini={sched.t_ini}")
    if t == sched.t_ini:
        return sched.s_ini
    if t >= sched.t_fin:
        return sched.s_fin
    frac = (t - sched.t_ini) / (sched.t_fin - sched.t_ini)
    return sched.s_fin + (sched.s_ini - sched.s_fin) * (1.0 - frac) ** 3


def target_count(sched: PruneSchedule, t: int, n_dense: int) -> int:
    if n_dense <= 0:
        raise ValueError("n_dense must be positive")
    return round_half_up((1.0 - scheduled_sparsity(sched, t)) * n_dense)


class Order(str, Enum):
    GRADIENT_FIRST = "gradient_first"
    MAGNITUDE_FIRST = "magnitude_first"


class Rate(str, Enum):
    FIXED = "fixed"
    COSINE = "cosine"
    # Pool = n_prune + floor(p * n_target), p cosine-annealed.
    GRANET_ABSOLUTE = "granet_absolute"


@dataclass(frozen=True)
class SelectionPolicy:
    order: Order = Order.GRADIENT_FIRST
    rate: Rate = Rate.FIXED
    r: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "order", Order(self.order))
        object.__setattr__(self, "rate", Rate(self.rate))
        if not 0.0 < self.r <= 1.0:
            raise ConfigError(f"rate r must be in (0, 1], got {self.r}")

    @property
    def label(self) -> str:
        arrow = "g->theta" if self.order is Order.GRADIENT_FIRST else "theta->g"
        return f"({arrow}, {self.rate.value}, r={self.r:g})"


FGGP = SelectionPolicy(Order.GRADIENT_FIRST, Rate.FIXED, 0.5)


def cosine_rate(r_ini: float, t: int, t_ini: int, t_fin: int) -> float:
    progress = min(max((t - t_ini) / (t_fin - t_ini), 0.0), 1.0)
    return r_ini * (1.0 + math.cos(math.pi * progress)) / 2.0


def pool_size(policy: SelectionPolicy, n_active: int, n_prune: int, t: int, t_ini: int, t_fin: int,
              n_target: int | None = None) -> int:
    """Number of candidates admitted from the first ranking stage.

    Clamped to ``[n_prune, n_active]`` so the second stage can always
    supply ``n_prune`` parameters.
    """
    if not 0 < n_prune <= n_active:
        raise ValueError(f"need 0 < n_prune ({n_prune}) <= n_active ({n_active})")
    if policy.rate is Rate.FIXED:
        pool = math.floor(policy.r * n_active + _FLOOR_EPS)
    elif policy.rate is Rate.COSINE:
        pool = math.floor(cosine_rate(policy.r, t, t_ini, t_fin) * n_active + _FLOOR_EPS)
    else:
        if n_target is None:
            n_target = n_active - n_prune
        p = cosine_rate(policy.r, t, t_ini, t_fin)
        pool = n_prune + math.floor(p * n_target + _FLOOR_EPS)
    return min(max(pool, n_prune), n_active)


def select_prune_set(theta_abs: np.ndarray, grad_abs: np.ndarray, n_prune: int, pool: int,
                     order: Order | str = Order.GRADIENT_FIRST,
                     indices: np.ndarray | None = None) -> np.ndarray:
    """Two-stage ascending top-K selection.

    Stage one keeps the ``pool`` entries with the smallest first key
    (``|g|`` for gradient-first, ``|theta|`` for magnitude-first); stage two
    takes the ``n_prune`` smallest second-key entries among those. Equal keys
    are ordered by ascending global index.

    Args:
        theta_abs: ``|theta|`` of the active parameters.
        grad_abs: ``|g|`` aligned with ``theta_abs``.
        n_prune: How many parameters to remove.
        pool: Stage-one subset size.
        order: ``Order`` or its string value.
        indices: Global indices of the entries; defaults to ``arange(n)``.

    Returns:
        Sorted global indices of the ``n_prune`` selected parameters.
    """
    theta_abs = np.asarray(theta_abs)
    grad_abs = np.asarray(grad_abs)
    n_active = theta_abs.shape[0]
    if grad_abs.shape != theta_abs.shape:
        raise ValueError("theta_abs and grad_abs must be aligned")
    if indices is None:
        indices = np.arange(n_active, dtype=np.int64)
    if n_prune > n_active:
        raise ValueError(f"n_prune ({n_prune}) exceeds active count ({n_active})")
    if not n_prune <= pool <= n_active:
        raise ValueError(f"need n_prune ({n_prune}) <= pool ({pool}) <= n_active ({n_active})")
    if n_prune <= 0:
        return np.empty(0, dtype=np.int64)

    if Order(order) is Order.GRADIENT_FIRST:
        first, second = grad_abs, theta_abs
    else:
        first, second = theta_abs, grad_abs
    stage1 = np.lexsort((indices, first))[:pool]
    stage2 = stage1[np.lexsort((indices[stage1], second[stage1]))[:n_prune]]
    return np.sort(indices[stage2])


class SparsityMask:
    """Binary keep/prune state over the flat parameter vector.

    Bits only ever go from 1 to 0. ``values`` is the float64 view that the
    training substrate multiplies into the parameters.
    """

    def __init__(self, bits: np.ndarray):
        self.bits = np.asarray(bits, dtype=bool).copy()
        self.values = self.bits.astype(DTYPE)
        self.active_count = int(self.bits.sum())

    @classmethod
    def dense(cls, n: int) -> "SparsityMask":
        return cls(np.ones(n, dtype=bool))

    def __len__(self) -> int:
        return self.bits.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype, copy=False)

    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def clear(self, indices: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size == 0:
            return
        if not self.bits[indices].all():
            raise ValueError("attempt to prune an already pruned parameter")
        self.bits[indices] = False
        self.values[indices] = 0.0
        self.active_count -= int(np.unique(indices).size)

    @property
    def sparsity(self) -> float:
        return 1.0 - self.active_count / self.bits.size


@dataclass
class PruneEventRecord:
    t: int
    n_before: int
    n_target: int
    n_pruned: int
    pool_size: int
    per_layer_pruned: list[tuple[int, int]] = field(default_factory=list)

    def to_json(self) -> str:
        rec = asdict(self)
        rec["per_layer_pruned"] = [list(p) for p in self.per_layer_pruned]
        return json.dumps({"type": "prune", **rec}, sort_keys=True)


def prune_event(net: Network, mask: SparsityMask, sched: PruneSchedule, policy: SelectionPolicy, t: int,
                opt: OptimizerState | None = None) -> PruneEventRecord:
    """Bring the active count down to the scheduled target at iteration ``t``.

    Selection pools every active parameter of every layer. ``net.grads``
    must come from a fresh ``loss_and_backward`` on the current minibatch;
    staleness cannot be detected here. Pruned entries have their value,
    gradient and momentum buffer zeroed.
    """
    n_before = mask.active_count
    n_target = min(target_count(sched, t, mask.bits.size), n_before)
    n_prune = n_before - n_target
    if n_prune <= 0:
        return PruneEventRecord(t, n_before, n_before, 0, 0, [])

    active = mask.active_indices()
    pool = pool_size(policy, n_before, n_prune, t, sched.t_ini, sched.t_fin, n_target)
    chosen = select_prune_set(np.abs(net.params[active]), np.abs(net.grads[active]),
                              n_prune, pool, policy.order, indices=active)
    mask.clear(chosen)
    net.params[chosen] = 0.0
    net.grads[chosen] = 0.0
    if opt is not None:
        opt.momentum_buffers[chosen] = 0.0

    bounds = net.layer_bounds()
    counts = np.bincount(np.searchsorted(bounds, chosen, side="right") - 1, minlength=len(bounds) - 1)
    layer_ids = net.trainable_layers
    per_layer = [(layer_ids[i], int(c)) for i, c in enumerate(counts) if c]
    return PruneEventRecord(t, n_before, n_target, int(chosen.size), pool, per_layer)


def erk_ratio(layer: FullyConnected | Conv2D) -> float:
    """Unscaled ERK density: fan sums over the product of dimensions."""
    if isinstance(layer, Conv2D):
        dims = (layer.in_channels, layer.out_channels, layer.kernel_h, layer.kernel_w)
    elif isinstance(layer, FullyConnected):
        dims = (layer.in_features, layer.out_features)
    else:
        raise TypeError(f"{type(layer).__name__} has no ERK ratio")
    return sum(dims) / math.prod(dims)


def erk_allocate(layers: Sequence, s_ini: float) -> list[float]:
    """Per-trainable-layer keep densities with ``sum(d_l * n_l) == round((1 - s_ini) * N)``.

    Densities are proportional to ``erk_ratio``; layers that would exceed
    density 1 are capped and the remaining budget spread over the rest
    until nothing exceeds 1.
    """
    if not 0.0 < s_ini < 1.0:
        raise ConfigError(f"s_ini must be in (0, 1), got {s_ini}")
    trainable = [layer for layer in layers if layer.trainable]
    if not trainable:
        raise ConfigError("no trainable layers")
    sizes = np.array([layer.n_params for layer in trainable], dtype=DTYPE)
    raw = np.array([erk_ratio(layer) for layer in trainable], dtype=DTYPE)
    budget = round_half_up((1.0 - s_ini) * sizes.sum())
    if budget <= 0:
        raise ConfigError(f"s_ini={s_ini} leaves no parameters")

    capped = np.zeros(len(trainable), dtype=bool)
    while True:
        free = ~capped
        if not free.any():
            raise ConfigError("ERK budget infeasible")
        scale = (budget - sizes[capped].sum()) / (raw[free] * sizes[free]).sum()
        over = free & (scale * raw > 1.0)
        if not over.any():
            break
        capped |= over
    density = np.where(capped, 1.0, scale * raw)
    return [float(d) for d in density]


def sparse_init_mask(net: Network, densities: Sequence[float], seed: int) -> SparsityMask:
    """Random mask keeping ``round(d_l * n_l)`` entries in each layer.

    The rounding residue against the global budget is absorbed by the
    largest layer.
    """
    sizes = [net.slices[i].stop - net.slices[i].start for i in net.trainable_layers]
    if len(densities) != len(sizes):
        raise ConfigError(f"{len(densities)} densities for {len(sizes)} trainable layers")
    budget = round_half_up(sum(d * n for d, n in zip(densities, sizes)))
    kept = [round_half_up(d * n) for d, n in zip(densities, sizes)]
    largest = int(np.argmax(sizes))
    kept[largest] = min(max(kept[largest] + budget - sum(kept), 0), sizes[largest])

    rng = np.random.default_rng(seed)
    bits = np.zeros(net.n_params, dtype=bool)
    for layer_idx, n, k in zip(net.trainable_layers, sizes, kept):
        start = net.slices[layer_idx].start
        if k == n:
            bits[start: start + n] = True
        else:
            bits[start + rng.choice(n, size=k, replace=False)] = True
    return SparsityMask(bits)
