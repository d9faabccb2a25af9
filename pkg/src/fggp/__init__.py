"""Fixed-rate gradient-first gradual pruning on a small NumPy training substrate."""

from .netcore import (Batch, ConfigError, Conv2D, Flatten, FullyConnected, Network, OptimizerState, ReLU,
                      apply_lr_schedule, forward, init_params, loss_and_backward, sgd_step)
from .prune import (FGGP, Order, PruneEventRecord, PruneSchedule, Rate, SelectionPolicy, SparsityMask,
                    erk_allocate, pool_size, prune_event, scheduled_sparsity, select_prune_set,
                    sparse_init_mask, target_count)

__version__ = "0.1.0"
