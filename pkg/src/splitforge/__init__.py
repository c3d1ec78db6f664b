"""splitforge: split CNN blocks into narrow branches, fuse them back, and
measure what it costs.

The toolkit turns a plain convolutional architecture into a split variant
(per-block branch factors plus 1x1 fusion stages), analyzes parameters /
MACs / peak activation memory, verifies split-vs-original equivalence with
numeric oracles, and searches for the largest per-block factors that keep
accuracy within a threshold.
"""

from . import errors
from .arch import (Architecture, Block, ChannelSlice, ClassifierSpec, Concat,
                   Conv, Layer, Lineage, PoolLayer, PoolSpec, Relu,
                   ResidualAdd, arch_to_dict, builtin_architectures,
                   conv_chain, get_builtin, infer_shapes, load_architecture,
                   parse_architecture, resnet18_cifar, serialize_architecture,
                   two_layer_demo, validate, vgg16_cifar)
from .cost import (CostReport, MemoryStat, SweepGrid, analyze, count_macs,
                   count_params, params_closed_form_original,
                   params_closed_form_split, peak_memory, sweep_params)
from .data import (load_cifar10_binary, quadrant_energy_heuristic,
                   save_cifar10_binary, split_train_test,
                   synth_quadrant_dataset)
from .engine import (TrainConfig, WeightStore, adapt_weights, evaluate,
                     forward, init_weights, loss_and_grads,
                     softmax_cross_entropy, train)
from .oracle import (EmbeddingReport, EquivalenceReport, GradCheckReport,
                     check_equivalence, embed_block_diagonal,
                     finite_diff_check)
from .program import lower, schedule
from .search import (LADDER, ExternalEvaluator, InternalEvaluator,
                     SearchConfig, SearchResult, TableMockEvaluator,
                     TraceRecord, greedy_split_search, trace_table)
from .transform import (SplitPlan, apply_plan, fused_baseline, ideal_split,
                        naive_split, parse_plan, serialize_plan,
                        shared_split, split_transform)

__version__ = "0.1.0"

__all__ = [
    "Architecture", "Block", "ChannelSlice", "ClassifierSpec", "Concat",
    "Conv", "CostReport", "EmbeddingReport", "EquivalenceReport",
    "ExternalEvaluator", "GradCheckReport", "InternalEvaluator", "LADDER",
    "Layer", "Lineage", "MemoryStat", "PoolLayer", "PoolSpec", "Relu",
    "ResidualAdd", "SearchConfig", "SearchResult", "SplitPlan", "SweepGrid",
    "TableMockEvaluator", "TraceRecord", "TrainConfig", "WeightStore",
    "adapt_weights", "analyze", "apply_plan", "arch_to_dict",
    "builtin_architectures", "check_equivalence", "count_macs",
    "count_params", "embed_block_diagonal", "errors", "evaluate",
    "finite_diff_check", "forward", "fused_baseline", "get_builtin",
    "greedy_split_search", "ideal_split", "infer_shapes", "init_weights",
    "load_architecture", "load_cifar10_binary", "loss_and_grads", "lower",
    "naive_split", "params_closed_form_original", "params_closed_form_split",
    "parse_architecture", "parse_plan", "peak_memory",
    "quadrant_energy_heuristic", "resnet18_cifar", "save_cifar10_binary",
    "schedule", "serialize_architecture", "serialize_plan", "shared_split",
    "softmax_cross_entropy", "split_train_test", "split_transform",
    "sweep_params", "synth_quadrant_dataset", "trace_table", "train",
    "conv_chain", "two_layer_demo", "validate", "vgg16_cifar",
]
