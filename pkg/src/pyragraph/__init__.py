"""Multi-magnification pyramidal graph classifier for slide-level labels.

Builds a structured graph over three index-aligned embedding blocks per
slide (intra-magnification cliques plus cross-magnification chains), runs a
small GCN classifier with hand-written exact gradients over it, and ships the
surrounding experiment harness: training with group-aware cross-validation,
convergence measurements, node-drop and magnification ablations, and
gradient-energy magnification attribution.
"""

__version__ = "0.1.0"

from .graphs import (
    ALL_LEVELS,
    EmbeddingPyramid,
    LEVEL_NAMES,
    PyramidGraph,
    Topology,
    build_graph,
    explicit_edges,
)
from .model import (
    ForwardTrace,
    ModelConfig,
    ModelParams,
    backward,
    count_params,
    forward,
    gcn_layer_forward,
    init_params,
    load_checkpoint,
    logit_input_gradient,
    loss_from_trace,
    save_checkpoint,
    zero_params,
)
from .metrics import (
    argmax_predict,
    balanced_accuracy,
    confusion_matrix,
    macro_f1,
    weighted_f1,
)
from .training import (
    Adam,
    EvalReport,
    EvalRun,
    FoldAssignment,
    TrainConfig,
    cross_validate,
    evaluate,
    group_kfold,
    make_class_weights,
    predict,
    train,
)
from .dataio import (
    GraphDataset,
    Manifest,
    SynthSpec,
    build_dataset,
    dataset_fingerprint,
    generate_synthetic,
    load_manifest,
    permute_labels,
    read_pyramid,
    write_dataset,
    write_pyramid,
)
from .convergence import (
    ConvergenceReport,
    SpreadResult,
    bounded_random_params,
    convergence_sweep,
    measure_spread,
    random_bounded_pyramid,
)
from .ablation import (
    MonteCarloPlan,
    MonteCarloRow,
    drop_triplets,
    magnification_test,
    mask_levels,
    monte_carlo_test,
)
from .consultation import (
    ConsultationRecord,
    analyze_slide,
    consultation_histogram,
    consulted_set,
    gradient_energy,
    occlude_levels,
)
