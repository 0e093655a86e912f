"""awtlab: a desk-scale laboratory for transferable adversarial attacks.

Everything runs on small self-trained glyph classifiers with a float64
numpy core, so every published effect here can be reproduced in minutes
on one machine: gradient-based transfer attacks including surrogate
weight tuning, a parameter-noise transferability score, and the
supporting flatness analyses.
"""

from .attacks import (
    AdversarialBatch,
    AttackConfig,
    METHODS,
    ascent_descent_step,
    awt_tune,
    load_batch,
    momentum_update,
    neighborhood_grad,
    project_ball,
    run_attack,
    save_batch,
)
from .errors import (
    AttackError,
    AwtlabError,
    ConfigError,
    CorruptCheckpointError,
    FormatError,
    LabelError,
    NonFiniteError,
    ShapeError,
    TrainingDivergedError,
)
from .glyphs import Dataset, gen_glyphs, load_dataset, save_dataset
from .gradcheck import central_difference, fd_gradient, fd_gradient_at
from .harness import (
    ExperimentConfig,
    emit_report,
    load_config,
    parse_config,
    run_experiment,
)
from .metrics import (
    GradNormProfile,
    ResidualSearchResult,
    TransferReport,
    attack_success_rate,
    correlation,
    empirical_transfer_gap,
    grad_norm_profile,
    pearson,
    per_sample_transfer_score,
    residual_search,
    spearman,
    transfer_score,
)
from .nn import (
    AvgPool2,
    Conv3x3,
    Dense,
    DualGradient,
    Flatten,
    Model,
    ParamSet,
    Relu,
    cross_entropy,
    forward,
    grad_dual,
    init_model,
    input_grad,
    model_hash,
    perturb_params,
)
from .seeding import derive_seed, fnv1a64
from .zoo import (
    ARCH_TAGS,
    Checkpoint,
    TrainConfig,
    TrainMetrics,
    accuracy,
    build_model,
    load_checkpoint,
    make_checkpoint,
    prediction_disagreement,
    save_checkpoint,
    train_model,
)

__version__ = "0.1.0"
