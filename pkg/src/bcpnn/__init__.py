"""BCPNN: Bayesian Confidence Propagation Neural Network.

Unsupervised representation learning with local Bayesian-Hebbian trace
updates and structural plasticity, plus semi-supervised classifiers
(associative, Go/No-go, linear) and an MNIST evaluation harness.
"""

__version__ = "0.1.0"

from .core import (
    ActivityVector,
    BcpnnParams,
    LayerGeometry,
    ProbabilityTraces,
    Projection,
    SupportVector,
    derive_weights,
    normalize,
    support,
    trace_step,
)
from .plasticity import (
    ConnectivityMask,
    RewireSchedule,
    hc_mutual_information,
    init_mask,
    rewire,
)
from .data import (
    Dataset,
    EncodingMode,
    encode_image,
    encode_label,
    load_idx,
    save_idx,
    stratified_sample,
)
from .unsup import (
    RepresentationSet,
    UnsupConfig,
    UnsupModel,
    extract_representations,
    train_unsupervised,
)
from .classifiers import (
    AdamState,
    AssocClassifier,
    GoNogoClassifier,
    KappaPair,
    LinearClassifier,
    LinearHyperparams,
    adam_step,
    compute_kappas,
    predict,
    predict_batch,
    train_assoc,
    train_gonogo,
    train_linear,
)
from .harness import (
    ExperimentConfig,
    ExperimentRecord,
    GroupSummary,
    accuracy,
    aggregate,
    run_experiment,
)
from .persistence import (
    load_model,
    load_representations,
    save_model,
    save_representations,
)
