"""Contrastive task-specialization of sentence embeddings for crisis
information-type classification: pair generation from label supervision,
a contrastively trained specialization head over frozen base embeddings,
a frozen-embedding MLP classifier, and the within-corpus, cross-corpus,
and cross-lingual evaluation protocols."""

from .corpus import (
    Corpus,
    Ontology,
    Post,
    filter_labels,
    load_corpus,
    load_ontology,
    map_to_relevancy,
    save_corpus,
    select_top_events,
)
from .encoder import (
    EmbeddingMatrix,
    EncoderBackend,
    HttpEncoderBackend,
    embed_corpus,
    load_embeddings,
    save_embeddings,
)
from .classify import (
    ClassifierConfig,
    MlpClassifier,
    predict_multiclass,
    predict_multilabel,
    train_classifier,
)
from .experiments import (
    CrossLingualConfig,
    ExperimentConfig,
    Report,
    ReportRow,
    render_report,
    run_cross_corpus,
    run_cross_lingual,
    run_within_corpus,
    write_report_files,
)
from .metrics import (
    RunRecord,
    aggregate,
    f1_scores,
    paired_permutation_test,
    random_baseline,
)
from .pairgen import (
    PairGenConfig,
    PairSet,
    generate_pairs_multiclass,
    generate_pairs_multilabel,
)
from .specialize import (
    CtsConfig,
    SpecializationHead,
    contrastive_loss,
    head_encode,
    init_head,
    ocl_select_hard,
    pair_distances,
    specialize,
)
from .splits import (
    FoldPlan,
    kfold_disjoint_events,
    sample_low_resource,
    validation_split,
)

__version__ = "0.1.0"
