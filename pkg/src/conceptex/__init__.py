"""Concept extraction with taxonomy-derived topic prompts.

Pipeline: ingest KG records, induce a topic taxonomy from typical-concept
overlap, train a from-scratch topic classifier, train a prompt-augmented
pointer-network span extractor, score runs and measure concept bias. A
companion module verifies the frontdoor/backdoor adjustment identities on
discrete SCMs.
"""

__version__ = "0.1.0"

from .corpus import DatasetSplit, EntityRecord, InputText, build_input, ingest, make_splits
from .taxonomy import (
    ConceptNode,
    SimilarityMatrix,
    Taxonomy,
    build_similarity_matrix,
    overlap_coefficient,
    select_cluster_count,
    select_typical_concepts,
    spectral_cluster,
)
from .classifier import ClassifierConfig, TopicDistribution, classify, predict_topic, train_classifier
from .extractor import (
    ExtractorConfig,
    PromptedInput,
    SpanPrediction,
    assemble_prompted_input,
    confidence,
    decode_spans,
    extract_concepts,
    forward_pointer,
    train_extractor,
    training_loss,
)
from .causal import (
    DiscreteSCM,
    ObservedJointKXS,
    ObservedJointXPS,
    backdoor_estimate,
    frontdoor_estimate,
    interventional_truth,
    observational_joint,
)
from .evaluation import BiasReport, ScoredRun, bias_rate, cls_attention_distribution, hearst_extract, score_run
