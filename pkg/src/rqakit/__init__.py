"""rqakit: build, train, evaluate, and serve retrieval-augmented QA systems."""

from .corpus import Passage, PassageStore, RawDocument, clean_text, ingest
from .datagen import (
    QAPair,
    convert_generic_qa,
    dedup_questions,
    generate_answers,
    generate_questions,
    sample_gold_and_negatives,
    split_dataset,
)
from .evaluation import PredictionRecord, evaluate_pipeline, judge_accuracy
from .generation import (
    FiDInput,
    GeneratorBackend,
    PromptAssembly,
    TinyDecoderBackend,
    TinyEncoderDecoderBackend,
    answer_loglikelihood,
    assemble_prompt,
    build_fid_input,
    fid_generate,
    remote_generate,
)
from .generator_train import GeneratorTrainConfig, fid_loss, sft_loss, swr_build_examples, train_generator
from .llm import LLMClient, MockLLMClient, RemoteLLMClient, SamplingParams
from .metrics import bleu, ndcg_at_k, recall_at_k, rouge_l
from .models import HashingBowEmbedder, TinyDecoderLM, TinyEncoderDecoder, WordVocab
from .pipeline import (
    Component,
    DialogueSession,
    DontKnowSafetyFilter,
    RQAOutput,
    RQAPipeline,
    SimpleRQA,
    build_pipeline,
    load_pipeline,
    register_component,
)
from .retrieval import (
    LexicalIndex,
    RetrievalResult,
    VectorIndex,
    bm25_index,
    bm25_search,
    dense_index,
    dense_search,
    load_index,
    save_index,
)
from .retriever_train import (
    RetrieverTrainConfig,
    ctl_loss,
    dca_targets,
    distill_loss,
    rpg_targets,
    train_retriever,
)

__version__ = "0.1.0"
