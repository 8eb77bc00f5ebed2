"""Punctuation restoration toolkit for ancient Chinese text."""

from .corpus import (CorpusRecord, CorpusStats, RawSource, corpus_stats,
                     discover_sources, genre_counts, ingest, load_source,
                     read_jsonl, write_jsonl)
from .model import (BaselineModel, CoreModel, baseline_forward, bilstm_layer,
                    decode_and_classify, encode_seq, format_index_string,
                    load_model, lstm_cell, model_gradcheck,
                    multi_head_attention, predict_labels, restore_text,
                    save_model)
from .ndcompute import (AdamState, ComputeGraph, Tensor, adam_step, backward,
                        cross_entropy, gradcheck, no_grad, softmax)
from .preprocess import (LabelSequence, PunctuationInventory, SplitSpec,
                         Vocab, build_vocab, decode, default_inventory,
                         encode, labels_from_metadata, load_inventory,
                         rebalance, reinsert_punctuation, split_dataset,
                         strip_punctuation)
from .train_eval import (ConfusionMatrix, MetricsReport, TrainConfig,
                         compare_reports, confusion, evaluate_checkpoint,
                         evaluate_model, f1_scores, precision_recall,
                         render_report, train)

__version__ = "0.1.0"
