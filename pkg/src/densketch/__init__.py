"""Compressed, geometry-aware density sketches over embedding manifolds."""

from .embeddings import (EmbeddingTable, EmbeddingError, load_embeddings,
                         save_embeddings, synth_propagation_embedder)
from .partition import (CodesMatrix, DLSHPartitioner, assign_codes, fit_dlsh,
                        fit_random_codes, load_codes, load_partitioning,
                        save_codes, save_partitioning)
from .sketch import (AGGREGATORS, Sketch, aggregate, batch_decode, decay,
                     decode_scores, encode_item, encode_items, gather_depthwise,
                     load_sketch, normalize, one_hot_matrix, reduce_depthwise,
                     save_sketch, zero_sketch)
from .density import (DensityEstimate, brute_force_kde, emde_density,
                      median_l1_bandwidth, nk_sweep, pearson)
from .model import (AdamState, ConditionalSketchModel, ModelConfig, ModelParams,
                    TrainConfig, backward_and_step, forward, init_model,
                    kl_sketch_loss, load_checkpoint, log_softmax_width,
                    save_checkpoint, softmax_width, train_model)
from .metrics import (average_precision_at_k, evaluate_session_points,
                      evaluate_topk_points, hit_at_k, mrr_at_k, ndcg_at_k,
                      precision_at_k, recall_at_k)
from .pipeline import (Example, Interaction, InteractionLog, apply_popularity,
                       build_session_example, build_topk_example,
                       evaluate_session_task, evaluate_topk_task,
                       make_model_ranker, make_pure_ranker, make_static_ranker,
                       popularity_baseline, recommend, session_layout,
                       topk_layout)

__version__ = "0.1.0"
