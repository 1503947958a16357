"""Training-free multimodal graph-filtering recommender."""

from .errors import (CapacityError, ConvergenceError, DomainError, InputError, MMGFError,
                     SingularityError)
from .evaluation import (DatasetSplit, EvalReport, NoiseLevel, cold_start_users, evaluate,
                         generate_synthetic, inject_noise, split_dataset)
from .fusion import (FusedOperator, FusionWeights, RecommendationList, batch_recommend, fuse,
                     recommend_topk, score_user)
from .graphs import (ItemGraph, ModalityConfig, build_interaction_graph, build_modality_graph,
                     cosine_similarity, knn_graph, topk_binarize)
from .pipeline import PRESETS, GraphCache, Hyperparams, Settings, fit, run
from .spectral import (FilterSpec, SpectralBounds, apply_filter, apply_linear_lpf,
                       apply_polynomial_filter, extreme_eigenvalues, filter_response,
                       spectrum_histogram)
from .tuning import GridSpec, grid_search

__version__ = "0.1.0"
