"""graddistill: distill labeled datasets to one synthetic sample per class by
matching linear-classifier gradients over a frozen feature extractor."""

from .augment import AugmentConfig, AugmentationParams, apply, apply_vjp, expand_batch
from .distill import (DistillConfig, DistillState, GradientPair, LinearHead,
                      class_loss_and_grad, distill, meta_grad_features, meta_loss,
                      sample_head)
from .encoders import (ConvSmallEncoder, EmbeddingTable, Encoder, IdentityEncoder,
                       MlpEncoder, RandomProjectionEncoder, embed_dataset,
                       load_embeddings, save_embeddings)
from .errors import (ConfigError, DatasetError, DegenerateGradientError, FormatError,
                     GradDistillError, LabelError, NonFiniteError, ShapeError)
from .evaluation import (EvalReport, ProbeConfig, baseline_centroids,
                         baseline_neighbors, baseline_random, knn_eval,
                         mutual_knn_alignment, pca2, train_probe)
from .ndt import read_ndt, write_ndt
from .numcore import AdamState, adam_step, cross_entropy, softmax
from .pyramid import (ColorTransform, PyramidImage, activate_next_level,
                      color_matrix_from_dataset, init_pyramid, render, render_vjp)
from .resample import bilinear_resize, bilinear_resize_vjp
from .rng import RngStream, stream_for

__version__ = "0.1.0"
