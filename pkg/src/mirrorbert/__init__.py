"""Self-duplicated contrastive tuning of a toy MLM encoder."""

from .augment import AugmentKind, AugmentSpec, apply_to_pair, span_mask, surface_augment
from .contrastive import (LossConfig, Objective, TrainConfig, info_nce_loss, mine_hard_pairs,
                          mirror_tune, ms_loss)
from .corpus import (CorpusItem, MirrorPair, Vocabulary, build_vocabulary,
                     generate_random_strings, make_mirror_dataset, sample_frequency_bucket,
                     tokenize)
from .diagnostics import cosine_histogram, isotropy_score, mvn
from .encoder import (DropoutMode, DropoutPlan, EncoderConfig, EncoderParameters, Pooling,
                      forward, forward_batch, gradients, init_parameters, load_checkpoint,
                      make_dropout_plan, pool, save_checkpoint)
from .estimators import MirrorTuner, MLMEncoder
from .evaluation import (Scorer, accuracy_at_k, csls_score, eval_similarity, pearson,
                         retrieve_topk, roc_auc, spearman)
from .exceptions import DataError, MirrorBertError, NumericalError
from .optim import OptimizerState, adamw_step

__version__ = "0.1.0"
