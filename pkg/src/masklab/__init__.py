"""Perturbation-based explanations for image classifiers.

Optimized heatmaps, counterfactual deletion/insertion metrics, beam-search
discovery of minimal sufficient explanations, structured attention graphs and
a sparse-reconstruction explanation space, all runnable offline against a
bundled trainable CNN.
"""

__version__ = "0.1.0"

from .datasets import SyntheticDataset, make_dataset
from .errors import (BaselineError, CapabilityError, CapacityError, InputError,
                     MaskLabError, TrainingError)
from .metrics import Curve, auc, deletion_curve, insertion_curve
from .models import (Scorer, ToyCnn, TrainConfig, blur_baseline, input_gradient,
                     load_toy_cnn, save_toy_cnn, score, train_toy)
from .optimizer import (HeatmapResult, OptimizerConfig, igos_config,
                        igospp_config, mask2018_config, optimize)
from .perturbation import (PatchGrid, PatchSubset, apply_mask, complement_mask,
                           subset_to_mask, upsample)
from .sag import (MseRecord, Sag, SearchConfig, beam_search_mse, build_sag,
                  confidence_of, diverse_roots, exhaustive_mse, mse_statistics)
from .srae import (SraeConfig, SraeModel, XnnBatch, collect_xnn_batch,
                   faithfulness_metric, orthogonality_metric, srae_loss,
                   train_srae)
