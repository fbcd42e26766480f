"""Expert-adaptive segmentation: CIN U-Net training, fine-tuning and evaluation."""

from .augment import AugmentConfig, augment_sample, center_crop
from .data import (AnnotatedCase, MultiExpertDataset, SamplingPlan, expert_combinations, load_manifest,
                   restrict, sample_indices, save_dataset, starting_indices)
from .errors import (ConfigError, DataError, ExpertAdaptError, MetricUndefinedError, NumericalError,
                     UnknownExpertError, ValidationError)
from .metrics import MetricTriple, assd, dice_score, evaluate_case, extract_surface, hd95
from .model import (CINUNet, ModelConfig, ParamPartition, build_model, forward, partition, predict_mask,
                    reinit_expert_branch, trainable_parameters)
from .objectives import dice_loss, finetune_loss, multi_task_loss
from .stats import AggregatedResult, RunResult, aggregate, emit_table, highlight, t_test
from .synth import ExpertStyle, SynthConfig, default_reference_styles, generate_case, generate_dataset
from .training import (Checkpoint, TrainConfig, evaluate_model, finetune, load_checkpoint, lr_schedule,
                       save_checkpoint, train)

__version__ = "0.1.0"
