"""Training-free temporal action localization on pre-extracted embeddings.

The engine adapts a pair of lightweight projection matrices (and optionally a
temperature) separately for every test video with self-supervised losses over
frozen vision/language embeddings, then thresholds the smoothed frame scores
into scored proposals. Nothing is learned across videos and no label
supervision is used unless an oracle flag explicitly requests it.
"""

from .featio import (AnnotationSet, DataFormatError, FeatureTrack, LabelBank,
                     Manifest, PredictedSegment, PredictionSet, Segment,
                     VideoAnnotation, read_annotations, read_feature_file,
                     read_manifest, read_predictions, write_annotations,
                     write_feature_file, write_predictions)
from .metrics import ANET_GRID, THUMOS_GRID, EvalReport, evaluate, tiou
from .numcore import (AdapterState, Gradients, LossBreakdown, NumericError,
                      adam_step, cosine, finite_difference_check, loss_and_grad,
                      representation_loss, separation_loss, softmax)
from .pipeline import (Proposal, PseudoLabel, RunConfig, SampleSets,
                       localize_video, naive_baseline, pseudo_label,
                       run_baseline_manifest, run_manifest, select_samples,
                       smooth_scores)
from .synth import SynthSpec, describe, generate

__version__ = "0.1.0"
