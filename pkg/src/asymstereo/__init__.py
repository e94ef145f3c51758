"""Stereo disparity estimation for pairs with unequal view quality.

The package builds two complementary matching-cost volumes, analyses how
view degradation distorts their cost distributions, and fuses them with two
recurrent refinement branches under a phased hand-off.  Everything runs at
desk scale on procedurally generated stereo pairs with exact ground truth.
"""
from .config import RunConfig, load_checkpoint, save_checkpoint
from .data import (AlignmentConfig, DegradationSpec, MetricsReport,
                   SceneParams, StereoSample, aggregate_metrics,
                   compute_metrics, degrade_left_for_corr, degrade_right,
                   make_synthetic_pair, upsample_right_for_cat)
from .distortion import (DistortionReport, distribution_distortion,
                         distortion_study)
from .features import ExtractorConfig, FeatureBundle, FeatureExtractors
from .fusion import (FusionConfig, FusionState, PipelineOutput, PreparedInputs,
                     VolumeFusionNet, build_model, convex_upsample,
                     forward_pipeline, prepare_batch, prepare_inputs,
                     regress_cor_disparity, two_phase_gate)
from .losses import (GradCheckReport, LossBreakdown, gradcheck, loss_gru1,
                     loss_gru2, total_loss)
from .volumes import (CostVolumeRegularizer, PeakSet, build_correlation_volume,
                      build_groupwise_volume, gather_window, initial_disparity,
                      top_k_peaks)

__version__ = "0.1.0"
