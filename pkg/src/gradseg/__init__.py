"""Prior-guided gradient-map preprocessing and segmentation evaluation for
longitudinal (pre-RT to mid-RT) tumor volumes."""

from .components import BoundingBox3, ComponentSet, label_components, tight_bbox
from .gradmap import GradMapConfig, TwoChannelSample, assemble_sample, build_gradient_map, gradient_magnitude
from .metrics import CohortReport, dsc, dsc_agg, evaluate_cohort, hd95, msd, surface_voxels
from .nifti_io import LabelMask3, NiftiHeader, Volume3, parse_header, read_mask, read_volume, write_volume
from .roi import RoiSet, boxes_from_prior, perturb_box, rasterize
from .stats import PairedSample, bin_volume_records, spearman, wilcoxon_signed_rank
from .volume import ResampleSpec, minmax_normalize, resample, resample_mask, volume_cc, zscore_normalize

__version__ = "0.1.0"
