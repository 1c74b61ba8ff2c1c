"""ROI localisation, preprocessing and radiomic feature families."""

from .extract import (
    FAMILY_ORDER,
    ExtractConfig,
    FeatureMatrix,
    extract_matrix,
    feature_columns,
    image_features,
    prune_correlated,
    read_matrix,
    write_matrix,
)
from .firstorder import first_order
from .preprocess import DiscretizedRoi, discretize, preprocess, preprocess_array
from .roi import RoiBox, locate_roi
from .shape import shape_features, shape_from_mask
from .texture import gldm_features, glcm_features, glrlm_features, glszm_features, ngtdm_features

__all__ = [
    "FAMILY_ORDER",
    "DiscretizedRoi",
    "ExtractConfig",
    "FeatureMatrix",
    "RoiBox",
    "discretize",
    "extract_matrix",
    "feature_columns",
    "first_order",
    "gldm_features",
    "glcm_features",
    "glrlm_features",
    "glszm_features",
    "image_features",
    "locate_roi",
    "ngtdm_features",
    "preprocess",
    "preprocess_array",
    "prune_correlated",
    "read_matrix",
    "shape_features",
    "shape_from_mask",
    "write_matrix",
]
