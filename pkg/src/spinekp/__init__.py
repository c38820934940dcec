"""Spine keypoint detection: OCPC targets, dual-attention network, Hough decoding and PCK/F1 metrics."""
from .config import RunConfig, load_config, tiny_profile
from .decode import DetectedKeypoint, decode_branch, hough_vote, select_top_keypoints
from .metrics import evaluate, match_detections
from .network import KeypointNet, build_model
from .objectives import OASpec, focal_loss, offset_l1_loss, total_loss
from .targets import EncodingSpec, encode_exam_targets, encode_heatmap, encode_offset

__version__ = "0.1.0"
