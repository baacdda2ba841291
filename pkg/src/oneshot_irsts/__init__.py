"""Training-free one-shot segmentation of small targets in infrared image sequences."""

from .backend import BackendConfig, FeatureGrid, MockBackend, OnnxBackend, TargetDescriptor, make_backend, pool_target
from .dataio import Annotation, SequenceManifest, load_annotation, load_config, load_manifest, save_manifest, write_outputs
from .ensemble import PipelineConfig, level_sides, majority_vote, run_sequence, segment_frame, vote
from .focusing import focus_segment
from .imaging import Frame, WindowSpec, connected_components, crop_window, paste_mask, resize_mask_nearest, tile
from .matching import ConfidenceMap, PromptPoint, confidence_map, extract_prompt, extract_topk, fuse_confidence, prepare_reference
from .metrics import MatchRule, MetricsReport, iou, pd_fa, report_sequence, ssim
from .synth import SynthSpec, brute_force_confidence, brute_force_mode, generate_sequence

__version__ = "0.1.0"
