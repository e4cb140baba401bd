"""Contact-point transfer for 2D silhouettes: one annotated demonstration is
retargeted to novel objects by global feature matching plus local curvature
refinement, then checked by a geometric trajectory verifier."""

from .curvature import (ContactPair, Convexity, CurvatureEstimate,
                        curvature_sign, estimate_curvature, fit_parabola,
                        functional_estimate, local_score,
                        motion_functional_scale, refine_convexity,
                        suppress_irrelevant, two_pass_estimate)
from .features import (FeatureMap, GlobalMatch, PcaBasis,
                       compute_fallback_features, global_match,
                       load_feature_map, patch_similarity, pca_reduce,
                       save_feature_map)
from .geometry import (ALL_VARIANTS, BinaryMask, EdgePointSet, Point2,
                       PoseVariant, Similarity2, apply_variant, extract_edges,
                       variant_to_canvas, variant_transform)
from .matching import (MatchCandidate, MatchConfig, ReferenceDemo,
                       match_contact, propose_object_point, select_tool)
from .motion import (ContactFrame, RankResult, Trajectory2D,
                     VerificationReport, VerificationScene, build_frame,
                     rank_and_verify, retarget_trajectory, transform_waypoints,
                     verify_trajectory)

__version__ = "0.1.0"
