"""colonav: centerline extraction, path-constrained camera travel, and
surface-coverage analysis for tubular triangle meshes."""

from .mesh import MeshError, TriMesh
from .meshio import load_mesh, parse_mesh, save_mesh, write_mesh
from .path import (CenterlinePath, attach_frames, eval_path, load_path,
                   make_centerline, reparameterize, save_path, smooth)
from .phantom import PhantomSpec, default_spec, generate_phantom
from .skeleton import (ContractionParams, SkeletonGraph,
                       collapse_to_skeleton, contract,
                       extract_centerline_points, extract_path)
from .travel import (CameraPose, TravelPolicy, TravelState, clamp_offset,
                     guidance_arrows, pose, step, tag)
from .bvh import Bvh, build_bvh, raycast, raycast_many
from .visibility import (CoverageReport, HeadModel, Marker, make_marker,
                         marker_visibility, sweep_coverage, visible_set)
from .analytics import (SessionLog, StudyTable, bonferroni, friedman,
                        latin_square, success_rate, wilcoxon_signed_rank)

__version__ = "0.1.0"

__all__ = [
    "MeshError", "TriMesh", "load_mesh", "parse_mesh", "save_mesh",
    "write_mesh", "CenterlinePath", "attach_frames", "eval_path",
    "load_path", "make_centerline", "reparameterize", "save_path",
    "smooth", "PhantomSpec", "default_spec", "generate_phantom",
    "ContractionParams", "SkeletonGraph", "collapse_to_skeleton",
    "contract", "extract_centerline_points", "extract_path", "CameraPose",
    "TravelPolicy", "TravelState", "clamp_offset", "guidance_arrows",
    "pose", "step", "tag", "Bvh", "build_bvh", "raycast", "raycast_many",
    "CoverageReport", "HeadModel", "Marker", "make_marker",
    "marker_visibility", "sweep_coverage", "visible_set", "SessionLog",
    "StudyTable", "bonferroni", "friedman", "latin_square", "success_rate",
    "wilcoxon_signed_rank",
]
