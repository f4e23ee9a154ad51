"""Monocular multi-person 3D geometry: age-blended body model, bird's-eye-view
localisation maps, losses with analytic gradients and evaluation metrics."""
from .body_model import BodyMesh, BodyModelAssets, BodyParams, make_toy_assets, rot6d_to_matrix, smpl_plus_a
from .camera import CameraIntrinsics, VoxelGrid, build_anchor_maps, depth_encoding, project
from .errors import BEVError
from .maps import Detection, MapSet, compose_3d, parse_detections, render_gt_maps

__version__ = "0.1.0"
