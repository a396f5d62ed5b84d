"""Attitude-based perspective rectification for multi-camera capsule frames.

Each captured frame is mapped to the ideal fronto-parallel view using the
camera attitude (roll/pitch/yaw rotation R with focal length) and the
coordinate-frame chain linking the sensor reference frame, the device
carrier frame, the selected camera, the organ frame and the captured
image plane. The chain composes into a pure rotation between the captured
camera and the ideal view, which induces the rectifying homography
K M^-1 K^-1 with K the focal intrinsics about the image center.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import LumenstitchError, SingularTransformError
from .imgcore import Homography, warp

# Shooting directions of the six cameras in the carrier frame.
CAMERA_AXES = {
    1: np.array([0.0, 0.0, -1.0]),
    2: np.array([0.0, 0.0, 1.0]),
    3: np.array([1.0, 0.0, 0.0]),
    4: np.array([0.0, -1.0, 0.0]),
    5: np.array([-1.0, 0.0, 0.0]),
    6: np.array([0.0, 1.0, 0.0]),
}

MAX_TILT = np.deg2rad(85.0)  # grazing-view clamp

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class AttitudePose:
    """Device attitude: roll/pitch/yaw angles, focal length, rotation R."""

    theta: float
    phi: float
    alpha: float
    focal: float
    R: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.R, dtype=np.float64)
        if r.shape != (3, 3):
            raise LumenstitchError("R must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL):
            raise LumenstitchError("R must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise LumenstitchError("R must be a proper rotation (det +1)")
        if self.focal <= 0:
            raise LumenstitchError("focal length must be positive")
        object.__setattr__(self, "R", r)


@dataclass(frozen=True)
class CameraFrameChain:
    """Frame-chain matrices; T3 is derived from the tilt when omitted."""

    T1: np.ndarray
    T2: np.ndarray
    camera_index: int
    T3: np.ndarray = None

    def __post_init__(self):
        if self.camera_index not in CAMERA_AXES:
            raise LumenstitchError(
                f"camera index must be 1..6, got {self.camera_index}"
            )
        for name in ("T1", "T2", "T3"):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.asarray(m, dtype=np.float64)
            if m.shape != (3, 3) or abs(np.linalg.det(m)) < 1e-12:
                raise LumenstitchError(f"{name} must be an invertible 3x3")
            object.__setattr__(self, name, m)


def camera_axis(camera_index, R, T2):
    """Shooting direction of camera n in the organ frame, unit length."""
    if camera_index not in CAMERA_AXES:
        raise LumenstitchError(f"camera index must be 1..6, got {camera_index}")
    k0 = CAMERA_AXES[camera_index]
    k = np.linalg.inv(T2) @ np.linalg.inv(R) @ k0
    return k / np.linalg.norm(k)


def tilt_matrix(beta):
    """Transpose of the x-axis rotation by beta (organ frame <- image plane)."""
    c, s = np.cos(beta), np.sin(beta)
    return np.array([[1.0, 0.0, 0.0],
                     [0.0, c, -s],
                     [0.0, s, c]]).T


def tilt_angle(k_nt):
    """Tilt between the shooting direction and the wall-plane normal.

    The normal of the captured plane in the organ frame is taken as the z
    axis; the sign follows the y component of the shooting direction, and
    the magnitude is clamped below the grazing limit.
    """
    k = np.asarray(k_nt, dtype=np.float64)
    k = k / np.linalg.norm(k)
    beta = np.arccos(np.clip(abs(k[2]), -1.0, 1.0))
    if k[1] < 0:
        beta = -beta
    return float(np.clip(beta, -MAX_TILT, MAX_TILT))


def _intrinsics(focal, size):
    w, h = size
    return np.array([[focal, 0.0, (w - 1) / 2.0],
                     [0.0, focal, (h - 1) / 2.0],
                     [0.0, 0.0, 1.0]])


def chain_rotation(pose, chain):
    """Composite rotation T1 R T2 T3 from the ideal view to the camera."""
    t3 = chain.T3
    if t3 is None:
        k_nt = camera_axis(chain.camera_index, pose.R, chain.T2)
        t3 = tilt_matrix(tilt_angle(k_nt))
    return chain.T1 @ pose.R @ chain.T2 @ t3


def rectify_homography(pose, chain, size):
    """Plane-induced homography from the captured image to the ideal view.

    `size` is the (width, height) of the captured frame; the principal
    point is assumed at the image center and the intrinsics carry only the
    focal length.
    """
    m = chain_rotation(pose, chain)
    k = _intrinsics(pose.focal, size)
    try:
        h = k @ np.linalg.inv(m) @ np.linalg.inv(k)
        return Homography(h)
    except (np.linalg.LinAlgError, SingularTransformError) as exc:
        raise SingularTransformError(
            f"degenerate rectification (grazing view): {exc}"
        ) from exc


def distortion_homography(pose, chain, size):
    """Forward model: ideal view -> captured frame (inverse of rectify)."""
    m = chain_rotation(pose, chain)
    k = _intrinsics(pose.focal, size)
    return Homography(k @ m @ np.linalg.inv(k))


def rectify_image(img, pose, chain):
    """Warp a captured frame into the ideal fronto-parallel view."""
    h = rectify_homography(pose, chain, (img.width, img.height))
    return warp(img, h)


ATTITUDE_COLUMNS = (
    ["frame_id", "camera_index", "theta", "phi", "alpha", "focal"]
    + [f"r{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + [f"t2_{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + [f"t1_{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
)


def load_attitude_csv(path):
    """Read the attitude sidecar into {frame_id: (pose, chain)}.

    Columns: frame_id, camera_index, theta, phi, alpha, focal, then the
    row-major entries of R, T2 and T1.
    """
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(ATTITUDE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise LumenstitchError(
                f"attitude sidecar missing columns: {sorted(missing)}"
            )
        for row in reader:
            def mat(prefix):
                return np.array([
                    [float(row[f"{prefix}{i}{j}"]) for j in (1, 2, 3)]
                    for i in (1, 2, 3)
                ])

            pose = AttitudePose(
                theta=float(row["theta"]), phi=float(row["phi"]),
                alpha=float(row["alpha"]), focal=float(row["focal"]),
                R=mat("r"),
            )
            chain = CameraFrameChain(
                T1=mat("t1_"), T2=mat("t2_"),
                camera_index=int(row["camera_index"]),
            )
            out[row["frame_id"]] = (pose, chain)
    return out


def save_attitude_csv(records, path):
    """Write {frame_id: (pose, chain)} to the sidecar format."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ATTITUDE_COLUMNS)
        for frame_id, (pose, chain) in records.items():
            row = [frame_id, chain.camera_index, pose.theta, pose.phi,
                   pose.alpha, pose.focal]
            row += list(pose.R.ravel())
            row += list(chain.T2.ravel())
            row += list(chain.T1.ravel())
            writer.writerow(row)
