"""Two-point similarity alignment that pins both pupils to fixed coordinates."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import affine_transform

from ..errors import DegenerateLandmarks, MissingAnnotation
from .manifest import FaceRecord

TARGET_LEFT = (0.35, 0.4)
TARGET_RIGHT = (0.65, 0.4)
WHITE = 1.0


def default_targets(out_size: int):
    return ((TARGET_LEFT[0] * out_size, TARGET_LEFT[1] * out_size),
            (TARGET_RIGHT[0] * out_size, TARGET_RIGHT[1] * out_size))


def similarity_from_pupils(src, dst) -> np.ndarray:
    """Forward 2x3 matrix in (x, y) pixel coordinates mapping ``src`` pupils onto ``dst``.

    Treating points as complex numbers, the map is ``z -> a z + b`` with
    ``a = (d1 - d0) / (s1 - s0)``: rotation and uniform scale, no shear.
    """
    s0, s1 = (complex(*p) for p in src)
    d0, d1 = (complex(*p) for p in dst)
    if abs(s1 - s0) < 1e-9:
        raise DegenerateLandmarks("pupil landmarks coincide")
    if abs(d1 - d0) < 1e-9:
        raise DegenerateLandmarks("target pupils coincide")
    a = (d1 - d0) / (s1 - s0)
    b = d0 - a * s0
    return np.array([[a.real, -a.imag, b.real],
                     [a.imag, a.real, b.imag]])


def apply_to_points(matrix: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]


def warp_similarity(image: np.ndarray, matrix: np.ndarray, out_size: int | tuple[int, int],
                    fill: float = WHITE) -> np.ndarray:
    """Resample a channel-first image through a forward (x, y) affine matrix.

    Pixel centres sit at integer coordinates; bilinear interpolation; samples
    falling outside the source are ``fill``.
    """
    out_h, out_w = (out_size, out_size) if np.isscalar(out_size) else out_size
    lin = matrix[:, :2]
    inv = np.linalg.inv(lin)
    off = -inv @ matrix[:, 2]
    # scipy works in (row, col) = (y, x)
    swap = np.array([[0, 1], [1, 0]])
    inv_rc = swap @ inv @ swap
    off_rc = swap @ off
    return np.stack([affine_transform(ch, inv_rc, offset=off_rc, output_shape=(out_h, out_w),
                                      order=1, mode="constant", cval=fill)
                     for ch in np.asarray(image, dtype=np.float64)])


def align_face(rec: FaceRecord, target_pupils=None, out_size: int = 64) -> np.ndarray:
    if rec.pupils is None:
        raise MissingAnnotation("pupils")
    target_pupils = target_pupils or default_targets(out_size)
    matrix = similarity_from_pupils(rec.pupils, target_pupils)
    return warp_similarity(rec.load_image(), matrix, out_size)


def align_record(rec: FaceRecord, target_pupils=None, out_size: int = 64) -> FaceRecord:
    """Aligned copy of ``rec`` with its landmarks moved to the targets."""
    target_pupils = target_pupils or default_targets(out_size)
    image = align_face(rec, target_pupils, out_size)
    return FaceRecord(image=image, pupils=tuple(tuple(p) for p in target_pupils),
                      yaw_deg=rec.yaw_deg, emotion=rec.emotion)
