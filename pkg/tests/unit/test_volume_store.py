# planemorph/tests/unit/test_volume_store.py
import json
import logging

import numpy as np
import pytest

from planemorph.common.exceptions import InvalidParameterError, ShapeMismatchError
from planemorph.data.phantoms import gen_phantom, gen_smooth_field
from planemorph.data.volume import DeformationField, LabelMap, LandmarkSet, Volume, normalize
from planemorph.io.mvol import (
    BadMagicError,
    MvolHeaderError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    encode_mvol,
    read_field,
    read_label_map,
    read_mvol,
    read_volume,
    write_mvol,
)
from planemorph.registration.field_ops import jacobian_stats

logger = logging.getLogger(__name__)


# --- MVOL codec ---

def test_single_voxel_round_trip(tmp_path):
    path = str(tmp_path / "one.mvol")
    write_mvol(path, Volume.from_array(np.full((1, 1, 1), 0.5)))
    blob = open(path, "rb").read()
    header = json.dumps({"dtype": "f32", "shape": [1, 1, 1], "spacing": [1.0, 1.0, 1.0]},
                        separators=(",", ":")).encode("utf-8")
    assert len(blob) == 4 + 1 + 4 + len(header) + 4
    assert blob[:4] == b"MVOL"
    assert blob[4] == 1
    assert read_volume(path).data[0, 0, 0] == 0.5


def test_header_keys_in_order(tmp_path):
    blob = encode_mvol(Volume.from_array(np.zeros((2, 3, 4)), spacing=(0.5, 1.0, 2.0)))
    (length,) = np.frombuffer(blob[5:9], dtype="<u4")
    header = json.loads(blob[9:9 + int(length)].decode("utf-8"))
    assert list(header) == ["dtype", "shape", "spacing"]
    assert header["shape"] == [2, 3, 4]
    assert header["spacing"] == [0.5, 1.0, 2.0]


def test_ramp_round_trip_is_bit_exact(tmp_path):
    path = str(tmp_path / "ramp.mvol")
    ramp = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    write_mvol(path, Volume.from_array(ramp))
    back = read_mvol(path)
    assert isinstance(back, Volume)
    assert back.data.tobytes() == ramp.tobytes()
    # D is the fastest axis: value at (h, w, d) = (h * W + w) * D + d.
    assert back.data[1, 0, 1] == 5.0


def test_label_map_round_trip(tmp_path):
    path = str(tmp_path / "labels.mvol")
    labels = np.array([0, 1, 2, 1, 0, 2, 2, 1], dtype=np.uint16).reshape(2, 2, 2)
    write_mvol(path, LabelMap.from_array(labels))
    assert b'"dtype":"u16"' in open(path, "rb").read()
    back = read_label_map(path)
    assert back.data.dtype == np.uint16
    np.testing.assert_array_equal(back.data, labels)
    assert back.n_labels == 2


def test_field_round_trip_has_components(tmp_path):
    path = str(tmp_path / "field.mvol")
    field = gen_smooth_field(1, (4, 5, 6), max_disp=2.0, sigma=1.0)
    write_mvol(path, field)
    assert b'"components":3' in open(path, "rb").read()
    back = read_field(path)
    assert back.data.tobytes() == field.data.tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.mvol"
    blob = bytearray(encode_mvol(Volume.from_array(np.zeros((2, 2, 2)))))
    blob[:4] = b"XVOL"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        read_mvol(str(path))


def test_unsupported_version(tmp_path):
    path = tmp_path / "v2.mvol"
    blob = bytearray(encode_mvol(Volume.from_array(np.zeros((2, 2, 2)))))
    blob[4] = 2
    path.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersionError):
        read_mvol(str(path))


def test_unsupported_dtype(tmp_path):
    path = tmp_path / "f64.mvol"
    blob = encode_mvol(Volume.from_array(np.zeros((2, 2, 2)))).replace(b'"f32"', b'"f64"')
    path.write_bytes(blob)
    with pytest.raises(UnsupportedDtypeError):
        read_mvol(str(path))


def test_truncated_payload(tmp_path):
    path = tmp_path / "short.mvol"
    blob = encode_mvol(Volume.from_array(np.ones((2, 2, 2))))
    path.write_bytes(blob[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_mvol(str(path))


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "long.mvol"
    path.write_bytes(encode_mvol(Volume.from_array(np.ones((2, 2, 2)))) + b"\x00")
    with pytest.raises(MvolHeaderError):
        read_mvol(str(path))


def test_typed_readers_reject_other_kinds(tmp_path):
    path = str(tmp_path / "labels.mvol")
    write_mvol(path, LabelMap.from_array(np.zeros((2, 2, 2), dtype=np.uint16)))
    with pytest.raises(MvolHeaderError):
        read_volume(path)


# --- Data model ---

def test_volume_rejects_wrong_length():
    with pytest.raises(ShapeMismatchError):
        Volume(shape=(2, 2, 2), data=np.zeros(7))


def test_volume_rejects_non_finite():
    with pytest.raises(InvalidParameterError):
        Volume.from_array(np.full((2, 2, 2), np.nan))


def test_label_map_rejects_label_above_count():
    with pytest.raises(InvalidParameterError):
        LabelMap.from_array(np.full((2, 2, 2), 3), n_labels=2)


def test_landmark_ids_unique():
    with pytest.raises(InvalidParameterError):
        LandmarkSet(points=[[0, 0, 0], [1, 1, 1]], ids=[1, 1])


def test_landmark_bounds():
    lms = LandmarkSet(points=[[0, 0, 0], [4, 1, 1]], ids=[1, 2])
    lms.check_bounds((5, 5, 5))
    with pytest.raises(InvalidParameterError):
        lms.check_bounds((4, 4, 4))


# --- normalize ---

def test_normalize_affine_map():
    out = normalize(Volume.from_array(np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1)))
    np.testing.assert_allclose(out.data.ravel(), [0.0, 0.5, 1.0])


def test_normalize_constant_volume_is_zero():
    out = normalize(Volume.from_array(np.full((2, 2, 2), 5.0)))
    assert np.all(out.data == 0.0)


def test_normalize_is_idempotent():
    ramp = Volume.from_array(np.linspace(0.0, 1.0, 27).reshape(3, 3, 3))
    np.testing.assert_allclose(normalize(ramp).data, ramp.data, atol=1e-7)


# --- Synthetic generators ---

def test_phantom_contract():
    vol, labels, lms = gen_phantom(7, (32, 32, 32), 4)
    assert len(lms) == 4
    assert set(np.unique(labels.data)) <= {0, 1, 2, 3, 4}
    assert labels.n_labels == 4
    assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0
    lms.check_bounds(vol.shape)


def test_phantom_is_deterministic():
    a = gen_phantom(11, (16, 16, 16), 3)
    b = gen_phantom(11, (16, 16, 16), 3)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()
    np.testing.assert_array_equal(a[2].points, b[2].points)


def test_single_blob_centroid_near_landmark():
    _, labels, lms = gen_phantom(5, (16, 16, 16), 1)
    coords = np.argwhere(labels.data == 1)
    assert coords.size > 0
    assert np.linalg.norm(coords.mean(axis=0) - lms.points[0]) <= 1.0


def test_phantom_too_small():
    with pytest.raises(InvalidParameterError):
        gen_phantom(0, (4, 16, 16), 1)
    with pytest.raises(InvalidParameterError):
        gen_phantom(0, (16, 16, 16), 0)


def test_smooth_field_zero_amplitude():
    field = gen_smooth_field(2, (8, 8, 8), max_disp=0.0, sigma=2.0)
    assert np.all(field.data == 0.0)


def test_smooth_field_peak_matches_max_disp():
    field = gen_smooth_field(9, (16, 16, 16), max_disp=3.0, sigma=2.0)
    assert float(np.max(np.abs(field.data))) == pytest.approx(3.0, abs=1e-5)


def test_smooth_field_without_folding():
    field = gen_smooth_field(3, (32, 32, 32), max_disp=2.0, sigma=4.0)
    assert jacobian_stats(field).neg_fraction == 0.0


def test_smooth_field_preconditions():
    with pytest.raises(InvalidParameterError):
        gen_smooth_field(0, (8, 8, 8), max_disp=-1.0, sigma=1.0)
    with pytest.raises(InvalidParameterError):
        gen_smooth_field(0, (8, 8, 8), max_disp=1.0, sigma=0.0)
