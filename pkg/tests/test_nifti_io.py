import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gradseg.errors import CorruptHeader, DataTruncated, UnsupportedDatatype, ValueOverflow, WrongMagic
from gradseg.nifti_io import (
    DT_FLOAT32,
    DT_FLOAT64,
    DT_INT16,
    DT_INT32,
    DT_UINT8,
    HEADER_SIZE,
    WRITE_VOX_OFFSET,
    LabelMask3,
    Volume3,
    encode_header,
    parse_header,
    read_mask,
    read_volume,
    write_volume,
)


def _header(datatype=DT_FLOAT32, byteorder="<", shape=(4, 5, 6), spacing=(1.0, 2.0, 3.0)):
    aff = np.hstack([np.diag(spacing), np.zeros((3, 1))])
    return encode_header(shape, spacing, aff, datatype, byteorder)


def _swap_header(buf: bytes) -> bytes:
    """Byte-reverse every numeric field of a little-endian header."""
    fmt = "i10s18sihbb8h3f4h8f3fhbb2f2f2i80s24s2h6f4f4f4f16s4s"
    return struct.pack(">" + fmt, *struct.unpack("<" + fmt, buf))


def test_float32_header_constants():
    h = parse_header(_header())
    assert h.datatype_code == 16 and h.bitpix == 32
    assert h.sizeof_hdr == 348
    assert h.shape == (4, 5, 6)
    assert h.spacing == (1.0, 2.0, 3.0)
    assert not h.swapped


def test_byte_swapped_header_parses_identically():
    le = _header()
    be = _swap_header(le)
    assert struct.unpack("<i", be[:4])[0] == 1543569408
    a, b = parse_header(le), parse_header(be)
    assert b.swapped and not a.swapped
    for name in ("dim", "datatype_code", "bitpix", "pixdim", "vox_offset", "srow_x", "srow_y", "srow_z"):
        assert getattr(a, name) == getattr(b, name)
    np.testing.assert_array_equal(a.affine(), b.affine())


def test_wrong_magic():
    buf = bytearray(_header())
    buf[344:348] = b"xyz\x00"
    with pytest.raises(WrongMagic) as e:
        parse_header(bytes(buf))
    assert e.value.field == "magic"


def test_detached_pair_rejected():
    buf = bytearray(_header())
    buf[344:348] = b"ni1\x00"
    with pytest.raises(WrongMagic, match="detached"):
        parse_header(bytes(buf))


def test_unsupported_datatype():
    buf = bytearray(_header())
    struct.pack_into("<hh", buf, 70, 32, 64)  # complex64
    with pytest.raises(UnsupportedDatatype) as e:
        parse_header(bytes(buf))
    assert e.value.field == "datatype"


@pytest.mark.parametrize("dim0", [0, 8, -1])
def test_dim_out_of_range(dim0):
    buf = bytearray(_header())
    struct.pack_into("<h", buf, 40, dim0)
    with pytest.raises(CorruptHeader) as e:
        parse_header(bytes(buf))
    assert e.value.field == "dim"


def test_zero_extent_rejected():
    buf = bytearray(_header())
    struct.pack_into("<h", buf, 44, 0)
    with pytest.raises(CorruptHeader):
        parse_header(bytes(buf))


def test_bitpix_mismatch():
    buf = bytearray(_header())
    struct.pack_into("<h", buf, 72, 16)
    with pytest.raises(CorruptHeader) as e:
        parse_header(bytes(buf))
    assert e.value.field == "bitpix"


def test_bad_sizeof_rejected():
    buf = bytearray(_header())
    struct.pack_into("<i", buf, 0, 540)
    with pytest.raises(CorruptHeader) as e:
        parse_header(bytes(buf))
    assert e.value.field == "sizeof_hdr"


def test_short_buffer():
    with pytest.raises(CorruptHeader):
        parse_header(_header()[:300])


def test_float32_round_trip_bitwise(tmp_path, rng):
    data = rng.normal(size=(7, 5, 3)).astype(np.float32)
    v = Volume3(data, (0.5, 0.5, 1.2))
    write_volume(v, tmp_path / "a.nii")
    back, hdr = read_volume(tmp_path / "a.nii")
    assert back.data.astype(np.float32).tobytes() == data.tobytes()
    assert back.spacing == (0.5, 0.5, 1.2)
    assert hdr.vox_offset == WRITE_VOX_OFFSET
    assert hdr.scl_slope == 1.0 and hdr.scl_inter == 0.0


def test_scaled_int16(tmp_path):
    v = Volume3(np.full((2, 2, 2), 5.0))
    path = tmp_path / "s.nii"
    write_volume(v, path, DT_INT16)
    buf = bytearray(path.read_bytes())
    struct.pack_into("<ff", buf, 112, 2.0, 1.0)
    path.write_bytes(bytes(buf))
    back, _ = read_volume(path)
    assert np.all(back.data == 11.0)


def test_slope_zero_means_one(tmp_path):
    v = Volume3(np.full((2, 2, 2), 5.0))
    path = tmp_path / "s.nii"
    write_volume(v, path, DT_INT16)
    buf = bytearray(path.read_bytes())
    struct.pack_into("<ff", buf, 112, 0.0, 3.0)
    path.write_bytes(bytes(buf))
    back, _ = read_volume(path)
    assert np.all(back.data == 8.0)


def test_gzip_with_plain_suffix(tmp_path, rng):
    v = Volume3(rng.normal(size=(6, 4, 5)))
    write_volume(v, tmp_path / "plain.nii")
    (tmp_path / "zipped.nii").write_bytes(gzip.compress((tmp_path / "plain.nii").read_bytes()))
    a, _ = read_volume(tmp_path / "plain.nii")
    b, _ = read_volume(tmp_path / "zipped.nii")
    np.testing.assert_array_equal(a.data, b.data)


def test_gzip_suffix_compresses(tmp_path):
    write_volume(Volume3(np.zeros((8, 8, 8))), tmp_path / "z.nii.gz")
    assert (tmp_path / "z.nii.gz").read_bytes()[:2] == b"\x1f\x8b"


def test_mask_uint8_round_trip(tmp_path, rng):
    m = LabelMask3(rng.integers(0, 3, size=(5, 6, 7)), (1.0, 1.0, 2.0))
    write_volume(m, tmp_path / "m.nii.gz")
    back, hdr = read_mask(tmp_path / "m.nii.gz")
    assert hdr.datatype_code == DT_UINT8
    np.testing.assert_array_equal(back.data, m.data)


def test_nan_rejected():
    with pytest.raises(ValueOverflow):
        Volume3(np.array([[[1.0, np.nan]]]))


def test_nan_rejected_at_write(tmp_path):
    class Raw:
        data = np.array([[[1.0, np.nan]]])
        shape = (1, 1, 2)
        spacing = (1.0, 1.0, 1.0)
        affine = np.hstack([np.eye(3), np.zeros((3, 1))])

    with pytest.raises(ValueOverflow):
        write_volume(Raw(), tmp_path / "x.nii")
    assert not (tmp_path / "x.nii").exists()


def test_mask_label_overflow(tmp_path):
    m = LabelMask3(np.array([[[0, 200]]], dtype=np.uint8))
    with pytest.raises(ValueOverflow) as e:
        write_volume(m, tmp_path / "m.nii", DT_UINT8)
        read_mask(tmp_path / "m.nii")
    assert e.value.field == "data"
    v = Volume3(np.array([[[0.0, 300.0]]]))
    with pytest.raises(ValueOverflow) as e:
        write_volume(v, tmp_path / "o.nii", DT_UINT8)
    assert e.value.field == "datatype"


def test_truncated_data(tmp_path):
    write_volume(Volume3(np.ones((4, 4, 4))), tmp_path / "t.nii")
    raw = (tmp_path / "t.nii").read_bytes()
    (tmp_path / "t.nii").write_bytes(raw[:-10])
    with pytest.raises(DataTruncated):
        read_volume(tmp_path / "t.nii")


def test_big_endian_written_file(tmp_path, rng):
    data = rng.integers(-1000, 1000, size=(3, 4, 5)).astype(float)
    write_volume(Volume3(data), tmp_path / "be.nii", DT_INT32, byteorder=">")
    back, hdr = read_volume(tmp_path / "be.nii")
    assert hdr.swapped
    np.testing.assert_array_equal(back.data, data)


def test_axis_order_matches_nibabel(tmp_path, rng):
    nib = pytest.importorskip("nibabel")
    data = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_volume(Volume3(data, (0.5, 0.7, 1.2)), tmp_path / "x.nii.gz")
    img = nib.load(str(tmp_path / "x.nii.gz"))
    np.testing.assert_array_equal(np.asarray(img.dataobj), data)
    np.testing.assert_allclose(img.header.get_zooms(), (0.5, 0.7, 1.2), rtol=1e-6)
    nib.save(nib.Nifti1Image(data.astype(np.int16), np.diag([2.0, 3.0, 4.0, 1.0])), str(tmp_path / "n.nii"))
    back, _ = read_volume(tmp_path / "n.nii")
    np.testing.assert_array_equal(back.data, data.astype(np.int16))
    assert back.spacing == (2.0, 3.0, 4.0)


def test_affine_precedence(tmp_path):
    write_volume(Volume3(np.zeros((2, 2, 2)), (2.0, 3.0, 4.0)), tmp_path / "a.nii")
    buf = bytearray((tmp_path / "a.nii").read_bytes())
    struct.pack_into("<hh", buf, 252, 0, 0)  # qform_code, sform_code
    (tmp_path / "a.nii").write_bytes(bytes(buf))
    _, hdr = read_volume(tmp_path / "a.nii")
    np.testing.assert_array_equal(hdr.affine()[:, :3], np.diag([2.0, 3.0, 4.0]))


@pytest.mark.slow
def test_median_clinical_size_file(tmp_path):
    shape = (123, 512, 511)
    v = Volume3(np.zeros(shape, dtype=np.float32), (1.2, 0.5, 0.5))
    write_volume(v, tmp_path / "big.nii")
    assert (tmp_path / "big.nii").stat().st_size == 352 + 4 * 123 * 512 * 511


_DTYPES = {
    DT_UINT8: st.integers(0, 255),
    DT_INT16: st.integers(-(2**15), 2**15 - 1),
    DT_INT32: st.integers(-(2**31), 2**31 - 1),
    DT_FLOAT32: st.floats(-(2.0**100), 2.0**100, width=32),
    DT_FLOAT64: st.floats(-1e300, 1e300),
}


@st.composite
def volumes(draw):
    code = draw(st.sampled_from(sorted(_DTYPES)))
    shape = draw(st.tuples(*(st.integers(1, 5) for _ in range(3))))
    data = draw(hnp.arrays(np.float64, shape, elements=_DTYPES[code]))
    spacing = draw(st.tuples(*(st.sampled_from([0.5, 1.0, 1.2, 3.25]) for _ in range(3))))
    return code, data, spacing


@settings(max_examples=60, deadline=None)
@given(volumes(), st.sampled_from(["<", ">"]), st.booleans())
def test_round_trip_property(tmp_path_factory, vol, order, compress):
    code, data, spacing = vol
    path = tmp_path_factory.mktemp("rt") / "v.nii"
    write_volume(Volume3(data, spacing), path, code, byteorder=order, compress=compress)
    back, hdr = read_volume(path)
    assert hdr.datatype_code == code
    assert back.spacing == pytest.approx(spacing)
    np.testing.assert_array_equal(back.data, data)


def test_header_size_constant():
    assert len(_header()) == HEADER_SIZE
