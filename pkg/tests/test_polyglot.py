import json
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maldicom import corpus, dicom, pe, polyglot
from maldicom.dicom import DataElement, Tag
from maldicom.errors import EvenGroupTag, PayloadTagCollision, RecordMismatch
from maldicom.polyglot import InjectionRecord, create_pe_dicom, extract_pe, verify_polyglot

EMPTY_DICOM = bytes(128) + b"DICM"


def test_minimal_layout_by_hand():
    pe_bytes = corpus.minimal_pe()
    out, rec = create_pe_dicom(pe_bytes, EMPTY_DICOM)
    # 132 (preamble + DICM) + 12 (OB long header) + 0 pad + 24 (PE sig + COFF)
    assert len(out) == 132 + 12 + 24
    assert rec.new_e_lfanew == rec.pe_body_offset == 144
    assert rec.padding_len == 0 and rec.stub_truncated_bytes == 0
    assert struct.unpack_from("<I", out, 60)[0] == 144
    assert out[144:148] == b"PE\x00\x00"
    assert out[132:144] == struct.pack("<HH2s2xI", 0x0009, 0x1001, b"OB", 24)
    assert out[:64] == pe.DosHeader(pe_bytes[:64]).with_e_lfanew(144).bytes
    assert out[64:128] == bytes(64)
    assert extract_pe(out, rec) == pe_bytes
    assert len(extract_pe(out, rec)) == 88


@pytest.mark.parametrize("n_meta", range(6))
def test_fixed_24_offset_relation_residual(n_meta):
    d = corpus.make_dicom(n_meta=n_meta, n_body=0, seed=n_meta)
    out, rec = create_pe_dicom(corpus.minimal_pe(), d)
    meta = dicom.meta_info_size(dicom.parse_dicom(d))
    header = 12
    assert rec.new_e_lfanew == 128 + 4 + meta + header + rec.padding_len
    variable_length = 128  # DOS header + stub after filling the preamble
    fixed_24 = variable_length + 4 + meta + 24
    assert rec.new_e_lfanew - fixed_24 == header + rec.padding_len + 128 - variable_length - 24


def test_stub_truncation_recorded():
    pe_bytes = corpus.make_pe(stub_len=200, n_sections=1, seed=2)
    out, rec = create_pe_dicom(pe_bytes, corpus.make_dicom(seed=2))
    assert rec.stub_truncated_bytes == 136
    assert verify_polyglot(out).all_true
    back = extract_pe(out, rec)
    assert len(back) == len(pe_bytes)
    assert back[:128] == pe_bytes[:60] + struct.pack("<I", 264) + pe_bytes[64:128]
    assert back[128:264] == bytes(136)
    assert back[264:] == pe_bytes[264:]


def test_payload_aligned_to_file_alignment():
    pe_bytes = corpus.make_pe(stub_len=16, n_sections=2, seed=3, file_alignment=0x200)
    out, rec = create_pe_dicom(pe_bytes, corpus.make_dicom(seed=3))
    assert rec.rebase_delta % 0x200 == 0
    for s in pe.parse_pe(out).section_table:
        assert s.raw_pointer % 0x200 == 0
        src = s.raw_pointer - rec.rebase_delta
        assert out[s.raw_pointer : s.raw_pointer + s.raw_size] == pe_bytes[src : src + s.raw_size]


def test_collision_and_even_group():
    out, _ = create_pe_dicom(corpus.minimal_pe(), EMPTY_DICOM)
    with pytest.raises(PayloadTagCollision):
        create_pe_dicom(corpus.minimal_pe(), out)
    with pytest.raises(EvenGroupTag):
        create_pe_dicom(corpus.minimal_pe(), EMPTY_DICOM, Tag(0x0010, 0x1001))


def test_custom_payload_tag():
    tag = Tag(0x0029, 0x10FF)
    d = corpus.make_dicom(n_body=30, seed=8)
    if dicom.get_element(dicom.parse_dicom(d), tag) is not None:
        pytest.skip("corpus happened to use the tag")
    out, rec = create_pe_dicom(corpus.make_pe(seed=8), d, tag)
    assert rec.payload_tag == tag
    assert dicom.get_element(dicom.parse_dicom(out), tag).value[rec.padding_len :].startswith(b"PE\x00\x00")
    assert verify_polyglot(out).all_true


def test_tampered_signature_rejected():
    pe_bytes = corpus.make_pe(seed=1)
    out, rec = create_pe_dicom(pe_bytes, corpus.make_dicom(seed=1))
    bad = bytearray(out)
    bad[rec.pe_body_offset] ^= 0xFF
    with pytest.raises(RecordMismatch):
        extract_pe(bytes(bad), rec)


def test_record_json_round_trip(tmp_path):
    _, rec = create_pe_dicom(corpus.make_pe(seed=1), corpus.make_dicom(seed=1))
    doc = json.loads(rec.to_json())
    assert doc["payload_tag"] == "0009,1001"
    assert set(doc) >= {"original_e_lfanew", "new_e_lfanew", "stub_truncated_bytes", "pe_body_offset",
                        "rebase_delta", "padding_len"}
    assert InjectionRecord.from_json(rec.to_json()) == rec
    with pytest.raises(RecordMismatch):
        InjectionRecord.from_json("{}")


def test_record_for_other_file_rejected():
    a, rec_a = create_pe_dicom(corpus.make_pe(stub_len=0, seed=1), corpus.make_dicom(n_body=5, seed=1))
    b, rec_b = create_pe_dicom(corpus.make_pe(stub_len=64, seed=2), corpus.make_dicom(n_body=40, seed=2))
    assert rec_a.new_e_lfanew != rec_b.new_e_lfanew
    with pytest.raises(RecordMismatch):
        extract_pe(a, rec_b)


def test_intermediate_dump(tmp_path):
    path = tmp_path / "stage.dcm"
    out, rec = create_pe_dicom(corpus.minimal_pe(), corpus.make_dicom(seed=4), intermediate_path=path)
    stage = path.read_bytes()
    assert stage[:128] == out[:128]
    assert dicom.get_element(dicom.parse_dicom(stage), rec.payload_tag) is None


def test_verify_truth_table():
    clean = corpus.make_dicom(seed=0)
    exe = corpus.make_pe(seed=0)
    assert tuple(vars(verify_polyglot(clean)).values()) == (True, False, False)
    assert tuple(vars(verify_polyglot(exe)).values()) == (False, True, True)
    out, _ = create_pe_dicom(exe, clean)
    assert tuple(vars(verify_polyglot(out)).values()) == (True, True, True)
    assert tuple(vars(verify_polyglot(b"")).values()) == (False, False, False)


def test_deterministic():
    args = (corpus.make_pe(seed=6), corpus.make_dicom(seed=6))
    assert create_pe_dicom(*args) == create_pe_dicom(*args)


@given(
    stub_len=st.sampled_from([0, 16, 64]),
    n_sections=st.integers(1, 3),
    n_meta=st.integers(0, 5),
    n_body=st.integers(5, 50),
    implicit=st.booleans(),
    seed=st.integers(0, 2**20),
)
def test_construction_properties(stub_len, n_sections, n_meta, n_body, implicit, seed):
    pe_bytes = corpus.make_pe(stub_len=stub_len, n_sections=n_sections, seed=seed)
    d = corpus.make_dicom(n_meta=n_meta, n_body=n_body, seed=seed, implicit=implicit and n_meta > 0)
    out, rec = create_pe_dicom(pe_bytes, d)

    assert verify_polyglot(out).all_true
    assert out[128:132] == b"DICM"
    assert rec.new_e_lfanew == rec.pe_body_offset
    assert out[rec.pe_body_offset : rec.pe_body_offset + 4] == b"PE\x00\x00"
    assert rec.rebase_delta == rec.pe_body_offset - rec.original_e_lfanew

    orig = dicom.parse_dicom(d)
    poly = dicom.parse_dicom(out)
    orig_values = {e.tag: e.value for e in orig.elements if e.tag != Tag(2, 0)}
    poly_values = {e.tag: e.value for e in poly.elements if e.tag != Tag(2, 0)}
    assert set(poly_values) - set(orig_values) == {rec.payload_tag}
    assert all(poly_values[t] == v for t, v in orig_values.items())
    assert [e.tag for e in poly.elements if e.tag != rec.payload_tag] == [e.tag for e in orig.elements]

    assert extract_pe(out, rec) == pe_bytes


@given(st.integers(65, 400), st.integers(0, 2**16))
def test_long_stub_extraction_differs_only_in_lost_bytes(stub_len, seed):
    pe_bytes = corpus.make_pe(stub_len=stub_len, seed=seed)
    out, rec = create_pe_dicom(pe_bytes, corpus.make_dicom(seed=seed))
    back = extract_pe(out, rec)
    assert rec.stub_truncated_bytes == stub_len - 64
    assert len(back) == len(pe_bytes)
    diff = [i for i in range(len(back)) if back[i] != pe_bytes[i]]
    assert all(128 <= i < 64 + stub_len for i in diff)


def test_default_payload_tag_is_private():
    assert polyglot.DEFAULT_PAYLOAD_TAG == Tag(0x0009, 0x1001)
    assert polyglot.DEFAULT_PAYLOAD_TAG.is_private
    e = DataElement.create(polyglot.DEFAULT_PAYLOAD_TAG, "OB", b"")
    assert dicom.header_size(e, True) == 12
