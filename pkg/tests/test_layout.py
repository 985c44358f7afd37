import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from minidrive.layout import (Role, assert_causal, build_ego_mask,
                              build_guidance_mask, build_sequence_layout,
                              build_teacher_forcing_mask, mask_to_pgm)


def test_layout_length_k1():
    lay = build_sequence_layout(1, 64, 10, 3)
    assert lay.length == 148


def test_layout_length_k3_and_span_order():
    lay = build_sequence_layout(3, 64, 10, 3)
    assert lay.length == 444
    cv_lo, cv_hi = lay.span(1, Role.CLEAN_VIDEO)
    ca_lo, ca_hi = lay.span(1, Role.CLEAN_ACTION)
    nv_lo, _ = lay.span(1, Role.NOISY_VIDEO)
    assert cv_hi == ca_lo and ca_hi == nv_lo


@given(st.integers(1, 4), st.integers(1, 12), st.integers(1, 6), st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_spans_partition_sequence(k, nx, na, g):
    lay = build_sequence_layout(k, nx, na, g)
    covered = sorted(
        i for span in lay.spans.values() for i in range(span[0], span[1]))
    assert covered == list(range(lay.length))


@given(st.integers(2, 4), st.integers(1, 8), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_monotone_chunk_ordering(k, nx, na):
    lay = build_sequence_layout(k, nx, na, 2)
    for j in range(k - 1):
        last = max(hi for (c, _), (_, hi) in lay.spans.items() if c == j)
        first = min(lo for (c, _), (lo, _) in lay.spans.items() if c == j + 1)
        assert last <= first


def test_teacher_forcing_k1_rules():
    lay = build_sequence_layout(1, 4, 2, 2)
    mask = build_teacher_forcing_mask(lay).allowed
    nv = slice(*lay.span(0, Role.NOISY_VIDEO))
    na = slice(*lay.span(0, Role.NOISY_ACTION))
    cv = slice(*lay.span(0, Role.CLEAN_VIDEO))
    # noisy video attends only to itself
    for r in range(nv.start, nv.stop):
        cols = np.flatnonzero(mask[r])
        assert set(cols) == set(range(nv.start, nv.stop))
    # noisy action attends clean video + itself
    for r in range(na.start, na.stop):
        cols = set(np.flatnonzero(mask[r]))
        assert cols == set(range(cv.start, cv.stop)) | set(range(na.start, na.stop))


def test_noisy_video_allowed_count_k3():
    nx, na = 64, 10
    lay = build_sequence_layout(3, nx, na, 3)
    mask = build_teacher_forcing_mask(lay).allowed
    row = lay.span(2, Role.NOISY_VIDEO)[0]
    assert mask[row].sum() == 2 * (nx + na) + nx


def test_no_noisy_row_sees_future_chunks():
    lay = build_sequence_layout(4, 6, 2, 2)
    mask = build_teacher_forcing_mask(lay).allowed
    for r in range(lay.length):
        if lay.role_of_row[r] in (Role.NOISY_VIDEO, Role.NOISY_ACTION):
            future = lay.chunk_of_row[np.flatnonzero(mask[r])] > lay.chunk_of_row[r]
            assert not future.any()


def test_guidance_mask_block_diagonal():
    lay = build_sequence_layout(2, 4, 2, 3)
    mask = build_guidance_mask(lay).allowed
    lo, hi = lay.span(1, Role.CLEAN_VIDEO)
    for r in range(lo, hi):
        assert set(np.flatnonzero(mask[r])) == {3, 4, 5}
    assert mask.sum() == 2 * 2 * (4 + 2) * 3


def test_ego_mask_block_diagonal_audit():
    lay = build_sequence_layout(3, 4, 2, 2)
    assert assert_causal(build_ego_mask(lay), lay).ok


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_assert_causal_passes_on_built_masks(k):
    lay = build_sequence_layout(k, 8, 3, 2)
    assert assert_causal(build_teacher_forcing_mask(lay), lay).ok
    assert assert_causal(build_guidance_mask(lay), lay).ok
    assert assert_causal(build_ego_mask(lay), lay).ok


def test_assert_causal_reports_injected_fault():
    lay = build_sequence_layout(2, 4, 2, 2)
    mask = build_teacher_forcing_mask(lay)
    r = lay.span(0, Role.NOISY_VIDEO)[0]
    c = lay.span(1, Role.CLEAN_VIDEO)[0]
    mask.allowed[r, c] = True
    report = assert_causal(mask, lay)
    assert not report.ok
    assert report.violations == [(r, c)]


def test_assert_causal_guidance_off_block():
    lay = build_sequence_layout(2, 4, 2, 2)
    mask = build_guidance_mask(lay)
    r = lay.span(0, Role.CLEAN_VIDEO)[0]
    c = lay.guidance_span(1)[0]
    mask.allowed[r, c] = True
    report = assert_causal(mask, lay)
    assert report.violations == [(r, c)]
    assert lay.chunk_of_row[r] == 0 and c // lay.guidance_len == 1


def test_every_mask_row_nonempty():
    lay = build_sequence_layout(3, 4, 2, 2)
    for build in (build_teacher_forcing_mask, build_guidance_mask, build_ego_mask):
        assert build(lay).allowed.any(axis=1).all()


def test_layout_rejects_nonpositive_counts():
    with pytest.raises(ValueError):
        build_sequence_layout(0, 4, 2, 2)
    with pytest.raises(ValueError):
        build_sequence_layout(1, 4, 0, 2)


def test_pgm_rendering():
    lay = build_sequence_layout(1, 2, 1, 1)
    raw = mask_to_pgm(build_teacher_forcing_mask(lay).allowed)
    assert raw.startswith(b"P5\n6 6\n255\n")
    assert len(raw) == len(b"P5\n6 6\n255\n") + 36
