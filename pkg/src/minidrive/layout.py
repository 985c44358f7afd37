"""Token sequence layout and attention masks.

One clip window of K chunks is flattened into a single self-attention
sequence.  Each chunk contributes four contiguous spans, in this fixed
order: clean_video, clean_action, noisy_video, noisy_action.  Clean spans
are the teacher-forced context copies whose keys/values are what rollout
caches; noisy spans are the denoising queries.

Every attention rule lives in this module so that a different reading of
the dependency structure changes exactly one place:

  self-attention ("teacher forcing")
    clean_video  of chunk j -> clean spans of chunks < j, clean_video j
    clean_action of chunk j -> clean spans of chunks < j, clean_video j,
                               clean_action j
    noisy_video  of chunk j -> clean spans of chunks < j, noisy_video j
    noisy_action of chunk j -> clean spans of chunks < j, clean_video j
                               (the teacher-forced future latent),
                               noisy_action j

  guidance / ego cross-attention: block-diagonal — every token of chunk j
  attends exactly to the guidance (resp. ego) span of decision step j.

Within a chunk the video role precedes the action role causally, so the
cached context computed at inference (video first, then actions) matches
training bit for bit in structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .tensor import PreparedMask


class Role(IntEnum):
    CLEAN_VIDEO = 0
    CLEAN_ACTION = 1
    NOISY_VIDEO = 2
    NOISY_ACTION = 3


CLEAN_ROLES = (Role.CLEAN_VIDEO, Role.CLEAN_ACTION)
NOISY_ROLES = (Role.NOISY_VIDEO, Role.NOISY_ACTION)
ROLE_ORDER = (Role.CLEAN_VIDEO, Role.CLEAN_ACTION, Role.NOISY_VIDEO, Role.NOISY_ACTION)


@dataclass
class SequenceLayout:
    """Index arithmetic for one K-chunk window."""

    chunks: int
    n_video: int
    n_action: int
    guidance_len: int
    ego_len: int = 1
    spans: dict = field(init=False)
    length: int = field(init=False)
    chunk_of_row: np.ndarray = field(init=False)
    role_of_row: np.ndarray = field(init=False)

    def __post_init__(self):
        if min(self.chunks, self.n_video, self.n_action, self.guidance_len, self.ego_len) <= 0:
            raise ValueError("all layout counts must be positive")
        block = 2 * (self.n_video + self.n_action)
        self.length = self.chunks * block
        self.spans = {}
        chunk_of = np.empty(self.length, dtype=np.int64)
        role_of = np.empty(self.length, dtype=np.int64)
        cursor = 0
        for k in range(self.chunks):
            for role in ROLE_ORDER:
                n = self.n_video if role in (Role.CLEAN_VIDEO, Role.NOISY_VIDEO) else self.n_action
                self.spans[(k, role)] = (cursor, cursor + n)
                chunk_of[cursor:cursor + n] = k
                role_of[cursor:cursor + n] = int(role)
                cursor += n
        self.chunk_of_row = chunk_of
        self.role_of_row = role_of

    @property
    def block(self) -> int:
        return 2 * (self.n_video + self.n_action)

    def span(self, chunk: int, role: Role) -> tuple[int, int]:
        return self.spans[(chunk, role)]

    def guidance_span(self, step: int) -> tuple[int, int]:
        return (step * self.guidance_len, (step + 1) * self.guidance_len)

    def ego_span(self, step: int) -> tuple[int, int]:
        return (step * self.ego_len, (step + 1) * self.ego_len)

    @property
    def guidance_total(self) -> int:
        return self.chunks * self.guidance_len

    @property
    def ego_total(self) -> int:
        return self.chunks * self.ego_len


@dataclass
class AttentionMask:
    allowed: np.ndarray
    row_domain: str
    col_domain: str

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        if not self.allowed.any(axis=1).all():
            raise ValueError("every mask row must allow at least one column")

    def prepared(self) -> PreparedMask:
        return PreparedMask(self.allowed)


def build_sequence_layout(chunks: int, n_video: int, n_action: int,
                          guidance_len: int, ego_len: int = 1) -> SequenceLayout:
    return SequenceLayout(chunks, n_video, n_action, guidance_len, ego_len)


def build_teacher_forcing_mask(layout: SequenceLayout) -> AttentionMask:
    ck = layout.chunk_of_row
    rl = layout.role_of_row
    cr = ck[:, None]
    cc = ck[None, :]
    rr = rl[:, None]
    rc = rl[None, :]
    col_clean = (rc == Role.CLEAN_VIDEO) | (rc == Role.CLEAN_ACTION)
    history = col_clean & (cc < cr)
    same = cc == cr
    allowed = history.copy()
    # own-chunk columns, per row role
    allowed |= (rr == Role.CLEAN_VIDEO) & same & (rc == Role.CLEAN_VIDEO)
    allowed |= (rr == Role.CLEAN_ACTION) & same & ((rc == Role.CLEAN_VIDEO) | (rc == Role.CLEAN_ACTION))
    allowed |= (rr == Role.NOISY_VIDEO) & same & (rc == Role.NOISY_VIDEO)
    allowed |= (rr == Role.NOISY_ACTION) & same & ((rc == Role.CLEAN_VIDEO) | (rc == Role.NOISY_ACTION))
    return AttentionMask(allowed, "sequence", "sequence")


def _step_mask(layout: SequenceLayout, span_len: int) -> np.ndarray:
    steps = np.arange(layout.chunks).repeat(span_len)[None, :]
    return layout.chunk_of_row[:, None] == steps


def build_guidance_mask(layout: SequenceLayout) -> AttentionMask:
    return AttentionMask(_step_mask(layout, layout.guidance_len), "sequence", "guidance")


def build_ego_mask(layout: SequenceLayout) -> AttentionMask:
    return AttentionMask(_step_mask(layout, layout.ego_len), "sequence", "ego")


@dataclass
class CausalAuditReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def _expected_self(row_chunk, row_role, col_chunk, col_role) -> bool:
    col_clean = col_role in CLEAN_ROLES
    if col_clean and col_chunk < row_chunk:
        return True
    if col_chunk != row_chunk:
        return False
    if row_role == Role.CLEAN_VIDEO:
        return col_role == Role.CLEAN_VIDEO
    if row_role == Role.CLEAN_ACTION:
        return col_role in (Role.CLEAN_VIDEO, Role.CLEAN_ACTION)
    if row_role == Role.NOISY_VIDEO:
        return col_role == Role.NOISY_VIDEO
    return col_role in (Role.CLEAN_VIDEO, Role.NOISY_ACTION)


def assert_causal(mask: AttentionMask, layout: SequenceLayout) -> CausalAuditReport:
    """Exhaustively audit a mask against the dependency rules.

    Violations are returned as data, one (row, col) pair each, never raised.
    Works for the self-attention mask and for the block-diagonal guidance
    and ego cross-attention masks (selected by the mask's col_domain).
    """
    allowed = mask.allowed
    violations: list[tuple[int, int]] = []
    if mask.col_domain == "sequence":
        if allowed.shape != (layout.length, layout.length):
            raise ValueError("mask does not match layout dimensions")
        for r in range(layout.length):
            rc, rr = int(layout.chunk_of_row[r]), Role(layout.role_of_row[r])
            row = allowed[r]
            for c in range(layout.length):
                want = _expected_self(rc, rr, int(layout.chunk_of_row[c]),
                                      Role(layout.role_of_row[c]))
                if bool(row[c]) != want:
                    violations.append((r, c))
    elif mask.col_domain in ("guidance", "ego"):
        span = layout.guidance_len if mask.col_domain == "guidance" else layout.ego_len
        if allowed.shape != (layout.length, layout.chunks * span):
            raise ValueError("mask does not match layout dimensions")
        for r in range(layout.length):
            rc = int(layout.chunk_of_row[r])
            for c in range(allowed.shape[1]):
                want = (c // span) == rc
                if bool(allowed[r, c]) != want:
                    violations.append((r, c))
    else:
        raise ValueError(f"unknown mask column domain: {mask.col_domain}")
    return CausalAuditReport(not violations, violations)


def mask_to_pgm(allowed: np.ndarray) -> bytes:
    """Render a boolean matrix as a binary PGM image (allowed = white)."""
    a = np.asarray(allowed, dtype=bool)
    header = f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode()
    return header + (a.astype(np.uint8) * 255).tobytes()


def write_pgm(path, allowed: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(mask_to_pgm(allowed))
