"""Hard bindings: exclusion-range hashing and per-track Merkle trees."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Sequence

from .bmff import (
    MANIFEST_STORE_BOX,
    Fragment,
    InitSegment,
    Kind,
    MediaObject,
    iter_boxes,
    serialize_fragment,
    serialize_init,
    serialize_media,
)
from .errors import EmptyLeaves, IndexOutOfRange, InvariantViolation

ALGORITHM = "sha256"
DIGEST_SIZE = 32


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hash_fragment(frag: Fragment) -> bytes:
    """Digest of the serialized fragment with its provenance box left out."""
    if frag.provenance is not None:
        frag = replace(frag, provenance=None)
    return sha256(serialize_fragment(frag))


def hash_init_segment(init: InitSegment) -> bytes:
    if init.provenance is not None:
        init = replace(init, provenance=None)
    return sha256(serialize_init(init))


# ---------------------------------------------------------------------------
# Merkle trees


@dataclass(frozen=True)
class MerkleTree:
    levels: tuple[tuple[bytes, ...], ...]  # levels[0] = leaves, levels[-1] = (root,)

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def leaf_count(self) -> int:
        return len(self.levels[0])

    @property
    def height(self) -> int:
        return len(self.levels) - 1


@dataclass(frozen=True)
class MerkleRow:
    track_id: int
    leaf_count: int
    root: bytes
    algorithm: str = ALGORITHM


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    siblings: tuple[bytes, ...]


def build_merkle(leaves: Sequence[bytes]) -> MerkleTree:
    """Binary SHA-256 tree; an odd node at the end of a level is paired with itself."""
    if not leaves:
        raise EmptyLeaves("a Merkle tree needs at least one leaf")
    level = tuple(bytes(x) for x in leaves)
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(sha256(left + right))
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(tuple(levels))


def prove_inclusion(tree: MerkleTree, leaf_index: int) -> InclusionProof:
    if not 0 <= leaf_index < tree.leaf_count:
        raise IndexOutOfRange(f"leaf {leaf_index} not in tree of {tree.leaf_count} leaves")
    siblings = []
    idx = leaf_index
    for level in tree.levels[:-1]:
        sib = idx ^ 1
        siblings.append(level[sib] if sib < len(level) else level[idx])
        idx //= 2
    return InclusionProof(leaf_index, tuple(siblings))


def tree_height(leaf_count: int) -> int:
    return (leaf_count - 1).bit_length()


def verify_inclusion(root: bytes, leaf_digest: bytes, proof: InclusionProof, leaf_count: int | None = None) -> bool:
    """Fold ``leaf_digest`` up through ``proof`` and compare with ``root``.

    Passing ``leaf_count`` also pins the proof shape: the index must be in
    range and the sibling count must equal the tree height.
    """
    if proof.leaf_index < 0:
        return False
    if leaf_count is not None:
        if not 0 <= proof.leaf_index < leaf_count or len(proof.siblings) != tree_height(leaf_count):
            return False
    elif proof.leaf_index >> len(proof.siblings):
        return False
    node = leaf_digest
    idx = proof.leaf_index
    for sib in proof.siblings:
        node = sha256(sib + node) if idx & 1 else sha256(node + sib)
        idx >>= 1
    return node == root


# ---------------------------------------------------------------------------
# monolithic exclusion hashing


@dataclass(frozen=True)
class ExclusionRange:
    offset: int
    length: int


def check_exclusions(exclusions: Sequence[ExclusionRange], size: int) -> None:
    pos = 0
    for ex in exclusions:
        if ex.offset < pos or ex.length < 0 or ex.offset + ex.length > size:
            raise InvariantViolation(f"exclusion {ex} is unsorted, overlapping or out of bounds")
        pos = ex.offset + ex.length


def skip_hash(data: bytes, exclusions: Sequence[ExclusionRange]) -> bytes:
    check_exclusions(exclusions, len(data))
    h = hashlib.sha256()
    pos = 0
    view = memoryview(data)
    for ex in exclusions:
        h.update(view[pos : ex.offset])
        pos = ex.offset + ex.length
    h.update(view[pos:])
    return h.digest()


def manifest_exclusions(data: bytes) -> list[ExclusionRange]:
    """The exclusion list covering exactly the top-level manifest store box, if any."""
    return [
        ExclusionRange(span.start, span.size)
        for span in iter_boxes(data)
        if span.box_type == MANIFEST_STORE_BOX
    ]


def hash_monolithic(obj: MediaObject, exclusions: Sequence[ExclusionRange] | None = None) -> bytes:
    """SHA-256 over the serialized object with ``exclusions`` skipped.

    ``None`` means "exclude the container manifest box"; any explicit list
    must cover that box exactly.
    """
    if obj.kind is not Kind.MONOLITHIC:
        raise InvariantViolation("exclusion hashing applies to monolithic objects")
    data = serialize_media(obj)
    expected = manifest_exclusions(data)
    if exclusions is None:
        exclusions = expected
    elif list(exclusions) != expected:
        raise InvariantViolation("exclusions must cover exactly the container manifest box")
    return skip_hash(data, exclusions)
