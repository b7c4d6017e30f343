"""Merkle trees over 32-byte leaf digests, plus inclusion proofs.

Conventions, pinned by the golden vectors: adjacent nodes pair left-to-right
and the last node of an odd level pairs with itself; a single leaf is its own
root; the empty tree's root is the digest of the empty byte string.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import DIGEST_LEN, digest

EMPTY_ROOT = digest(b"")


@dataclass(frozen=True)
class InclusionProof:
    """Authentication path from one leaf to the root.

    Each step is ``(sibling_digest, sibling_on_left)``; the path runs from
    the leaf level upward and has exactly tree-height entries.
    """

    leaf_index: int
    path: tuple[tuple[bytes, bool], ...]


class MerkleTree:
    def __init__(self, leaves: list[bytes]):
        for leaf in leaves:
            if len(leaf) != DIGEST_LEN:
                raise ValueError("leaves must be 32-byte digests")
        levels = [list(leaves)]
        while len(levels[-1]) > 1:
            current = levels[-1]
            nxt = []
            for i in range(0, len(current), 2):
                left = current[i]
                right = current[i + 1] if i + 1 < len(current) else current[i]
                nxt.append(digest(left + right))
            levels.append(nxt)
        self.leaves = tuple(leaves)
        self.levels = tuple(tuple(level) for level in levels)

    @property
    def root(self) -> bytes:
        top = self.levels[-1]
        return top[0] if top else EMPTY_ROOT

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    def prove_inclusion(self, index: int) -> InclusionProof:
        if not 0 <= index < len(self.leaves):
            raise IndexError(f"leaf index {index} out of range")
        path = []
        pos = index
        for level in self.levels[:-1]:
            if pos % 2 == 0:
                sibling = level[pos + 1] if pos + 1 < len(level) else level[pos]
                path.append((sibling, False))
            else:
                path.append((level[pos - 1], True))
            pos //= 2
        return InclusionProof(leaf_index=index, path=tuple(path))


def build_tree(leaf_digests: list[bytes]) -> MerkleTree:
    return MerkleTree(list(leaf_digests))


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    return tree.prove_inclusion(index)


def verify_inclusion(root: bytes, leaf: bytes, proof: InclusionProof) -> bool:
    """Recompute the root from ``leaf`` along ``proof`` and compare."""
    node = leaf
    for sibling, sibling_on_left in proof.path:
        node = digest(sibling + node) if sibling_on_left else digest(node + sibling)
    return node == root
