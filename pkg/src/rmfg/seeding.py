"""Seed derivation: every random stream descends from one root seed.

``derive_seed(root, "mfg", "phi")`` hashes the root and the labels with
BLAKE2b, so distinct labels give unrelated streams and reruns repeat them.
Inside a stream, path ``p`` draws from its own counter-based sequence.
"""
import hashlib

__all__ = ["derive_seed"]


def derive_seed(root: int, *labels) -> int:
    text = "/".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1
