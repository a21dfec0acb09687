import hashlib
from typing import Iterable, Sequence

import numpy as np

FAVORITE_PRIME = 10**9 + 7


def stable_key(*parts) -> int:
    '''
    returns a 128-bit integer key attached to the repr of the given parts

    parts: any objects with a stable repr (ints, strings, tuples of those)

    Example:
    stable_key(0, "device/draft") is the Philox key of the device draft stream for seed 0
    '''
    obj_hash = '#'.join(repr(p) for p in parts)
    md5obj_hash = hashlib.md5(obj_hash.encode())
    return int(md5obj_hash.hexdigest(), 16)


def tokens_digest(tokens: Sequence[int]) -> bytes:
    '''
    order-sensitive digest of a token list
    '''
    return hashlib.md5(np.asarray(tokens, dtype=np.uint32).tobytes()).digest()


def ids_digest(ids: Iterable[int]) -> bytes:
    '''
    order-insensitive digest of a set of ids (sorted before hashing)
    '''
    return tokens_digest(sorted(int(i) for i in ids))


def key_from(*parts) -> int:
    '''
    like stable_key, but accepts raw digests (bytes) among the parts
    '''
    m = hashlib.md5()
    for p in parts:
        m.update(p if isinstance(p, bytes) else repr(p).encode())
        m.update(b'#')
    return int(m.hexdigest(), 16)
