"""Multiset calculus for total derivatives through an implicit state.

Differentiating a map X(m, u(m)) repeatedly in directions p_1, ..., p_k
produces, by the chain rule, a sum of partial derivatives of X contracted
with the directions and with state sensitivities u^B, one per block B of
directions routed through the state.  Directions are canonicalized into a
multiset (distinct vectors with multiplicities), so a derivative node is a
sub-multiset and the dependency lattice of an order-k derivative has one node
per sub-multiset: k + 1 nodes when all directions coincide, 2^k when all
differ.

``expansion`` builds the symbolic term list for the full total derivative of
a generic X once per multiset signature; evaluators then substitute concrete
partials.  Terms are keyed by the explicit-derivative multiset J and the
unordered collection of state blocks, with integer coefficients, and the
single term whose one block is the whole multiset carries the highest-order
unknown.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import Counter
from functools import lru_cache

import numpy as np


def canonical_directions(vectors):
    """Group identical direction vectors.

    Returns (unique vectors, multiplicities, digests): the distinct vectors
    in first-appearance order, how often each occurs, and a stable byte
    digest per distinct vector for cache keying.  Identity is exact bitwise
    equality of the float64 representation.
    """
    unique, counts, digests = [], [], []
    seen = {}
    for v in vectors:
        v = np.ascontiguousarray(v, dtype=float)
        dig = hashlib.blake2b(v.tobytes(), digest_size=16).digest()
        if dig in seen:
            counts[seen[dig]] += 1
        else:
            seen[dig] = len(unique)
            unique.append(v)
            counts.append(1)
            digests.append(dig)
    return unique, tuple(counts), tuple(digests)


def sub_multisets(counts):
    """All nonzero sub-multisets of ``counts``, smallest total order first."""
    axes = [range(c + 1) for c in counts]
    subs = [s for s in itertools.product(*axes) if any(s)]
    subs.sort(key=lambda s: (sum(s), s))
    return subs


def lattice_size(counts):
    """Number of lattice nodes including the root state."""
    out = 1
    for c in counts:
        out *= c + 1
    return out


@lru_cache(maxsize=None)
def expansion(counts):
    """Symbolic total derivative of X(m, u(m)) for a direction multiset.

    Returns a tuple of ((J, blocks), coefficient) entries where J is a
    count vector of directions hitting the explicit m slot and ``blocks`` is
    a sorted tuple of count vectors, each a block of directions routed
    through a state sensitivity.  The zeroth expansion is X itself.
    """
    counts = tuple(counts)
    if not any(counts):
        zero = (0,) * len(counts)
        return (((zero, ()), 1),)
    # differentiate the expansion of the multiset minus one copy of the
    # highest-index remaining direction
    label = max(i for i, c in enumerate(counts) if c)
    parent = list(counts)
    parent[label] -= 1
    terms = Counter()
    unit = tuple(1 if i == label else 0 for i in range(len(counts)))
    for (j, blocks), coef in expansion(tuple(parent)):
        # route through the explicit m dependence
        j_up = tuple(a + b for a, b in zip(j, unit))
        terms[(j_up, blocks)] += coef
        # route through the evaluation state: a fresh singleton block
        terms[(j, tuple(sorted(blocks + (unit,))))] += coef
        # route through each existing block argument
        for pick in set(blocks):
            grown = tuple(a + b for a, b in zip(pick, unit))
            rest = list(blocks)
            rest.remove(pick)
            terms[(j, tuple(sorted(rest + [grown])))] += coef * blocks.count(pick)
    return tuple(terms.items())


def block_signature(digests, counts):
    """Stable cache key for the sub-multiset ``counts`` of directions."""
    return tuple(sorted((digests[i], c) for i, c in enumerate(counts) if c))
