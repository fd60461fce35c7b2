"""
Multivariate Faà di Bruno expansion of ∂_{t1}^p ∂_{t2}^q a(x, F(t1, t2)) at 0.

The p copies of t1 and q copies of t2 are treated as distinct labels; every
set partition with j blocks contributes a_j(x) * prod over blocks of the
lattice entry indexed by the block's (t1, t2) multiplicities. Since F(0) = 0
the j-th y-derivative of a at 0 is a_j, and a_1 = 0 removes the single-block
partition.
"""
import itertools
import math
from collections import Counter
from functools import lru_cache

import numpy as np
from django.core.exceptions import ValidationError

from ..models import ChainRuleTerm


def set_partitions(n):
    """All set partitions of range(n) as tuples of blocks, via restricted growth strings."""
    if n == 0:
        yield ()
        return
    labels = [0] * n

    def walk(i, highest):
        if i == n:
            blocks = [[] for _ in range(highest + 1)]
            for element, label in enumerate(labels):
                blocks[label].append(element)
            yield tuple(tuple(block) for block in blocks)
            return
        for label in range(highest + 2):
            labels[i] = label
            yield from walk(i + 1, max(highest, label))

    labels[0] = 0
    yield from walk(1, 0)


def bell_number(n):
    """Number of set partitions of an n-element set."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for value in row:
            nxt.append(nxt[-1] + value)
        row = nxt
    return row[0]


def block_index(block, p):
    """(t1, t2) multiplicities of a block of labels; labels < p are t1."""
    n1 = sum(1 for element in block if element < p)
    return (n1, len(block) - n1)


@lru_cache(maxsize=None)
def chain_rule_terms(p, q):
    """Grouped Faà di Bruno terms for order (p, q), single-block partition excluded."""
    if p < 0 or q < 0:
        raise ValidationError("Orders must be nonnegative", code='invalid_order')
    grouped = Counter()
    for partition in set_partitions(p + q):
        if len(partition) < 2:
            continue
        blocks = tuple(sorted((block_index(block, p) for block in partition), reverse=True))
        grouped[(len(partition), blocks)] += 1
    return tuple(
        ChainRuleTerm(order, blocks, count)
        for (order, blocks), count in sorted(grouped.items())
    )


def brute_force_partitions(n):
    """
    Set partitions of range(n) from all n^n labellings, canonicalized; an
    independent count for checking :func:`set_partitions`.
    """
    seen = set()
    for labelling in itertools.product(range(max(n, 1)), repeat=n):
        blocks = {}
        for element, label in enumerate(labelling):
            blocks.setdefault(label, []).append(element)
        seen.add(tuple(sorted(tuple(block) for block in blocks.values())))
    return seen


def multiset_partitions(p, q):
    """Distinct partitions of the multiset {t1^p, t2^q} into blocks, by brute force."""
    shapes = set()
    for partition in brute_force_partitions(p + q):
        shapes.add(tuple(sorted((block_index(block, p) for block in partition), reverse=True)))
    return shapes


def term_count(p, q):
    """Total number of set partitions covered by the expansion, single block included."""
    return sum(term.count for term in chain_rule_terms(p, q)) + 1


def evaluate_terms(terms, coefficient, factor):
    """
    sum_terms count * coefficient(order) * prod factor(block).

    ``coefficient`` maps an order j to a (T, 1) or (T,) array; ``factor``
    maps a lattice index to a (T, Q) array.
    """
    total = None
    for term in terms:
        product = coefficient(term.order) * term.count
        for index in term.blocks:
            product = product * factor(index)
        total = product if total is None else total + product
    return total


def chain_rule_source(series, lattice, p, q, quadrature):
    """
    ∂_{t1}^p ∂_{t2}^q [a(x, F(t1, t2))] at 0 at the quadrature points,
    shape (T, Q), from the lattice entries of total order < p + q.
    """
    if p + q < 2:
        raise ValidationError("Chain-rule sources start at total order 2", code='invalid_order')
    shape = (lattice.mesh.n_triangles, quadrature.n_points)
    terms = [term for term in chain_rule_terms(p, q) if term.order <= series.order]
    if not terms or series.is_zero:
        for term in chain_rule_terms(p, q):
            for index in term.blocks:
                lattice[index]
        return np.zeros(shape)

    values = {}

    def factor(index):
        if index not in values:
            values[index] = quadrature.interpolate(lattice[index])
        return values[index]

    source = evaluate_terms(terms, lambda j: series.coefficient(j)[:, None], factor)
    return np.broadcast_to(source, shape).copy()


def chain_rule_multiplicity(blocks):
    """Number of labelled partitions with the given block shape (closed form check)."""
    p = sum(b[0] for b in blocks)
    q = sum(b[1] for b in blocks)
    count = math.factorial(p) * math.factorial(q)
    for b in blocks:
        count //= math.factorial(b[0]) * math.factorial(b[1])
    for multiplicity in Counter(blocks).values():
        count //= math.factorial(multiplicity)
    return count
