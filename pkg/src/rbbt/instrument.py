"""Counters for full-order pencil factorizations, used to audit the online phase."""

from collections import Counter

pencil_factorizations = Counter()


def record(kind, size):
    pencil_factorizations[kind] += 1
    pencil_factorizations['total'] += 1
    pencil_factorizations['largest'] = max(pencil_factorizations['largest'], size)


def reset():
    pencil_factorizations.clear()
