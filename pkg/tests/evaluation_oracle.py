"""Second, independent implementations of the ranking metrics."""


def recount_recall(records, k):
    hits = 0
    for r in records:
        if r.rank_of_truth is not None and r.rank_of_truth <= k:
            hits += 1
    return hits / len(records)


def recount_mrr(records):
    total = 0.0
    for r in records:
        if r.rank_of_truth is not None:
            total += 1.0 / r.rank_of_truth
    return total / len(records)
