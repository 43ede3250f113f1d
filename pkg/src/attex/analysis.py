"""Attention-weight analysis: per-context group weights, neutral vs
sentiment weight distributions with Gaussian KDE, and heatmap export.

A context's weight for a term group is the sum of attention weights over
its positions in that group. Distributions of these weights are compared
between neutral contexts (class N) and sentiment-labeled ones (class S).
"""

import numpy as np

from . import lexicons as lx
from . import tensorgrad as tg
from . import termizer as tz

CLASS_NEUTRAL = "N"
CLASS_SENTIMENT = "S"

REPORT_GROUPS = (tz.GROUP_PREP, tz.GROUP_FRAMES, tz.GROUP_SENTIMENT)

GRID_POINTS = 201
GRID_MAX = 0.2

UNDEFINED = "NA"


def default_grid():
    return np.linspace(0.0, GRID_MAX, GRID_POINTS)


def label_class(label):
    return CLASS_NEUTRAL if label == lx.NEUTRAL else CLASS_SENTIMENT


class GroupWeightSample:
    __slots__ = ("context_id", "group", "weight", "label_class")

    def __init__(self, context_id, group, weight, label_class):
        if not 0.0 <= weight <= 1.0 + 1e-9:
            raise ValueError("group weight %r outside [0, 1]" % (weight,))
        if label_class not in (CLASS_NEUTRAL, CLASS_SENTIMENT):
            raise ValueError("unknown label class: %r" % (label_class,))
        self.context_id = context_id
        self.group = group
        self.weight = float(weight)
        self.label_class = label_class


class DistributionSummary:
    """Per-group means and KDE curves, split by context class.

    Means and curves are None when a class has no contexts; n_count and
    s_count say how many contexts fed each side.
    """

    __slots__ = ("group", "mean_n", "mean_s", "kde_n", "kde_s", "grid",
                 "n_count", "s_count")

    def __init__(self, group, mean_n, mean_s, kde_n, kde_s, grid,
                 n_count, s_count):
        self.group = group
        self.mean_n = mean_n
        self.mean_s = mean_s
        self.kde_n = kde_n
        self.kde_s = kde_s
        self.grid = grid
        self.n_count = n_count
        self.s_count = s_count


def extract_alpha(model, sample):
    """Attention weights over the real positions of one context."""
    _, out = model.forward(tg.Tape(), sample.terms)
    if out.alpha is None:
        raise ValueError("encoder kind %r exposes no attention weights"
                         % (model.encoder.cfg.kind,))
    n_real = len(sample.terms.terms)
    return np.asarray(out.alpha[:n_real], dtype=float)


def context_group_weight(alpha, terms, group, sentiment_lexicon=None,
                         preposition_list=None):
    """Sum of weights over positions whose term belongs to the group."""
    if len(alpha) != len(terms):
        raise ValueError("weight count %d does not match %d terms"
                         % (len(alpha), len(terms)))
    return float(sum(
        a for a, term in zip(alpha, terms)
        if tz.group_of(term, sentiment_lexicon, preposition_list) == group))


def silverman_bandwidth(samples):
    """1.06 * sample std * N^(-1/5), floored at 1e-3."""
    x = np.asarray(samples, dtype=float)
    sigma = x.std(ddof=1) if len(x) > 1 else 0.0
    return max(1.06 * sigma * len(x) ** -0.2, 1e-3)


def kde(samples, grid, bandwidth=None):
    """Gaussian kernel density of the samples on the grid."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ValueError("kde needs at least one sample")
    bw = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    grid = np.asarray(grid, dtype=float)
    u = (grid[:, None] - x[None, :]) / bw
    phi = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    return phi.sum(axis=1) / (x.size * bw)


def collect_group_weights(model, contexts, sentiment_lexicon=None,
                          preposition_list=None):
    """GroupWeightSamples for every context and report group."""
    out = []
    for idx, sample in enumerate(contexts):
        alpha = extract_alpha(model, sample)
        cls = label_class(sample.label)
        cid = (sample.doc_id, sample.sentence_idx) + sample.opinion_key()[1:]
        for group in REPORT_GROUPS:
            weight = context_group_weight(alpha, sample.terms.terms, group,
                                          sentiment_lexicon, preposition_list)
            out.append(GroupWeightSample(cid, group, min(weight, 1.0), cls))
    return out


def summarize_distributions(model, contexts, sentiment_lexicon=None,
                            preposition_list=None, grid=None):
    """One DistributionSummary per report group over the given contexts."""
    if grid is None:
        grid = default_grid()
    grid = np.asarray(grid, dtype=float)
    weights = collect_group_weights(model, contexts, sentiment_lexicon,
                                    preposition_list)
    summaries = []
    for group in REPORT_GROUPS:
        sides = {}
        counts = {}
        for cls in (CLASS_NEUTRAL, CLASS_SENTIMENT):
            values = [w.weight for w in weights
                      if w.group == group and w.label_class == cls]
            counts[cls] = len(values)
            if values:
                sides[cls] = (float(np.mean(values)), kde(values, grid))
            else:
                sides[cls] = (None, None)
        summaries.append(DistributionSummary(
            group,
            sides[CLASS_NEUTRAL][0], sides[CLASS_SENTIMENT][0],
            sides[CLASS_NEUTRAL][1], sides[CLASS_SENTIMENT][1],
            grid, counts[CLASS_NEUTRAL], counts[CLASS_SENTIMENT]))
    return summaries


def export_heatmap(sample, alpha, path, sentiment_lexicon=None,
                   preposition_list=None):
    """TSV of per-term weights normalized by the context maximum."""
    terms = sample.terms.terms
    if len(alpha) != len(terms):
        raise ValueError("weight count %d does not match %d terms"
                         % (len(alpha), len(terms)))
    top = max(alpha)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("position\tterm\tgroup\tnormalized_weight\n")
        for i, (a, term) in enumerate(zip(alpha, terms)):
            group = tz.group_of(term, sentiment_lexicon, preposition_list)
            fh.write("%d\t%s\t%s\t%s\n" % (i, term.display(), group,
                                           repr(float(a / top))))


def write_distribution_csv(summaries, path):
    """CSV of the KDE curves: group,label_class,grid_point,density."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group,label_class,grid_point,density\n")
        for summary in summaries:
            for cls, curve in ((CLASS_NEUTRAL, summary.kde_n),
                               (CLASS_SENTIMENT, summary.kde_s)):
                if curve is None:
                    continue
                for g, d in zip(summary.grid, curve):
                    fh.write("%s,%s,%s,%s\n" % (summary.group, cls,
                                                repr(float(g)),
                                                repr(float(d))))


def write_means_csv(summaries, path):
    """CSV of the expected values: group,mean_N,mean_S."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("group,mean_N,mean_S\n")
        for summary in summaries:
            mean_n = UNDEFINED if summary.mean_n is None \
                else repr(float(summary.mean_n))
            mean_s = UNDEFINED if summary.mean_s is None \
                else repr(float(summary.mean_s))
            fh.write("%s,%s,%s\n" % (summary.group, mean_n, mean_s))
