"""Document ingestion, neutral-pair augmentation, context extraction,
and train/test or fold splitting.

Documents arrive as JSON lines (doc_id, sentences, mentions, groups),
directed opinions as TSV. Neutral opinions are added for every ordered
entity pair co-occurring in a sentence that carries no annotation, and
one classification sample is produced per (opinion, sentence) whose
sentence mentions both sides.
"""

import json
import os
from collections import defaultdict

import numpy as np

from . import lexicons as lx
from . import termizer as tz
from .errors import DataError

LABELS = lx.POLARITIES
ANNOTATED = "annotated"
AUGMENTED = "augmented"

DOCUMENTS_FILENAME = "documents.jsonl"
OPINIONS_FILENAME = "opinions.tsv"


class Sentence:
    """Surface tokens with character offsets (space-joined layout)."""

    __slots__ = ("tokens", "char_offsets")

    def __init__(self, tokens):
        self.tokens = list(tokens)
        offsets = []
        pos = 0
        for tok in self.tokens:
            offsets.append(pos)
            pos += len(tok) + 1
        self.char_offsets = offsets

    def __len__(self):
        return len(self.tokens)


class EntityMention:
    __slots__ = ("sentence_idx", "token_span", "group_id")

    def __init__(self, sentence_idx, token_span, group_id):
        start, end = token_span
        if start >= end:
            raise ValueError("empty mention span %r" % (token_span,))
        self.sentence_idx = sentence_idx
        self.token_span = (start, end)
        self.group_id = group_id

    def __repr__(self):
        return "EntityMention(%d, %r, %r)" % (
            self.sentence_idx, self.token_span, self.group_id)


class SynonymGroup:
    __slots__ = ("group_id", "surface_variants")

    def __init__(self, group_id, surface_variants):
        variants = list(surface_variants)
        if not variants:
            raise ValueError("synonym group %r has no variants" % (group_id,))
        lowered = [v.lower() for v in variants]
        if len(set(lowered)) != len(lowered):
            raise ValueError("synonym group %r repeats a variant" % (group_id,))
        self.group_id = group_id
        self.surface_variants = variants


class Document:
    __slots__ = ("doc_id", "sentences", "entity_mentions", "synonym_groups")

    def __init__(self, doc_id, sentences, entity_mentions, synonym_groups):
        self.doc_id = doc_id
        self.sentences = list(sentences)
        self.entity_mentions = list(entity_mentions)
        self.synonym_groups = list(synonym_groups)
        self._validate()

    def _validate(self):
        known = {g.group_id for g in self.synonym_groups}
        if len(known) != len(self.synonym_groups):
            raise ValueError("duplicate synonym group id")
        spans_by_sentence = defaultdict(list)
        for m in self.entity_mentions:
            if not 0 <= m.sentence_idx < len(self.sentences):
                raise ValueError("mention sentence %d out of range" % m.sentence_idx)
            start, end = m.token_span
            if not 0 <= start < end <= len(self.sentences[m.sentence_idx]):
                raise ValueError("mention span %r out of bounds in sentence %d"
                                 % (m.token_span, m.sentence_idx))
            if m.group_id not in known:
                raise ValueError("mention references unknown group %r" % (m.group_id,))
            spans_by_sentence[m.sentence_idx].append(m.token_span)
        for idx, spans in spans_by_sentence.items():
            spans.sort()
            for (s1, e1), (s2, _) in zip(spans, spans[1:]):
                if s2 < e1:
                    raise ValueError("overlapping mention spans in sentence %d" % idx)

    def mentions_in_sentence(self, sentence_idx):
        return [m for m in self.entity_mentions if m.sentence_idx == sentence_idx]


class Opinion:
    """Directed attitude between two synonym groups."""

    __slots__ = ("source_group", "target_group", "label", "provenance")

    def __init__(self, source_group, target_group, label, provenance=ANNOTATED):
        if source_group == target_group:
            raise ValueError("opinion source equals target: %r" % (source_group,))
        if label not in LABELS:
            raise ValueError("unknown label: %r" % (label,))
        if provenance not in (ANNOTATED, AUGMENTED):
            raise ValueError("unknown provenance: %r" % (provenance,))
        if provenance == ANNOTATED and label == lx.NEUTRAL:
            raise ValueError("annotated opinions cannot be neutral")
        self.source_group = source_group
        self.target_group = target_group
        self.label = label
        self.provenance = provenance

    def pair(self):
        return (self.source_group, self.target_group)

    def _key(self):
        return (self.source_group, self.target_group, self.label, self.provenance)

    def __eq__(self, other):
        return isinstance(other, Opinion) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return "Opinion(%r, %r, %r, %r)" % self._key()


class ContextSample:
    """One (subject, object, sentence) classification instance."""

    __slots__ = ("doc_id", "sentence_idx", "terms", "label",
                 "source_group", "target_group")

    def __init__(self, doc_id, sentence_idx, terms, label,
                 source_group, target_group):
        if label not in LABELS:
            raise ValueError("unknown label: %r" % (label,))
        self.doc_id = doc_id
        self.sentence_idx = sentence_idx
        self.terms = terms
        self.label = label
        self.source_group = source_group
        self.target_group = target_group

    @property
    def subj_pos(self):
        return self.terms.subj_pos

    @property
    def obj_pos(self):
        return self.terms.obj_pos

    def opinion_key(self):
        return (self.doc_id, self.source_group, self.target_group)


class FoldAssignment:
    __slots__ = ("fold_of_doc", "sentence_counts")

    def __init__(self, fold_of_doc, sentence_counts):
        self.fold_of_doc = dict(fold_of_doc)
        self.sentence_counts = list(sentence_counts)

    def docs_in_fold(self, fold):
        return sorted(d for d, f in self.fold_of_doc.items() if f == fold)


class Corpus:
    """Documents plus their annotated opinions."""

    def __init__(self, documents, opinions_by_doc):
        self.documents = list(documents)
        self.opinions_by_doc = {k: list(v) for k, v in opinions_by_doc.items()}
        known = {d.doc_id for d in self.documents}
        for doc_id in self.opinions_by_doc:
            if doc_id not in known:
                raise ValueError("opinions reference unknown document %r" % (doc_id,))

    def document(self, doc_id):
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)

    def opinions(self, doc_id):
        return self.opinions_by_doc.get(doc_id, [])


def _parse_document(obj, path, lineno):
    def fail(message):
        raise DataError(message, path=path, line=lineno)

    if not isinstance(obj, dict):
        fail("document record must be an object")
    doc_id = obj.get("doc_id")
    if not isinstance(doc_id, str) or not doc_id:
        fail("doc_id must be a non-empty string")
    sentences_field = obj.get("sentences")
    if not isinstance(sentences_field, list):
        fail("sentences must be an array of token arrays")
    sentences = []
    for s in sentences_field:
        if not isinstance(s, list) or not all(isinstance(t, str) for t in s):
            fail("sentence must be an array of strings")
        sentences.append(Sentence(s))
    groups = []
    for g in obj.get("groups", []):
        if (not isinstance(g, list) or len(g) < 2
                or not all(isinstance(x, str) for x in g)):
            fail("group must be [group_id, variant, ...]")
        try:
            groups.append(SynonymGroup(g[0], g[1:]))
        except ValueError as exc:
            fail(str(exc))
    mentions = []
    for m in obj.get("mentions", []):
        if (not isinstance(m, list) or len(m) != 4
                or not all(isinstance(x, int) for x in m[:3])
                or not isinstance(m[3], str)):
            fail("mention must be [sentence_idx, start, end, group_id]")
        try:
            mentions.append(EntityMention(m[0], (m[1], m[2]), m[3]))
        except ValueError as exc:
            fail(str(exc))
    try:
        return Document(doc_id, sentences, mentions, groups)
    except ValueError as exc:
        fail(str(exc))


def load_documents(path):
    """Read one document per JSON line."""
    documents = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError("invalid JSON: %s" % exc, path=path, line=lineno)
            doc = _parse_document(obj, path, lineno)
            if doc.doc_id in seen:
                raise DataError("duplicate doc_id %r" % doc.doc_id,
                                path=path, line=lineno)
            seen.add(doc.doc_id)
            documents.append(doc)
    return documents


def load_opinions(path, documents):
    """Read `doc_id<TAB>source<TAB>target<TAB>label` annotated opinions."""
    by_id = {d.doc_id: d for d in documents}
    opinions_by_doc = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise DataError("expected 4 tab-separated fields",
                                path=path, line=lineno)
            doc_id, source, target, label = fields
            if doc_id not in by_id:
                raise DataError("unknown doc_id %r" % doc_id,
                                path=path, line=lineno)
            doc = by_id[doc_id]
            known = {g.group_id for g in doc.synonym_groups}
            if source not in known or target not in known:
                raise DataError("opinion references unknown group",
                                path=path, line=lineno)
            try:
                opinion = Opinion(source, target, label, ANNOTATED)
            except ValueError as exc:
                raise DataError(str(exc), path=path, line=lineno)
            if opinion.pair() in {o.pair() for o in opinions_by_doc[doc_id]}:
                raise DataError("duplicate opinion pair", path=path, line=lineno)
            opinions_by_doc[doc_id].append(opinion)
    return dict(opinions_by_doc)


def load_corpus(path, opinions_path=None):
    """Load documents (and opinions when present) into a Corpus.

    `path` may be a directory holding documents.jsonl/opinions.tsv or
    the documents file itself, with the opinions file given separately.
    """
    if os.path.isdir(path):
        documents_path = os.path.join(path, DOCUMENTS_FILENAME)
        candidate = os.path.join(path, OPINIONS_FILENAME)
        if opinions_path is None and os.path.exists(candidate):
            opinions_path = candidate
    else:
        documents_path = path
    documents = load_documents(documents_path)
    opinions_by_doc = {}
    if opinions_path is not None:
        opinions_by_doc = load_opinions(opinions_path, documents)
    return Corpus(documents, opinions_by_doc)


def load_split_manifest(path):
    """Read `doc_id<TAB>train|test` lines into a dict."""
    manifest = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or fields[1] not in ("train", "test"):
                raise DataError("expected 'doc_id<TAB>train|test'",
                                path=path, line=lineno)
            if fields[0] in manifest:
                raise DataError("duplicate doc_id %r" % fields[0],
                                path=path, line=lineno)
            manifest[fields[0]] = fields[1]
    return manifest


def augment_neutral(doc, annotated):
    """Add neutral opinions for unannotated ordered co-occurring pairs."""
    groups_by_sentence = defaultdict(set)
    for m in doc.entity_mentions:
        groups_by_sentence[m.sentence_idx].add(m.group_id)
    cooccurring = set()
    for groups in groups_by_sentence.values():
        for g1 in groups:
            for g2 in groups:
                if g1 != g2:
                    cooccurring.add((g1, g2))
    present = {op.pair() for op in annotated}
    added = [Opinion(g1, g2, lx.NEUTRAL, AUGMENTED)
             for (g1, g2) in sorted(cooccurring - present)]
    return list(annotated) + added


def extract_contexts(doc, opinions, frame_lexicon=None, lemmatizer=tz.lemmatize):
    """One sample per (opinion, sentence) mentioning both sides.

    When a side has several mentions in a sentence, the mention pair
    with the smallest start-token distance wins; ties prefer the
    leftmost subject, then the leftmost object.
    """
    sent_lemmas = [[lemmatizer(t) for t in s.tokens] for s in doc.sentences]
    if frame_lexicon is None:
        sent_frames = [[] for _ in doc.sentences]
    else:
        sent_frames = [lx.match_frames(lemmas, frame_lexicon)
                       for lemmas in sent_lemmas]
    mentions_by_sentence = defaultdict(list)
    for m in doc.entity_mentions:
        mentions_by_sentence[m.sentence_idx].append(m)

    samples = []
    for opinion in opinions:
        for s_idx, sentence in enumerate(doc.sentences):
            mentions = mentions_by_sentence[s_idx]
            sources = [m for m in mentions if m.group_id == opinion.source_group]
            targets = [m for m in mentions if m.group_id == opinion.target_group]
            if not sources or not targets:
                continue
            subj, obj = min(
                ((s, t) for s in sources for t in targets),
                key=lambda pair: (abs(pair[0].token_span[0] - pair[1].token_span[0]),
                                  pair[0].token_span[0], pair[1].token_span[0]))
            seq = tz.build_term_sequence(
                sentence.tokens,
                [(m.token_span[0], m.token_span[1], m.group_id) for m in mentions],
                subj.token_span, obj.token_span,
                frames=sent_frames[s_idx], lemmatizer=lemmatizer)
            samples.append(ContextSample(doc.doc_id, s_idx, seq, opinion.label,
                                         opinion.source_group, opinion.target_group))
    return samples


def split_folds(docs, k=3, seed=0):
    """Greedy sentence-balanced fold assignment.

    Documents are shuffled (so equal sentence counts land in seed-driven
    order), stably sorted by sentence count descending, and assigned one
    by one to the currently lightest fold, lower index on ties.
    """
    docs = list(docs)
    if len(docs) < k:
        raise ValueError("need at least %d documents, got %d" % (k, len(docs)))
    rng = np.random.default_rng(seed)
    order = [docs[i] for i in rng.permutation(len(docs))]
    order.sort(key=lambda d: -len(d.sentences))
    totals = [0] * k
    fold_of = {}
    for doc in order:
        fold = min(range(k), key=lambda f: totals[f])
        fold_of[doc.doc_id] = fold
        totals[fold] += len(doc.sentences)
    return FoldAssignment(fold_of, totals)


def train_test_split(docs, manifest):
    """Partition documents exactly as the manifest lists them."""
    train, test = [], []
    for doc in docs:
        if doc.doc_id not in manifest:
            raise ValueError("manifest missing doc_id %r" % doc.doc_id)
        (train if manifest[doc.doc_id] == "train" else test).append(doc)
    known = {d.doc_id for d in docs}
    for doc_id in manifest:
        if doc_id not in known:
            raise ValueError("manifest lists unknown doc_id %r" % doc_id)
    return train, test
