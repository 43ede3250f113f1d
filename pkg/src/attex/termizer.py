"""Sentence tokens plus annotations to a masked term sequence.

Attitude participants become dedicated entity masks, remaining entity
mentions a shared mask, matched frame entries collapse to single terms
carrying a (negation-adjusted) polarity, and leftover tokens become
either typed tokens or lemmatized words. Each term is assignable to an
analysis group used by the attention-weight study.
"""

import unicodedata

from . import lexicons as lx

WORD = "word"
ENTITY_SUBJ = "entity_subj"
ENTITY_OBJ = "entity_obj"
ENTITY_OTHER = "entity_other"
FRAME = "frame"
TOKEN = "token"

_KINDS = (WORD, ENTITY_SUBJ, ENTITY_OBJ, ENTITY_OTHER, FRAME, TOKEN)

PUNCTUATION = "punctuation"
NUMBER = "number"
URL = "url"
TOKEN_KINDS = (PUNCTUATION, NUMBER, URL)

GROUP_PREP = "PREP"
GROUP_FRAMES = "FRAMES"
GROUP_SENTIMENT = "SENTIMENT"
GROUP_OTHER = "OTHER"
ANALYSIS_GROUPS = (GROUP_PREP, GROUP_FRAMES, GROUP_SENTIMENT, GROUP_OTHER)

_MASK_NAMES = {ENTITY_SUBJ: "E_SUBJ", ENTITY_OBJ: "E_OBJ", ENTITY_OTHER: "E_OTHER"}


class ContextDropped(Exception):
    """Participants are farther apart than the crop window allows."""


class Term:
    """One element of a masked context sequence."""

    __slots__ = ("kind", "lemma", "polarity", "token_kind")

    def __init__(self, kind, lemma=None, polarity=None, token_kind=None):
        if kind not in _KINDS:
            raise ValueError("unknown term kind: %r" % (kind,))
        if kind == WORD and not isinstance(lemma, str):
            raise ValueError("word term needs a lemma")
        if kind == FRAME:
            if not isinstance(lemma, str):
                raise ValueError("frame term needs a lemma")
            if polarity not in lx.POLARITIES:
                raise ValueError("unknown polarity: %r" % (polarity,))
        if kind == TOKEN and token_kind not in TOKEN_KINDS:
            raise ValueError("unknown token kind: %r" % (token_kind,))
        self.kind = kind
        self.lemma = lemma
        self.polarity = polarity
        self.token_kind = token_kind

    @classmethod
    def word(cls, lemma):
        return cls(WORD, lemma=lemma)

    @classmethod
    def entity_subj(cls):
        return cls(ENTITY_SUBJ)

    @classmethod
    def entity_obj(cls):
        return cls(ENTITY_OBJ)

    @classmethod
    def entity_other(cls):
        return cls(ENTITY_OTHER)

    @classmethod
    def frame(cls, lemma, polarity):
        return cls(FRAME, lemma=lemma, polarity=polarity)

    @classmethod
    def token(cls, token_kind):
        return cls(TOKEN, token_kind=token_kind)

    def display(self):
        """Surface text for exports: lemma, token kind, or mask name."""
        if self.kind in _MASK_NAMES:
            return _MASK_NAMES[self.kind]
        if self.kind == TOKEN:
            return self.token_kind
        return self.lemma

    def _key(self):
        return (self.kind, self.lemma, self.polarity, self.token_kind)

    def __eq__(self, other):
        return isinstance(other, Term) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        if self.kind == WORD:
            return "Term.word(%r)" % (self.lemma,)
        if self.kind == FRAME:
            return "Term.frame(%r, %r)" % (self.lemma, self.polarity)
        if self.kind == TOKEN:
            return "Term.token(%r)" % (self.token_kind,)
        return "Term(%r)" % (self.kind,)


class TermSequence:
    """Masked terms of one context with participant positions."""

    __slots__ = ("terms", "subj_pos", "obj_pos")

    def __init__(self, terms, subj_pos, obj_pos):
        terms = list(terms)
        if not terms:
            raise ValueError("term sequence is empty")
        if subj_pos == obj_pos:
            raise ValueError("participant positions coincide")
        if not (0 <= subj_pos < len(terms) and 0 <= obj_pos < len(terms)):
            raise ValueError("participant position out of range")
        if terms[subj_pos].kind != ENTITY_SUBJ:
            raise ValueError("subj_pos does not hold the subject mask")
        if terms[obj_pos].kind != ENTITY_OBJ:
            raise ValueError("obj_pos does not hold the object mask")
        self.terms = terms
        self.subj_pos = subj_pos
        self.obj_pos = obj_pos

    def __len__(self):
        return len(self.terms)

    def __repr__(self):
        return "TermSequence(%r, subj=%d, obj=%d)" % (
            self.terms, self.subj_pos, self.obj_pos)


def lemmatize(token):
    """Default lemmatizer: Unicode lowercasing."""
    return token.lower()


def _is_number(token):
    seen_digit = False
    seen_dot = False
    body = token[1:] if token[:1] in "+-" else token
    if not body:
        return False
    for ch in body:
        if ch.isdigit() and ch.isascii():
            seen_digit = True
        elif ch == "." and not seen_dot:
            seen_dot = True
        else:
            return False
    return seen_digit


def _is_punctuation(token):
    return bool(token) and all(
        unicodedata.category(ch).startswith("P") for ch in token)


def classify_token(token):
    """url, number, punctuation (that precedence), or None."""
    lowered = token.lower()
    if lowered.startswith(("http://", "https://", "www.")):
        return URL
    if _is_number(token):
        return NUMBER
    if _is_punctuation(token):
        return PUNCTUATION
    return None


def build_term_sequence(tokens, mentions, subj_span, obj_span, frames=(),
                        lemmatizer=lemmatize,
                        negation_particle=lx.NEGATION_PARTICLE):
    """Mask mentions, collapse frame matches, classify leftover tokens.

    tokens: sentence surface tokens.
    mentions: (start, end, group_id) half-open token spans, disjoint.
    subj_span, obj_span: the chosen participant mention spans; must be
        members of `mentions`.
    frames: ((start, end), polarity) matches over the lemmatized tokens;
        matches overlapping any mention are discarded.
    """
    subj_span = tuple(subj_span)
    obj_span = tuple(obj_span)
    if subj_span == obj_span:
        raise ValueError("subject and object use the same mention")
    mention_spans = {(m[0], m[1]) for m in mentions}
    if subj_span not in mention_spans:
        raise ValueError("subject mention absent from sentence")
    if obj_span not in mention_spans:
        raise ValueError("object mention absent from sentence")

    lemmas = [lemmatizer(tok) for tok in tokens]
    in_mention = [False] * len(tokens)
    for start, end in mention_spans:
        for i in range(start, end):
            in_mention[i] = True

    mention_at = {m[0]: (m[0], m[1]) for m in mentions}
    frame_at = {}
    for (start, end), polarity in frames:
        if any(in_mention[start:end]):
            continue
        frame_at[start] = (end, polarity)

    terms = []
    subj_pos = obj_pos = None
    i = 0
    while i < len(tokens):
        if i in mention_at:
            start, end = mention_at[i]
            if (start, end) == subj_span:
                subj_pos = len(terms)
                terms.append(Term.entity_subj())
            elif (start, end) == obj_span:
                obj_pos = len(terms)
                terms.append(Term.entity_obj())
            else:
                terms.append(Term.entity_other())
            i = end
        elif i in frame_at:
            end, polarity = frame_at[i]
            preceding = lemmas[i - 1] if i > 0 else ""
            adjusted = lx.apply_negation(polarity, preceding,
                                         particle=negation_particle)
            terms.append(Term.frame(" ".join(lemmas[i:end]), adjusted))
            i = end
        else:
            kind = classify_token(tokens[i])
            if kind is None:
                terms.append(Term.word(lemmas[i]))
            else:
                terms.append(Term.token(kind))
            i += 1

    return TermSequence(terms, subj_pos, obj_pos)


def crop_to_window(seq, n):
    """Limit a sequence to n terms, keeping a window centered between
    the participants. Raises ContextDropped when they do not fit."""
    length = len(seq.terms)
    if length <= n:
        return seq
    lo = min(seq.subj_pos, seq.obj_pos)
    hi = max(seq.subj_pos, seq.obj_pos)
    if hi - lo + 1 > n:
        raise ContextDropped(
            "participants %d apart exceed window %d" % (hi - lo, n))
    start = (lo + hi + 1 - n) // 2
    start = max(0, min(start, length - n))
    return TermSequence(seq.terms[start:start + n],
                        seq.subj_pos - start, seq.obj_pos - start)


def group_of(term, sentiment_lexicon, preposition_list):
    """Analysis group with precedence FRAMES > SENTIMENT > PREP."""
    if term.kind == FRAME:
        return GROUP_FRAMES
    if term.kind == WORD:
        if lx.in_sentiment_lexicon(term.lemma, sentiment_lexicon):
            return GROUP_SENTIMENT
        if lx.is_preposition(term.lemma, preposition_list):
            return GROUP_PREP
    return GROUP_OTHER
