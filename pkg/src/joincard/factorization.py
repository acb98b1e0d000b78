"""Lossless column factorization: slice token ids into fixed-width bit chunks.

A token domain of size d needs ceil(log2(d)) bits; with chunk width N the
token splits into k = ceil(bits/N) subtokens, most significant first.  The
high chunk carries the remainder bits, so its subdomain can be smaller than
2^N.  Concatenating the chunks reconstructs the token exactly.

Predicates on a column translate into per-subcolumn regions that are
progressively refined: for an upper bound the high chunk is relaxed to an
inclusive bound, and the next chunk's region depends on whether the drawn
value sits on the boundary (a strictly interior draw satisfies the original
bound already, so lower chunks become wildcards).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layout import Layout


class TokenOutOfRangeError(ValueError):
    pass


class SubtokenOutOfRangeError(ValueError):
    pass


class UnsupportedOperatorError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnFactorization:
    """Chunking plan of one column: domain, chunk width, per-chunk shifts/domains."""

    domain: int
    bits: int  # 0 = no factorization
    k: int
    shifts: tuple[int, ...]  # high to low
    subdomains: tuple[int, ...]

    @classmethod
    def plan(cls, domain: int, bits: int) -> "ColumnFactorization":
        domain = max(1, int(domain))
        needed = max(1, (domain - 1).bit_length())
        if bits <= 0 or needed <= bits:
            return cls(domain=domain, bits=0, k=1, shifts=(0,), subdomains=(domain,))
        k = -(-needed // bits)
        shifts = tuple(bits * (k - 1 - j) for j in range(k))
        high = ((domain - 1) >> shifts[0]) + 1
        subdomains = (high,) + (1 << bits,) * (k - 1)
        return cls(domain=domain, bits=bits, k=k, shifts=shifts, subdomains=subdomains)

    def mask(self, chunk: int) -> int:
        return self.subdomains[chunk] - 1 if self.bits == 0 else (1 << self.bits) - 1


def factorize(token, cf: ColumnFactorization):
    """Base-2^N digits of a token, most significant first."""
    arr = np.asarray(token, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr >= cf.domain):
        raise TokenOutOfRangeError(f"token outside [0, {cf.domain})")
    if cf.k == 1:
        digits = arr.reshape(arr.shape + (1,))
    else:
        mask = (1 << cf.bits) - 1
        digits = np.stack([(arr >> s) & mask for s in cf.shifts], axis=-1)
    return tuple(int(d) for d in digits) if np.isscalar(token) or arr.ndim == 0 else digits


def defactorize(subtokens, cf: ColumnFactorization):
    """Exact inverse of factorize."""
    arr = np.asarray(subtokens, dtype=np.int64)
    parts = np.moveaxis(arr, -1, 0)
    if len(parts) != cf.k:
        raise SubtokenOutOfRangeError(f"expected {cf.k} subtokens, got {len(parts)}")
    out = np.zeros_like(parts[0])
    for j, (p, s) in enumerate(zip(parts, cf.shifts)):
        if np.any(p < 0) or np.any(p >= cf.subdomains[j]):
            raise SubtokenOutOfRangeError(f"subtoken {j} outside [0, {cf.subdomains[j]})")
        out = out + (p << s)
    if np.any(out >= cf.domain):
        raise SubtokenOutOfRangeError("subtokens reassemble past the column domain")
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Subcolumn:
    parent: int  # index into the original layout
    chunk: int
    domain: int


@dataclass
class FactorizationSpec:
    """Factorization of a whole layout; defines the model's input columns."""

    bits: int
    per_column: list[ColumnFactorization]
    subcolumns: list[Subcolumn]
    sub_ranges: list[tuple[int, int]]  # original column -> [start, stop) in subcolumns

    @classmethod
    def build(cls, layout: Layout, bits: int) -> "FactorizationSpec":
        per_column = [ColumnFactorization.plan(c.domain, bits) for c in layout.columns]
        subcolumns = []
        sub_ranges = []
        for i, cf in enumerate(per_column):
            start = len(subcolumns)
            for j in range(cf.k):
                subcolumns.append(Subcolumn(parent=i, chunk=j, domain=cf.subdomains[j]))
            sub_ranges.append((start, len(subcolumns)))
        return cls(bits=bits, per_column=per_column, subcolumns=subcolumns, sub_ranges=sub_ranges)

    @property
    def n_subcolumns(self) -> int:
        return len(self.subcolumns)

    @property
    def sub_domains(self) -> list[int]:
        return [s.domain for s in self.subcolumns]

    def encode_rows(self, rows: np.ndarray) -> np.ndarray:
        """Original layout tokens (B, n_cols) -> subtokens (B, n_subcolumns)."""
        out = np.empty((rows.shape[0], self.n_subcolumns), dtype=np.int64)
        for i, cf in enumerate(self.per_column):
            start, stop = self.sub_ranges[i]
            col = rows[:, i]
            if cf.k == 1:
                out[:, start] = col
            else:
                mask = (1 << cf.bits) - 1
                for j, s in enumerate(cf.shifts):
                    out[:, start + j] = (col >> s) & mask
        return out

    def decode_rows(self, sub_rows: np.ndarray) -> np.ndarray:
        out = np.empty((sub_rows.shape[0], len(self.per_column)), dtype=np.int64)
        for i, cf in enumerate(self.per_column):
            start, stop = self.sub_ranges[i]
            acc = np.zeros(sub_rows.shape[0], dtype=np.int64)
            for j, s in enumerate(cf.shifts):
                acc = acc + (sub_rows[:, start + j] << s)
            out[:, i] = acc
        return out

    def to_dict(self) -> dict:
        return {"bits": self.bits, "domains": [cf.domain for cf in self.per_column]}

    @classmethod
    def from_dict(cls, doc: dict) -> "FactorizationSpec":
        per_column = [ColumnFactorization.plan(d, doc["bits"]) for d in doc["domains"]]
        spec = cls(bits=doc["bits"], per_column=per_column, subcolumns=[], sub_ranges=[])
        for i, cf in enumerate(per_column):
            start = len(spec.subcolumns)
            for j in range(cf.k):
                spec.subcolumns.append(Subcolumn(parent=i, chunk=j, domain=cf.subdomains[j]))
            spec.sub_ranges.append((start, len(spec.subcolumns)))
        return spec


# --- predicate programs ----------------------------------------------------
#
# A program turns a token-space predicate into per-subcolumn regions.  The
# estimator keeps one state vector per Monte Carlo sample; each drawn digit
# advances the state and pins down the next chunk's region.


class PredicateProgram:
    cf: ColumnFactorization

    def new_state(self, n: int):
        raise NotImplementedError

    def region_masks(self, chunk: int, state) -> np.ndarray:
        """(n, subdomain) boolean masks of the allowed digits for this chunk."""
        raise NotImplementedError

    def advance(self, chunk: int, state, digits: np.ndarray):
        raise NotImplementedError

    def accepts_tokens(self, tokens: np.ndarray) -> np.ndarray:
        """Evaluate the program digit by digit; the ground for equivalence tests."""
        tokens = np.asarray(tokens, dtype=np.int64)
        ok = np.ones(len(tokens), dtype=bool)
        state = self.new_state(len(tokens))
        digits = factorize(tokens, self.cf)
        if digits.ndim == 1:
            digits = digits[None, :]
        for j in range(self.cf.k):
            masks = self.region_masks(j, state)
            ok &= masks[np.arange(len(tokens)), digits[:, j]]
            state = self.advance(j, state, digits[:, j])
        return ok


class IntervalProgram(PredicateProgram):
    """Tokens in [lo, hi]; chunk regions tighten only while the prefix rides a bound."""

    def __init__(self, cf: ColumnFactorization, lo: int, hi: int):
        self.cf = cf
        self.lo = max(0, lo)
        self.hi = min(cf.domain - 1, hi)
        self.empty = self.lo > self.hi
        if not self.empty:
            self.lo_digits = np.asarray(factorize(self.lo, cf), dtype=np.int64)
            self.hi_digits = np.asarray(factorize(self.hi, cf), dtype=np.int64)

    def new_state(self, n: int):
        return (np.ones(n, dtype=bool), np.ones(n, dtype=bool))

    def region_masks(self, chunk: int, state) -> np.ndarray:
        tight_lo, tight_hi = state
        n = len(tight_lo)
        d = self.cf.subdomains[chunk]
        if self.empty:
            return np.zeros((n, d), dtype=bool)
        lo = np.where(tight_lo, self.lo_digits[chunk], 0)
        hi = np.where(tight_hi, self.hi_digits[chunk], d - 1)
        digits = np.arange(d)
        return (digits >= lo[:, None]) & (digits <= hi[:, None])

    def advance(self, chunk: int, state, digits: np.ndarray):
        tight_lo, tight_hi = state
        if self.empty:
            return state
        return (
            tight_lo & (digits == self.lo_digits[chunk]),
            tight_hi & (digits == self.hi_digits[chunk]),
        )


class MembershipProgram(PredicateProgram):
    """Tokens in an explicit set; regions are the digits of still-live candidates."""

    def __init__(self, cf: ColumnFactorization, tokens) -> None:
        self.cf = cf
        toks = np.asarray(sorted(set(int(t) for t in tokens)), dtype=np.int64)
        self.tokens = toks
        if len(toks):
            digits = factorize(toks, cf)
            self.digit_matrix = digits if digits.ndim == 2 else digits[None, :]
        else:
            self.digit_matrix = np.zeros((0, cf.k), dtype=np.int64)

    def new_state(self, n: int):
        return np.ones((n, len(self.tokens)), dtype=bool)

    def region_masks(self, chunk: int, state) -> np.ndarray:
        n = state.shape[0]
        masks = np.zeros((n, self.cf.subdomains[chunk]), dtype=bool)
        if len(self.tokens):
            rows, cand = np.nonzero(state)
            masks[rows, self.digit_matrix[cand, chunk]] = True
        return masks

    def advance(self, chunk: int, state, digits: np.ndarray):
        if not len(self.tokens):
            return state
        return state & (self.digit_matrix[:, chunk][None, :] == digits[:, None])


def translate_predicate(op: str, operand, cf: ColumnFactorization) -> PredicateProgram:
    """Token-space predicate -> per-subcolumn program.

    `operand` is a token bound for comparison operators, a token for
    equality, or an iterable of tokens for `in`.
    """
    if op == "in":
        return MembershipProgram(cf, operand)
    b = int(operand)
    if op == "=":
        return IntervalProgram(cf, b, b)
    if op == "<":
        return IntervalProgram(cf, 0, b - 1)
    if op == "<=":
        return IntervalProgram(cf, 0, b)
    if op == ">":
        return IntervalProgram(cf, b + 1, cf.domain - 1)
    if op == ">=":
        return IntervalProgram(cf, b, cf.domain - 1)
    raise UnsupportedOperatorError(f"operator {op!r} not supported")


def interval_program(cf: ColumnFactorization, lo: int, hi: int) -> IntervalProgram:
    return IntervalProgram(cf, lo, hi)


def membership_program(cf: ColumnFactorization, tokens) -> MembershipProgram:
    return MembershipProgram(cf, tokens)
