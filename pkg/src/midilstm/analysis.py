"""Corpus frequency statistics and t-SNE maps of learned token embeddings."""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .encoding import Vocabulary, decode_chord_token, is_chord_token, parse_message_token, MalformedToken
from .model import Parameters

log = logging.getLogger(__name__)


class EmptySelection(ValueError):
    pass


class DegeneratePoints(ValueError):
    pass


# -- frequency statistics --------------------------------------------------------

@dataclass(frozen=True)
class FrequencyReport:
    tokens: tuple[str, ...]
    counts: tuple[int, ...]  # descending

    @property
    def total_tokens(self) -> int:
        return sum(self.counts)

    @property
    def unique_tokens(self) -> int:
        return len(self.counts)

    def fraction_below(self, k: int) -> float:
        """Fraction of distinct tokens seen fewer than ``k`` times."""
        return sum(1 for c in self.counts if c < k) / len(self.counts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["token", "count"])
        w.writerows(zip(self.tokens, self.counts))
        return buf.getvalue()

    def summary(self) -> str:
        return (f"Words {self.total_tokens:,}  Unique Tokens {self.unique_tokens:,}  "
                f"(<10 occurrences: {self.fraction_below(10):.1%} of unique)")


def frequency_report(vocab: Vocabulary) -> FrequencyReport:
    if len(vocab) == 0:
        raise ValueError("empty vocabulary")
    pairs = sorted(zip(vocab.tokens, vocab.counts), key=lambda tc: (-tc[1], tc[0]))
    return FrequencyReport(tuple(t for t, _ in pairs), tuple(c for _, c in pairs))


# -- t-SNE -----------------------------------------------------------------------

@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 4.0
    exaggeration_iters: int = 100
    min_gain: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0 or self.iterations <= 0 or self.learning_rate <= 0:
            raise ValueError("perplexity, iterations and learning_rate must be positive")

    def check_points(self, n: int) -> None:
        if not self.perplexity < (n - 1) / 3:
            raise ValueError(
                f"perplexity {self.perplexity} too large for {n} points (need < {(n - 1) / 3:.3g})"
            )


def squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def _row_entropy(d: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Entropy in bits of the Gaussian row with precision ``beta``, and the row."""
    # shift by the smallest distance; cancels in the normalisation
    w = np.exp(-(d - d.min()) * beta)
    s = w.sum()
    p = w / s
    nz = p > 0
    return float(-np.sum(p[nz] * np.log2(p[nz]))), p


def conditional_affinities(points: np.ndarray, perplexity: float, tol: float = 1e-6,
                           max_steps: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P(j|i) with per-row bandwidth chosen by bisection.

    Returns ``(P_cond, entropies_bits)``. Bisection runs on log(beta) inside
    a bracket wide enough for any sane data scale.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    D = squared_distances(X)
    if not np.any(D > 0):
        raise DegeneratePoints("all points coincide")
    target = math.log2(perplexity)
    P = np.zeros((n, n))
    H = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        scale = np.median(d[d > 0]) if np.any(d > 0) else 1.0
        lo, hi = math.log(1e-20 / scale), math.log(1e20 / scale)
        log_beta = math.log(1.0 / scale)
        h, row = _row_entropy(d, math.exp(log_beta))
        for _ in range(max_steps):
            if abs(h - target) < tol:
                break
            # entropy falls as beta grows
            if h > target:
                lo = log_beta
            else:
                hi = log_beta
            log_beta = 0.5 * (lo + hi)
            h, row = _row_entropy(d, math.exp(log_beta))
        P[i, np.arange(n) != i] = row
        H[i] = h
    return P, H


def pairwise_affinities(points, perplexity: float = 30.0, tol: float = 1e-6) -> np.ndarray:
    """Symmetric joint affinities: zero diagonal, non-negative, summing to one."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if X.ndim != 2 or n < 4:
        raise ValueError("need an (N, D) array with N >= 4")
    if not 0 < perplexity < n - 1:
        raise ValueError(f"perplexity must lie in (0, {n - 1}) for {n} points")
    Pc, _ = conditional_affinities(X, perplexity, tol)
    P = (Pc + Pc.T) / (2.0 * n)
    return P / P.sum()


def student_t_affinities(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q and the unnormalised kernel 1/(1+|yi-yj|^2) with zero diagonal."""
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    nz = P > 0
    return float(np.sum(P[nz] * np.log(P[nz] / Q[nz])))


def tsne_gradient(P: np.ndarray, Y: np.ndarray) -> np.ndarray:
    Q, num = student_t_affinities(Y)
    W = (P - Q) * num
    return 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y


@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_trace: list[float] = field(default_factory=list)


def tsne(points, config: TsneConfig = TsneConfig()) -> TsneResult:
    """Exact O(N^2) t-SNE with momentum, per-parameter gains and early exaggeration.

    ``kl_trace[k]`` is KL(P||Q) against the un-exaggerated P after update k+1.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    config.check_points(n)
    P = pairwise_affinities(X, config.perplexity)
    rng = np.random.default_rng(config.rng_seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    trace = []
    for it in range(config.iterations):
        exaggerating = it < config.exaggeration_iters
        grad = tsne_gradient(P * config.exaggeration if exaggerating else P, Y)
        momentum = config.initial_momentum if it < config.momentum_switch else config.final_momentum
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, config.min_gain, out=gains)
        velocity = momentum * velocity - config.learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        trace.append(kl_divergence(P, student_t_affinities(Y)[0]))
    return TsneResult(Y, trace)


def neighbor_purity(Y: np.ndarray, labels: Sequence) -> float:
    """Share of points whose nearest neighbour in ``Y`` has the same label."""
    D = squared_distances(np.asarray(Y, dtype=np.float64))
    np.fill_diagonal(D, np.inf)
    nn = D.argmin(axis=1)
    labels = np.asarray(labels)
    return float(np.mean(labels[nn] == labels))


# -- embedding selection and projection ----------------------------------------------

@dataclass(frozen=True)
class Selection:
    ids: tuple[int, ...]
    tokens: tuple[str, ...]
    pitches: tuple[int, ...]
    kinds: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.ids)


def select_tokens(vocab: Vocabulary, keep: Callable[[str], tuple[int, str] | None]) -> Selection:
    """Keep vocabulary entries for which ``keep`` returns a (pitch, kind) label."""
    rows = []
    for i, tok in enumerate(vocab.tokens):
        label = keep(tok)
        if label is not None:
            rows.append((i, tok, *label))
    if not rows:
        return Selection((), (), (), ())
    ids, toks, pitches, kinds = zip(*rows)
    return Selection(ids, toks, pitches, kinds)


def message_duration_filter(duration: int):
    def keep(tok):
        try:
            kind, pitch, delta = parse_message_token(tok)
        except MalformedToken:
            return None
        return (pitch, kind) if delta == duration else None
    return keep


def single_note_filter(tok):
    if not is_chord_token(tok):
        return None
    pitches = decode_chord_token(tok)
    if len(pitches) != 1:
        return None
    return next(iter(pitches)), "note"


_FILTER_RE = re.compile(r"duration=(\d+)")


def parse_filter(spec: str):
    """'duration=60' or 'single-note'."""
    if spec == "single-note":
        return single_note_filter
    m = _FILTER_RE.fullmatch(spec)
    if m:
        return message_duration_filter(int(m.group(1)))
    raise ValueError(f"unknown filter {spec!r}; use 'duration=N' or 'single-note'")


@dataclass(frozen=True)
class ProjectedPoint:
    token: str
    pitch: int
    kind: str
    x: float
    y: float


def project_points(points, tokens, pitches, kinds, config: TsneConfig) -> list[ProjectedPoint]:
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise EmptySelection("nothing selected")
    if n < 5:
        raise EmptySelection(f"t-SNE needs at least 5 points, selection has {n}")
    limit = (n - 1) / 3
    if config.perplexity >= limit:
        new = max(1.0, 0.99 * limit)
        log.warning("perplexity %.3g too large for %d points; using %.3g", config.perplexity, n, new)
        config = TsneConfig(**{**config.__dict__, "perplexity": new})
    Y = tsne(X, config).embedding
    return [ProjectedPoint(t, int(p), k, float(x), float(y))
            for t, p, k, (x, y) in zip(tokens, pitches, kinds, Y)]


def project_embeddings(params: Parameters, vocab: Vocabulary, selection: Selection,
                       config: TsneConfig = TsneConfig()) -> list[ProjectedPoint]:
    if len(selection) == 0:
        raise EmptySelection("no vocabulary tokens match the filter")
    X = params.embedding[list(selection.ids)]
    return project_points(X, selection.tokens, selection.pitches, selection.kinds, config)


def projection_csv(points: Sequence[ProjectedPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token", "label_pitch", "label_kind", "x", "y"])
    for p in points:
        w.writerow([p.token, p.pitch, p.kind, repr(p.x), repr(p.y)])
    return buf.getvalue()


def _ramp(t: float) -> str:
    # blue (low pitch) to red (high pitch)
    t = min(max(t, 0.0), 1.0)
    return f"#{int(255 * t):02x}30{int(255 * (1 - t)):02x}"


def scatter_svg(points: Sequence[ProjectedPoint], size: int = 600, margin: int = 30) -> str:
    """Static scatter: circles for on/single notes, crosses for offs, colour by pitch."""
    if not points:
        raise EmptySelection("nothing to plot")
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    span = max(xs.max() - xs.min(), ys.max() - ys.min()) or 1.0
    inner = size - 2 * margin
    lo_p = min(p.pitch for p in points)
    hi_p = max(p.pitch for p in points)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for p in points:
        cx = margin + (p.x - xs.min()) / span * inner
        cy = margin + (p.y - ys.min()) / span * inner
        color = _ramp((p.pitch - lo_p) / (hi_p - lo_p) if hi_p > lo_p else 0.5)
        if p.kind == "off":
            out.append(f'<path d="M{cx - 4:.1f},{cy - 4:.1f}L{cx + 4:.1f},{cy + 4:.1f}'
                       f'M{cx - 4:.1f},{cy + 4:.1f}L{cx + 4:.1f},{cy - 4:.1f}" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        else:
            out.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="4" fill="none" '
                       f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{cx + 5:.1f}" y="{cy - 5:.1f}" font-size="8" '
                   f'fill="{color}">{p.pitch}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
