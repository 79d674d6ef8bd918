"""Attention rollout across encoder stacks, and a variant that drops masked tokens.

The plain rollout multiplies ``0.5 W_i + 0.5 I`` over stacks (last stack on
the left). The revised rollout replaces the first factor with
``rownorm(W_1 + diag(mask))`` so a missing token has no residual self-loop
and receives no attention anywhere in the product.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np



class RolloutKind(str, enum.Enum):
    ORIGINAL = "original"
    REVISED = "revised"


@dataclass
class RolloutResult:
    matrix: np.ndarray
    kind: RolloutKind
    guarded_rows: tuple[int, ...] = ()


def _stack(weights) -> list[np.ndarray]:
    ws = [np.asarray(w, dtype=np.float64) for w in weights]
    if not ws:
        raise ValueError("rollout needs at least one attention matrix")
    L = ws[0].shape[0]
    for w in ws:
        if w.shape != (L, L):
            raise ValueError(f"attention matrices must all be ({L}, {L})")
    return ws


def rollout(weights) -> RolloutResult:
    ws = _stack(weights)
    eye = np.eye(ws[0].shape[0])
    out = 0.5 * ws[0] + 0.5 * eye
    for w in ws[1:]:
        out = (0.5 * w + 0.5 * eye) @ out
    return RolloutResult(out, RolloutKind.ORIGINAL)


ROW_SUM_TOL = 1e-5


def revised_first_factor(w1: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
    """``rownorm(W_1 + diag(mask))`` for a first-stack attention matrix.

    Rows of ``W_1`` are stochastic, or all zero for a guarded query, so each
    row of ``W_1 + diag(mask)`` sums to ``mass + mask`` with mass 1 or 0.
    Dividing by that exact sum instead of the float row sum keeps the
    fully observed case bit-identical to ``0.5 W_1 + 0.5 I``.
    """
    w1 = np.asarray(w1, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    sums = w1.sum(axis=1)
    zero = ~np.any(w1 != 0, axis=1)
    if np.any(~zero & (np.abs(sums - 1.0) > ROW_SUM_TOL)):
        raise ValueError("first-stack attention rows must sum to 1 (or be all zero)")
    denom = np.where(zero, 0.0, 1.0) + m
    guarded = tuple(int(i) for i in np.flatnonzero(denom == 0))
    a = w1 + np.diag(m)
    safe = np.where(denom == 0, 1.0, denom)[:, None]
    return np.where(denom[:, None] == 0, 0.0, a / safe), guarded


def revised_rollout(weights, mask) -> RolloutResult:
    ws = _stack(weights)
    out, guarded = revised_first_factor(ws[0], mask)
    eye = np.eye(ws[0].shape[0])
    for w in ws[1:]:
        out = (0.5 * w + 0.5 * eye) @ out
    return RolloutResult(out, RolloutKind.REVISED, guarded)


@dataclass
class ImportanceMap:
    importance: np.ndarray  # (k, n+1) column means of the rollout
    ranks: np.ndarray       # (k, n+1), 1 = most attended

    @property
    def k(self) -> int:
        return self.importance.shape[0]

    def mean_rank_order(self) -> np.ndarray:
        """Column order by ascending mean rank (stable on ties)."""
        return np.argsort(self.ranks.mean(axis=0), kind="mergesort")


def importance_map(r: RolloutResult, k: int, n_columns: int) -> ImportanceMap:
    """Column means of the rollout reshaped window-major; ties ranked by flat index."""
    L = r.matrix.shape[1]
    if L != k * n_columns:
        raise ValueError(f"rollout has {L} tokens, expected {k} x {n_columns}")
    imp = r.matrix.mean(axis=0)
    order = np.lexsort((np.arange(L), -imp))
    ranks = np.empty(L, dtype=np.int64)
    ranks[order] = np.arange(1, L + 1)
    return ImportanceMap(imp.reshape(k, n_columns), ranks.reshape(k, n_columns))


def export_importance_csv(imap: ImportanceMap, names: list[str], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "feature", "importance", "rank"])
        for i in range(imap.k):
            for j, name in enumerate(names):
                w.writerow([i, name, repr(float(imap.importance[i, j])), int(imap.ranks[i, j])])


def _color(v: float) -> str:
    v = min(max(v, 0.0), 1.0)
    r = int(255 - 200 * v)
    g = int(255 - 120 * v)
    return f"#{r:02x}{g:02x}ff"


def importance_svg(imap: ImportanceMap, names: list[str], order_by_rank: bool = True,
                   title: str = "") -> str:
    cols = imap.mean_rank_order() if order_by_rank else np.arange(len(names))
    cell, left, top = 36, 60, 110
    width = left + cell * len(cols) + 10
    height = top + cell * imap.k + 10
    vmax = float(imap.importance.max()) or 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="10">']
    if title:
        parts.append(f'<text x="4" y="14" font-size="12">{escape(title)}</text>')
    for c, j in enumerate(cols):
        x = left + c * cell + cell / 2
        parts.append(f'<text x="{x:.1f}" y="{top - 6}" transform="rotate(-60 {x:.1f} {top - 6})">'
                     f'{escape(names[j])}</text>')
    for i in range(imap.k):
        y = top + i * cell
        parts.append(f'<text x="4" y="{y + cell / 2 + 3:.1f}">w{i}</text>')
        for c, j in enumerate(cols):
            x = left + c * cell
            v = imap.importance[i, j] / vmax
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{_color(v)}" stroke="#ffffff"/>')
            parts.append(f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 3:.1f}" '
                         f'text-anchor="middle">{int(imap.ranks[i, j])}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_importance(imap: ImportanceMap, names: list[str], path_stem) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.svg``; returns both paths."""
    stem = Path(path_stem)
    if len(names) != imap.importance.shape[1]:
        raise ValueError("names must cover every column (features + entry count)")
    csv_path = stem.with_suffix(".csv")
    svg_path = stem.with_suffix(".svg")
    export_importance_csv(imap, names, csv_path)
    svg_path.write_text(importance_svg(imap, names), encoding="utf-8")
    return csv_path, svg_path
