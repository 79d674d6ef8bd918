"""Per-value token embeddings.

SCANE gives every column ``j`` a direction ``u_j``; an observed numerical
cell becomes ``x * u_j`` and a missing cell the zero vector. Categorical
columns get one vector per category, used unscaled. The naive "each value
as a token" baselines (index/one-hot indicator, concat/fusion mapping) live
here too so the ablation can swap them in.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import CATEGORICAL, DataError, FeatureSchema
from .numerics import Node, ParamSet, Tape
from .summarize import COUNT_COLUMN, SummaryMatrix


class EvatVariant(str, enum.Enum):
    SCANE = "scane"
    INDEX_CONCAT = "index_concat"
    INDEX_FUSION = "index_fusion"
    ONEHOT_CONCAT = "onehot_concat"
    ONEHOT_FUSION = "onehot_fusion"

    @property
    def onehot(self) -> bool:
        return self in (EvatVariant.ONEHOT_CONCAT, EvatVariant.ONEHOT_FUSION)

    @property
    def fusion(self) -> bool:
        return self in (EvatVariant.INDEX_FUSION, EvatVariant.ONEHOT_FUSION)


@dataclass(frozen=True)
class TokenLayout:
    """Maps every (column, category) pair to a row of the embedding table."""
    names: tuple[str, ...]
    categorical: tuple[bool, ...]
    vocab: tuple[int, ...]

    @classmethod
    def from_schema(cls, schema: FeatureSchema) -> "TokenLayout":
        names = tuple(schema.names) + (COUNT_COLUMN,)
        cat = tuple(f.kind == CATEGORICAL for f in schema.features) + (False,)
        vocab = tuple(len(f.categories) if f.kind == CATEGORICAL else 1
                      for f in schema.features) + (1,)
        return cls(names, cat, vocab)

    @property
    def n_columns(self) -> int:
        return len(self.names)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.vocab)[:-1]]).astype(np.int64)

    @property
    def n_rows(self) -> int:
        return int(sum(self.vocab))

    def row_names(self, schema: FeatureSchema | None = None) -> list[str]:
        out = []
        for j, name in enumerate(self.names):
            if self.categorical[j]:
                cats = (schema.features[j].categories if schema is not None
                        else tuple(str(c) for c in range(self.vocab[j])))
                out.extend(f"{name}={c}" for c in cats)
            else:
                out.append(name)
        return out


@dataclass
class TokenBatch:
    """Normalized summaries of a batch, flattened window-major to L = k * (n+1) cells."""
    values: np.ndarray   # (B, L) float, 0 where masked
    mask: np.ndarray     # (B, L) uint8
    rows: np.ndarray     # (B, L) int64 embedding-table row of each cell
    k: int
    n_columns: int

    @property
    def L(self) -> int:
        return self.values.shape[1]

    def take(self, idx) -> "TokenBatch":
        return TokenBatch(self.values[idx], self.mask[idx], self.rows[idx], self.k, self.n_columns)

    def __len__(self):
        return self.values.shape[0]


def flat_index(i: int, j: int, n_columns: int) -> int:
    return i * n_columns + j


def unflatten_index(p: int, n_columns: int) -> tuple[int, int]:
    return divmod(p, n_columns)


def build_batch(matrices: list[SummaryMatrix], layout: TokenLayout) -> TokenBatch:
    if not matrices:
        raise DataError("empty batch")
    C = layout.n_columns
    vals = np.stack([sm.values for sm in matrices])
    mask = np.stack([sm.mask for sm in matrices]).astype(np.uint8)
    if vals.shape[2] != C:
        raise DataError(f"summary has {vals.shape[2]} columns, layout expects {C}")
    k = vals.shape[1]
    cat = np.array(layout.categorical)
    obs = mask > 0
    clean = np.where(obs, vals, 0.0)
    cat_idx = np.where(obs & cat, clean, 0.0).astype(np.int64)
    vocab = np.array(layout.vocab)
    if np.any(cat_idx >= vocab) or np.any(cat_idx < 0):
        raise DataError("category index outside vocabulary")
    rows = layout.offsets[None, None, :] + cat_idx
    # categorical cells carry no magnitude: scale 1 when observed
    scale = np.where(cat, obs.astype(np.float64), clean)
    B = len(matrices)
    return TokenBatch(scale.reshape(B, k * C), mask.reshape(B, k * C),
                      rows.reshape(B, k * C), k, C)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def evat_input_width(variant: EvatVariant, layout: TokenLayout) -> int:
    return (layout.n_rows if variant.onehot else 1) + 1


def init_embedding_params(params: ParamSet, layout: TokenLayout, d: int,
                          variant: EvatVariant, rng: np.random.Generator) -> None:
    bound = 1.0 / math.sqrt(d)
    if variant is EvatVariant.SCANE:
        params["embed.table"] = rng.uniform(-bound, bound, size=(layout.n_rows, d))
        return
    fan_in = evat_input_width(variant, layout)
    lim = math.sqrt(6.0 / (fan_in + d))
    params["embed.evat.w"] = rng.uniform(-lim, lim, size=(fan_in, d))
    params["embed.evat.b"] = np.zeros(d)


def evat_inputs(batch: TokenBatch, variant: EvatVariant, layout: TokenLayout) -> np.ndarray:
    """Indicator representation concatenated with the cell value, (B, L, I+1).

    Index variants use the table row number as a scalar; one-hot variants a
    unit vector over all table rows. Categorical cells carry value 1.
    """
    B, L = batch.values.shape
    if variant.onehot:
        ind = np.zeros((B, L, layout.n_rows))
        np.put_along_axis(ind, batch.rows[..., None], 1.0, axis=-1)
    else:
        ind = batch.rows[..., None].astype(np.float64)
    return np.concatenate([ind, batch.values[..., None]], axis=-1)


def embed_tokens(tape: Tape, batch: TokenBatch, variant: EvatVariant,
                 layout: TokenLayout, dtype=np.float64) -> Node:
    """Token matrix (B, L, d) for a batch; rows with mask 0 are exactly zero."""
    maskf = tape.const(batch.mask[..., None].astype(dtype))
    if variant is EvatVariant.SCANE:
        u = tape.gather(tape.param("embed.table"), batch.rows)
        # select rather than multiply: a stored non-finite or huge value cannot leak
        scale = tape.const(np.where(batch.mask > 0, batch.values, 0.0)[..., None].astype(dtype))
        return tape.mul(u, scale)
    clean = replace(batch, values=np.where(batch.mask > 0, batch.values, 0.0))
    x = tape.const(evat_inputs(clean, variant, layout).astype(dtype))
    h = tape.add(tape.matmul(x, tape.param("embed.evat.w")), tape.param("embed.evat.b"))
    if variant.fusion:
        h = tape.gelu(h)
    return tape.mul(h, maskf)


# ---------------------------------------------------------------------------
# single-sample views
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingTable:
    d: int
    matrix: np.ndarray
    row_names: list[str]
    layout: TokenLayout

    @classmethod
    def from_params(cls, params: ParamSet, layout: TokenLayout,
                    schema: FeatureSchema | None = None) -> "EmbeddingTable":
        m = np.asarray(params["embed.table"])
        return cls(m.shape[1], m, layout.row_names(schema), layout)

    @classmethod
    def random(cls, schema: FeatureSchema, d: int, seed: int = 0) -> "EmbeddingTable":
        layout = TokenLayout.from_schema(schema)
        ps = ParamSet()
        init_embedding_params(ps, layout, d, EvatVariant.SCANE, np.random.default_rng(seed))
        return cls.from_params(ps, layout, schema)

    def vector(self, column: int, category: int = 0) -> np.ndarray:
        return self.matrix[self.layout.offsets[column] + category]


@dataclass
class TokenSequence:
    tokens: np.ndarray   # (L, d)
    mask: np.ndarray     # (L,)
    k: int
    n_columns: int

    def position(self, p: int) -> tuple[int, int]:
        return unflatten_index(p, self.n_columns)


def scane_embed(sm: SummaryMatrix, table: EmbeddingTable) -> TokenSequence:
    batch = build_batch([sm], table.layout)
    ps = ParamSet({"embed.table": table.matrix})
    tok = embed_tokens(Tape(ps, grad=False), batch, EvatVariant.SCANE, table.layout)
    return TokenSequence(tok.value[0], batch.mask[0], batch.k, batch.n_columns)


def evat_embed(sm: SummaryMatrix, variant: EvatVariant, params: ParamSet,
               layout: TokenLayout) -> TokenSequence:
    batch = build_batch([sm], layout)
    tok = embed_tokens(Tape(params, grad=False), batch, variant, layout)
    return TokenSequence(tok.value[0], batch.mask[0], batch.k, batch.n_columns)


def export_embeddings(table: EmbeddingTable, path) -> None:
    """CSV of table row name followed by its d coordinates."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature"] + [f"dim_{i}" for i in range(table.d)])
        for name, vec in zip(table.row_names, table.matrix):
            w.writerow([name] + [repr(float(v)) for v in vec])


def read_embeddings(path) -> dict[str, np.ndarray]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return {r[0]: np.array([float(v) for v in r[1:]]) for r in rows[1:]}
