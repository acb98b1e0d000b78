"""Masked autoregressive density model over the factorized join layout.

Per-(sub)column embeddings feed a residual MLP whose connectivity masks
enforce a strict autoregressive order: the logits for column i are a
function of inputs strictly before i.  Output logits are produced by
dotting the trunk output with the (tied) embedding matrices.  Each column's
embedding carries one extra wildcard row used both for training-time input
masking and for skipping unconstrained columns at inference.

Everything is plain numpy with hand-written backpropagation; gradients are
verified against central finite differences in the test suite (64-bit mode).
"""

from __future__ import annotations

import abc
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .factorization import FactorizationSpec
from .layout import Layout

WILDCARD = -1  # prefix marker: column is unconstrained / marginalized

CHECKPOINT_MAGIC = b"JCCK"


class LayoutMismatchError(ValueError):
    """Rows or prefixes do not match the model's column layout."""


class NonFiniteLossError(FloatingPointError):
    """Training loss became NaN or infinite."""


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 16
    d_ff: int = 128
    residual_blocks: int = 2
    tie_embeddings: bool = True
    wildcard_skipping: bool = True
    dropout: float = 0.0
    learning_rate: float = 2e-4
    warmup_frac: float = 0.05
    schedule: str = "warmup_cosine"  # or "constant"
    batch_size: int = 2048
    factorization_bits: int = 14
    init_seed: int = 0
    dtype: str = "float32"  # "float64" for gradient verification


class DensityBackend(abc.ABC):
    """Conditional distributions over the (sub)column layout."""

    layout: Layout
    fspec: FactorizationSpec

    @property
    def sub_domains(self) -> list[int]:
        return self.fspec.sub_domains

    @abc.abstractmethod
    def conditional_batch(self, column: int, prefix: np.ndarray) -> np.ndarray:
        """(B, domain) distributions for subcolumn `column` given (B, column) prefixes.

        Prefix entries are subcolumn tokens, or WILDCARD for marginalized
        columns.  Every returned row is non-negative and sums to 1.
        """

    def conditional(self, column: int, prefix) -> np.ndarray:
        pre = np.asarray(prefix, dtype=np.int64).reshape(1, -1)
        return self.conditional_batch(column, pre)[0]

    @abc.abstractmethod
    def log_likelihood(self, rows: np.ndarray) -> np.ndarray:
        """Per-row log probability of original-layout token rows."""


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            params[k] -= (lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)


class MaskedAutoregressiveModel(DensityBackend):
    def __init__(self, layout: Layout, config: ModelConfig = ModelConfig()):
        self.layout = layout
        self.config = config
        self.fspec = FactorizationSpec.build(layout, config.factorization_bits)
        self.dtype = np.dtype(config.dtype)
        self.n = self.fspec.n_subcolumns
        self.domains = self.fspec.sub_domains
        self._build_masks()
        self._init_params()
        self._opt: _Adam | None = None
        self.tuples_trained = 0

    # -- construction ---------------------------------------------------

    def _build_masks(self):
        n, d_emb, d_ff = self.n, self.config.d_emb, self.config.d_ff
        degrees = np.arange(d_ff) % (n - 1) if n > 1 else np.full(d_ff, -1)
        in_deg = np.repeat(np.arange(n), d_emb)
        out_deg = np.repeat(np.arange(n), d_emb)
        self.m_in = (degrees[:, None] >= in_deg[None, :]).astype(self.dtype)
        self.m_hh = (degrees[:, None] >= degrees[None, :]).astype(self.dtype)
        self.m_out = (out_deg[:, None] > degrees[None, :]).astype(self.dtype)

    def _init_params(self):
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        n, d_emb, d_ff = self.n, cfg.d_emb, cfg.d_ff
        p: dict[str, np.ndarray] = {}
        for i, d in enumerate(self.domains):
            p[f"emb_{i}"] = rng.normal(0.0, 1.0 / math.sqrt(d_emb), size=(d + 1, d_emb))
            p[f"obias_{i}"] = np.zeros(d)
            if not cfg.tie_embeddings:
                p[f"out_{i}"] = rng.normal(0.0, 1.0 / math.sqrt(d_emb), size=(d, d_emb))
        width = n * d_emb

        def lin(rows, cols):
            bound = 1.0 / math.sqrt(cols)
            return rng.uniform(-bound, bound, size=(rows, cols))

        p["w_in"] = lin(d_ff, width)
        p["b_in"] = np.zeros(d_ff)
        for b in range(cfg.residual_blocks):
            p[f"blk{b}_w1"] = lin(d_ff, d_ff)
            p[f"blk{b}_b1"] = np.zeros(d_ff)
            p[f"blk{b}_w2"] = lin(d_ff, d_ff)
            p[f"blk{b}_b2"] = np.zeros(d_ff)
        p["w_out"] = lin(width, d_ff)
        p["b_out"] = np.zeros(width)
        self.params = {k: v.astype(self.dtype) for k, v in p.items()}

    def _out_matrix(self, i: int) -> np.ndarray:
        if self.config.tie_embeddings:
            return self.params[f"emb_{i}"][: self.domains[i]]
        return self.params[f"out_{i}"]

    # -- forward / backward ----------------------------------------------

    def _encode_inputs(self, sub_rows: np.ndarray) -> np.ndarray:
        """Map WILDCARD markers to each column's wildcard embedding row."""
        inputs = sub_rows.copy()
        for i, d in enumerate(self.domains):
            inputs[inputs[:, i] == WILDCARD, i] = d
        return inputs

    def _trunk(self, inputs: np.ndarray, drop_rng=None):
        cfg = self.config
        d_emb = cfg.d_emb
        x = np.concatenate(
            [self.params[f"emb_{i}"][inputs[:, i]] for i in range(self.n)], axis=1
        )
        cache = {"inputs": inputs, "x": x, "drops": []}
        h = x @ (self.params["w_in"] * self.m_in).T + self.params["b_in"]
        cache["h0"] = h
        blocks = []
        for b in range(cfg.residual_blocks):
            a = np.maximum(h, 0)
            t = a @ (self.params[f"blk{b}_w1"] * self.m_hh).T + self.params[f"blk{b}_b1"]
            u = np.maximum(t, 0)
            if cfg.dropout > 0 and drop_rng is not None:
                keep = 1.0 - cfg.dropout
                mask = (drop_rng.random(u.shape) < keep).astype(self.dtype) / keep
                u = u * mask
                cache["drops"].append(mask)
            v = u @ (self.params[f"blk{b}_w2"] * self.m_hh).T + self.params[f"blk{b}_b2"]
            blocks.append((h, a, t, u))
            h = h + v
        cache["blocks"] = blocks
        cache["h_last"] = h
        hf = np.maximum(h, 0)
        cache["hf"] = hf
        o = hf @ (self.params["w_out"] * self.m_out).T + self.params["b_out"]
        cache["o"] = o
        return o, cache

    def _logits_for(self, o: np.ndarray, i: int) -> np.ndarray:
        d_emb = self.config.d_emb
        blk = o[:, i * d_emb : (i + 1) * d_emb]
        return blk @ self._out_matrix(i).T + self.params[f"obias_{i}"]

    def forward(self, sub_rows: np.ndarray) -> list[np.ndarray]:
        """Per-(sub)column logits for a batch of factorized rows."""
        if sub_rows.shape[1] != self.n:
            raise LayoutMismatchError(f"expected {self.n} subcolumns, got {sub_rows.shape[1]}")
        o, _ = self._trunk(self._encode_inputs(sub_rows))
        return [self._logits_for(o, i) for i in range(self.n)]

    def _loss_and_grads(self, inputs: np.ndarray, targets: np.ndarray, drop_rng=None):
        B = inputs.shape[0]
        d_emb = self.config.d_emb
        o, cache = self._trunk(inputs, drop_rng=drop_rng)
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        do = np.zeros_like(o)
        rows = np.arange(B)
        loss = 0.0
        for i in range(self.n):
            z = self._logits_for(o, i)
            zmax = z.max(axis=1, keepdims=True)
            ez = np.exp(z - zmax)
            sez = ez.sum(axis=1, keepdims=True)
            y = targets[:, i]
            loss += float(-(z[rows, y] - zmax[:, 0] - np.log(sez[:, 0])).sum())
            dz = ez / sez
            dz[rows, y] -= 1.0
            dz /= B
            E = self._out_matrix(i)
            blk = o[:, i * d_emb : (i + 1) * d_emb]
            do[:, i * d_emb : (i + 1) * d_emb] = dz @ E
            dE = dz.T @ blk
            grads[f"obias_{i}"] += dz.sum(axis=0)
            if self.config.tie_embeddings:
                grads[f"emb_{i}"][: self.domains[i]] += dE
            else:
                grads[f"out_{i}"] += dE
        loss /= B

        dhf = do @ (self.params["w_out"] * self.m_out)
        grads["w_out"] += (do.T @ cache["hf"]) * self.m_out
        grads["b_out"] += do.sum(axis=0)
        dh = dhf * (cache["h_last"] > 0)
        for b in reversed(range(self.config.residual_blocks)):
            h_in, a, t, u = cache["blocks"][b]
            dv = dh
            du = dv @ (self.params[f"blk{b}_w2"] * self.m_hh)
            grads[f"blk{b}_w2"] += (dv.T @ u) * self.m_hh
            grads[f"blk{b}_b2"] += dv.sum(axis=0)
            if cache["drops"]:
                du = du * cache["drops"][b]
            dt = du * (t > 0)
            da = dt @ (self.params[f"blk{b}_w1"] * self.m_hh)
            grads[f"blk{b}_w1"] += (dt.T @ a) * self.m_hh
            grads[f"blk{b}_b1"] += dt.sum(axis=0)
            dh = dh + da * (h_in > 0)
        dx = dh @ (self.params["w_in"] * self.m_in)
        grads["w_in"] += (dh.T @ cache["x"]) * self.m_in
        grads["b_in"] += dh.sum(axis=0)
        for i in range(self.n):
            np.add.at(
                grads[f"emb_{i}"],
                cache["inputs"][:, i],
                dx[:, i * d_emb : (i + 1) * d_emb],
            )
        return loss, grads

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> float:
        """Mean negative log-likelihood (nats, summed over subcolumns)."""
        B = inputs.shape[0]
        o, _ = self._trunk(self._encode_inputs(inputs))
        rows = np.arange(B)
        total = 0.0
        for i in range(self.n):
            z = self._logits_for(o, i)
            zmax = z.max(axis=1, keepdims=True)
            lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
            total += float(-(z[rows, targets[:, i]] - lse).sum())
        return total / B

    # -- training ----------------------------------------------------------

    def _wildcard_mask_inputs(self, targets: np.ndarray, rng: np.random.Generator):
        # Per row, a masking rate is drawn uniformly from [0, 1]; each input
        # column is wiped to its wildcard token independently at that rate.
        inputs = targets.copy()
        rate = rng.random((targets.shape[0], 1))
        mask = rng.random(targets.shape) < rate
        for i, d in enumerate(self.domains):
            inputs[mask[:, i], i] = d
        return inputs

    def train_step(self, rows: np.ndarray, rng: np.random.Generator, lr: float | None = None) -> float:
        """One optimizer step on a batch of original-layout rows; returns the loss."""
        if rows.shape[1] != len(self.layout):
            raise LayoutMismatchError(
                f"batch has {rows.shape[1]} columns, layout has {len(self.layout)}"
            )
        targets = self.fspec.encode_rows(rows)
        if self.config.wildcard_skipping:
            inputs = self._wildcard_mask_inputs(targets, rng)
        else:
            inputs = targets
        drop_rng = rng if self.config.dropout > 0 else None
        loss, grads = self._loss_and_grads(inputs, targets, drop_rng=drop_rng)
        if not math.isfinite(loss):
            raise NonFiniteLossError(f"training loss diverged: {loss}")
        if self._opt is None:
            self._opt = _Adam(self.params)
        self._opt.step(self.params, grads, self.config.learning_rate if lr is None else lr)
        self.tuples_trained += rows.shape[0]
        return loss

    def _lr_at(self, step: int, total_steps: int) -> float:
        cfg = self.config
        if cfg.schedule == "constant":
            return cfg.learning_rate
        warm = max(1, int(round(total_steps * cfg.warmup_frac)))
        if step < warm:
            return cfg.learning_rate * (step + 1) / warm
        prog = (step - warm) / max(1, total_steps - warm)
        return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * min(1.0, prog)))

    def fit(self, sampler, total_tuples: int, seed: int = 0) -> list[float]:
        """Stream batches from the sampler and run the full training schedule."""
        batch = self.config.batch_size
        steps = max(1, -(-total_tuples // batch))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
        self._opt = _Adam(self.params)
        losses = []
        for step, rows in enumerate(sampler.batches(steps, batch)):
            losses.append(self.train_step(rows, rng, lr=self._lr_at(step, steps)))
        return losses

    def incremental_update(self, sampler, budget_tuples: int, seed: int = 0, lr: float | None = None) -> list[float]:
        """Additional gradient steps on fresh samples; architecture unchanged."""
        if sampler.layout.digest() != self.layout.digest():
            raise LayoutMismatchError("sampler layout differs from the trained layout")
        if budget_tuples <= 0:
            return []
        batch = min(self.config.batch_size, max(1, budget_tuples))
        steps = max(1, budget_tuples // batch)
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(202,)))
        self._opt = _Adam(self.params)
        step_lr = self.config.learning_rate if lr is None else lr
        return [self.train_step(rows, rng, lr=step_lr) for rows in sampler.batches(steps, batch)]

    # -- DensityBackend ------------------------------------------------------

    def conditional_batch(self, column: int, prefix: np.ndarray) -> np.ndarray:
        if not 0 <= column < self.n:
            raise LayoutMismatchError(f"no subcolumn {column}")
        if prefix.shape[1] < column:
            raise LayoutMismatchError(f"prefix covers {prefix.shape[1]} columns, need {column}")
        B = prefix.shape[0]
        sub = np.full((B, self.n), WILDCARD, dtype=np.int64)
        if column:
            sub[:, :column] = prefix[:, :column]
        o, _ = self._trunk(self._encode_inputs(sub))
        z = self._logits_for(o, column).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def log_likelihood(self, rows: np.ndarray) -> np.ndarray:
        targets = self.fspec.encode_rows(rows)
        o, _ = self._trunk(self._encode_inputs(targets))
        out = np.zeros(rows.shape[0])
        idx = np.arange(rows.shape[0])
        for i in range(self.n):
            z = self._logits_for(o, i).astype(np.float64)
            zmax = z.max(axis=1, keepdims=True)
            lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
            out += z[idx, targets[:, i]] - lse
        return out

    # -- persistence -----------------------------------------------------------

    def save(self, path) -> None:
        sections: list[tuple[str, bytes]] = [
            ("meta", container.pack_json({"kind": "model-checkpoint"})),
            ("config", container.pack_json(asdict(self.config))),
            ("layout", container.pack_json(self.layout.to_dict())),
            ("fspec", container.pack_json(self.fspec.to_dict())),
            ("digest", container.pack_json(self.layout.digest())),
            ("trained", container.pack_json(self.tuples_trained)),
        ]
        for k in sorted(self.params):
            sections.append((f"param:{k}", container.pack_array(self.params[k])))
        container.write_container(path, CHECKPOINT_MAGIC, sections)

    @classmethod
    def load(cls, path) -> "MaskedAutoregressiveModel":
        sections = container.read_container(path, CHECKPOINT_MAGIC)
        by_tag = dict(sections)
        config = ModelConfig(**container.unpack_json(by_tag["config"]))
        layout = Layout.from_dict(container.unpack_json(by_tag["layout"]))
        model = cls(layout, config)
        expected = container.unpack_json(by_tag["digest"])
        if layout.digest() != expected:
            raise container.ContainerError("checkpoint layout digest mismatch")
        for tag, payload in sections:
            if tag.startswith("param:"):
                name = tag[6:]
                arr = container.unpack_array(payload)
                if name not in model.params or model.params[name].shape != arr.shape:
                    raise container.ContainerError(f"unexpected parameter {name!r}")
                model.params[name] = arr.astype(model.dtype)
        model.tuples_trained = int(container.unpack_json(by_tag["trained"]))
        return model
