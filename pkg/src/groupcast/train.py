"""Quantile-regression training: loss, task sampling, optimizer, curriculum.

Training is deterministic given the seed: the task for step k is drawn
from a stream derived only from (seed, k), so resuming from a checkpoint
replays exactly the batches a fresh run would produce.
"""

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from . import model as M
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DegenerateInputError, TrainingAbort
from .preprocess import apply_scaling
from .rng import PortableRng


@dataclass(frozen=True)
class TrainConfig:
    stage_contexts: tuple[int, int] = (256, 512)
    stage_steps: tuple[int, int] = (5000, 5000)
    batch_groups: int = 32
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    task_mix: tuple[float, float, float] = (0.4, 0.4, 0.2)  # UV, MV, covariate
    seed: int = 0
    checkpoint_every: int = 1000
    min_context_patches: int = 2
    max_horizon_patches: int | None = None
    cosine_decay: bool = False

    def __post_init__(self):
        mix = self.task_mix
        if len(mix) != 3 or any(r < 0 for r in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"task_mix must be 3 nonnegative ratios summing to 1, got {mix}")
        if any(s < 0 for s in self.stage_steps):
            raise ConfigError("stage_steps must be >= 0")

    def to_dict(self) -> dict:
        return {
            "stage_contexts": list(self.stage_contexts),
            "stage_steps": list(self.stage_steps),
            "batch_groups": self.batch_groups,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "task_mix": list(self.task_mix),
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "min_context_patches": self.min_context_patches,
            "max_horizon_patches": self.max_horizon_patches,
            "cosine_decay": self.cosine_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("stage_contexts", "stage_steps", "task_mix"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class TrainState:
    step: int
    weights: dict[str, T.Tensor]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def fresh(cls, weights: dict[str, T.Tensor]) -> "TrainState":
        return cls(
            step=0,
            weights=weights,
            m={k: np.zeros_like(t.data) for k, t in weights.items()},
            v={k: np.zeros_like(t.data) for k, t in weights.items()},
        )


@dataclass
class TaskSample:
    """One training batch before embedding: raw windows plus task framing.

    Rows are series; group_ids partition them into jointly-attending tasks.
    future_values/future_known_mask feed the known-future input channel
    (covariate rows); target_mask selects the cells that enter the loss.
    """

    context_values: np.ndarray
    context_mask: np.ndarray
    group_ids: np.ndarray
    horizon_len: int
    future_values: np.ndarray
    future_known_mask: np.ndarray
    target_values: np.ndarray
    target_mask: np.ndarray


class Corpus:
    """Pools of synthetic series for the three task kinds."""

    def __init__(self, univariate=None, panels=None, covariate_panels=None):
        self.univariate = list(univariate or [])
        self.panels = list(panels or [])
        self.covariate_panels = list(covariate_panels if covariate_panels is not None else self.panels)
        if not (self.univariate or self.panels):
            raise ConfigError("corpus is empty")

    @classmethod
    def from_dir(cls, path) -> "Corpus":
        from .synthdata import load_panel_dataset

        uni, panels = [], []
        files = sorted(Path(path).glob("*.csv"))
        if not files:
            raise ConfigError(f"no dataset CSVs under {path}")
        for f in files:
            _ids, arr = load_panel_dataset(f)
            if arr.shape[0] == 1:
                uni.append(arr[0])
            else:
                panels.append(arr)
        return cls(univariate=uni, panels=panels)


# ---------------------------------------------------------------------------
# loss


def pinball_loss(pred: T.Tensor, target: np.ndarray, mask: np.ndarray, levels) -> T.Tensor:
    """Mean quantile loss over observed cells and all levels.

    pred: (S, N, Q) scaled-space grid; target/mask: (S, N). Cells with
    mask 0 are excluded exactly (their target values never enter).
    """
    S, N, Q = pred.shape
    target = np.asarray(target, dtype=np.float64).reshape(S * N)
    mask = np.asarray(mask, dtype=np.float64).reshape(S * N)
    levels_arr = np.asarray(levels, dtype=np.float64)
    if levels_arr.shape[0] != Q:
        raise ConfigError(f"got {levels_arr.shape[0]} levels for {Q} prediction columns")
    n_obs = float(mask.sum())
    if n_obs == 0:
        raise DegenerateInputError("pinball loss needs at least one observed cell")
    flat = T.reshape(pred, (S * N, Q))
    # loss math runs in float64 in both backends (numba promotes mixed
    # float32/literal arithmetic differently from numpy)
    pred64 = flat.data.astype(np.float64, copy=False)
    cells = kernels.pinball_cells(target, pred64, levels_arr, mask)
    denom = n_obs * Q
    out = np.asarray(cells.sum() / denom, dtype=pred.dtype)

    def bwd(g):
        gfac = kernels.pinball_grad(target, pred64, levels_arr, mask)
        dpred = gfac * (-(np.float64(g) / denom))
        return (dpred.reshape(S, N, Q).astype(pred.dtype),)

    return T.make_op((pred,), out, bwd)


# ---------------------------------------------------------------------------
# task sampling


def _window(rng: PortableRng, series_len: int, need: int) -> int:
    if series_len < need:
        raise ConfigError(f"series of length {series_len} too short for window {need}")
    return int(rng.integers(1, series_len - need + 1)[0])


def sample_task(
    corpus: Corpus,
    mix: tuple[float, float, float],
    rng: PortableRng,
    n_groups: int,
    ctx_len: int,
    horizon_len: int,
) -> TaskSample:
    """Draw a batch of n_groups tasks (UV / MV / covariate per mix ratios).

    UV groups are singleton rows; MV groups share one ID across a panel;
    covariate groups mark rows past the first as known-future inputs and
    keep the loss on the target row only.
    """
    rows_ctx, rows_cmask, rows_fv, rows_fm, rows_tv, rows_tm, gids = [], [], [], [], [], [], []
    need = ctx_len + horizon_len
    for g in range(n_groups):
        kind = rng.choice_index(mix)
        if kind == 0 and not corpus.univariate:
            kind = 1
        if kind in (1, 2) and not corpus.panels:
            kind = 0
        if kind == 0:
            pool = corpus.univariate
            series = pool[int(rng.integers(1, len(pool))[0])]
            start = _window(rng, series.shape[0], need)
            win = series[start : start + need]
            rows = win[None, :]
        else:
            pool = corpus.panels if kind == 1 else corpus.covariate_panels
            panel = pool[int(rng.integers(1, len(pool))[0])]
            start = _window(rng, panel.shape[1], need)
            rows = panel[:, start : start + need]
        K = rows.shape[0]
        ctx = rows[:, :ctx_len]
        fut = rows[:, ctx_len:]
        known = np.zeros((K, horizon_len))
        fvals = np.zeros((K, horizon_len))
        tmask = np.ones((K, horizon_len))
        if kind == 2 and K > 1:
            known[1:, :] = 1.0
            fvals[1:, :] = fut[1:, :]
            tmask[1:, :] = 0.0
        rows_ctx.append(ctx)
        rows_cmask.append(np.ones_like(ctx))
        rows_fv.append(fvals)
        rows_fm.append(known)
        rows_tv.append(fut)
        rows_tm.append(tmask)
        gids.extend([g] * K)
    return TaskSample(
        context_values=np.concatenate(rows_ctx, axis=0),
        context_mask=np.concatenate(rows_cmask, axis=0),
        group_ids=np.asarray(gids, dtype=np.int64),
        horizon_len=horizon_len,
        future_values=np.concatenate(rows_fv, axis=0),
        future_known_mask=np.concatenate(rows_fm, axis=0),
        target_values=np.concatenate(rows_tv, axis=0),
        target_mask=np.concatenate(rows_tm, axis=0),
    )


def _scaled_targets(sample: TaskSample, batch: M.GroupBatch, n_positions: int):
    """Targets in the model's scaled space, padded to the patch grid."""
    S = sample.target_values.shape[0]
    tv = np.zeros((S, n_positions))
    tm = np.zeros((S, n_positions))
    m = sample.horizon_len
    for s in range(S):
        tv[s, :m] = apply_scaling(
            sample.target_values[s], np.ones(m), batch.scaling[s]
        )
        tm[s, :m] = sample.target_mask[s]
    return tv, tm


# ---------------------------------------------------------------------------
# optimizer and steps


def _lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    if not config.cosine_decay:
        return config.learning_rate
    frac = min(step / max(total_steps, 1), 1.0)
    return config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * frac))


def adam_update(state: TrainState, config: TrainConfig, lr: float) -> None:
    t = state.step
    for name, w in state.weights.items():
        dt = w.data.dtype.type
        g = w.grad
        b1, b2, eps = dt(config.beta1), dt(config.beta2), dt(config.eps)
        state.m[name] = b1 * state.m[name] + (dt(1.0) - b1) * g
        state.v[name] = b2 * state.v[name] + (dt(1.0) - b2) * (g * g)
        mh = state.m[name] / (dt(1.0) - dt(config.beta1) ** t)
        vh = state.v[name] / (dt(1.0) - dt(config.beta2) ** t)
        w.data = w.data - dt(lr) * mh / (np.sqrt(vh) + eps)


def train_step(
    state: TrainState,
    sample: TaskSample,
    model_config: M.ModelConfig,
    train_config: TrainConfig,
    lr: float | None = None,
) -> float:
    """One forward/backward/update pass; returns the (float) loss."""
    weights = state.weights
    with T.record() as tape:
        batch = M.assemble_batch(
            sample.context_values,
            sample.context_mask,
            sample.group_ids,
            sample.horizon_len,
            weights,
            model_config,
            future_values=sample.future_values,
            future_known_mask=sample.future_known_mask,
        )
        pred = M.forward(batch, weights, model_config)
        tv, tm = _scaled_targets(sample, batch, pred.shape[1])
        loss = pinball_loss(pred, tv, tm, model_config.quantile_levels)
    loss_val = float(loss.data)
    if not np.isfinite(loss_val):
        raise TrainingAbort(
            f"non-finite loss {loss_val} at step {state.step + 1} "
            f"(batch: {sample.context_values.shape[0]} rows, ctx {sample.context_values.shape[1]}, "
            f"horizon {sample.horizon_len})"
        )
    T.zero_grads(weights.values())
    T.backward(loss, tape)
    state.step += 1
    adam_update(state, train_config, train_config.learning_rate if lr is None else lr)
    state.loss_history.append(loss_val)
    return loss_val


def evaluate_pinball(
    weights: dict,
    model_config: M.ModelConfig,
    panel: np.ndarray,
    mode: str,
    ctx_len: int,
    horizon_len: int,
) -> float:
    """Scaled-space pinball loss of a forward pass on one panel window.

    Context is the first ctx_len columns; targets the next horizon_len.
    Comparable across modes because scaling depends only on the context.
    """
    panel = np.asarray(panel, dtype=np.float64)
    K = panel.shape[0]
    ctx = panel[:, :ctx_len]
    fut = panel[:, ctx_len : ctx_len + horizon_len]
    gids = M.uv_group_ids(K) if mode.upper() == "UV" else M.mv_group_ids(K)
    mask = np.ones_like(ctx)
    batch = M.assemble_batch(ctx, mask, gids, horizon_len, weights, model_config)
    pred = M.forward(batch, weights, model_config)
    n_pos = pred.shape[1]
    tv = np.zeros((K, n_pos))
    tm = np.zeros((K, n_pos))
    for s in range(K):
        tv[s, :horizon_len] = apply_scaling(fut[s], np.ones(horizon_len), batch.scaling[s])
        tm[s, :horizon_len] = 1.0
    return float(pinball_loss(pred, tv, tm, model_config.quantile_levels).data)


# ---------------------------------------------------------------------------
# curriculum


def run_curriculum(
    model_config: M.ModelConfig,
    train_config: TrainConfig,
    corpus: Corpus,
    out_dir,
    resume_from=None,
    log_name: str = "train_log.csv",
) -> Path:
    """Two-stage training over increasing context limits.

    Stage 2 continues from stage-1 weights. Writes checkpoints at the
    configured cadence plus stage boundaries, an append-only CSV log
    (step, stage, loss, lr, wallclock_ms), and returns the final
    checkpoint path (<out_dir>/model.ckpt).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / log_name
    final_path = out_dir / "model.ckpt"

    if resume_from is not None:
        weights, model_config, extra, moments = load_checkpoint(resume_from)
        state = TrainState.fresh(weights)
        state.step = int(extra.get("step", 0))
        for name in state.m:
            if f"m.{name}" in moments:
                state.m[name] = moments[f"m.{name}"].astype(state.m[name].dtype)
            if f"v.{name}" in moments:
                state.v[name] = moments[f"v.{name}"].astype(state.v[name].dtype)
    else:
        weights = M.init_weights(model_config, seed=train_config.seed)
        state = TrainState.fresh(weights)
        log_path.unlink(missing_ok=True)

    total_steps = sum(train_config.stage_steps)
    max_fut = train_config.max_horizon_patches or model_config.horizon_patches
    boundaries = np.cumsum([0] + list(train_config.stage_steps))

    def save(path):
        moments = {}
        for name in state.weights:
            moments[f"m.{name}"] = state.m[name]
            moments[f"v.{name}"] = state.v[name]
        save_checkpoint(
            path,
            state.weights,
            model_config,
            extra={"step": state.step, "train": train_config.to_dict()},
            moments=moments,
        )

    if not log_path.exists():
        log_path.write_text("step,stage,loss,lr,wallclock_ms\n")

    with open(log_path, "a") as log:
        for step in range(state.step, total_steps):
            stage = int(np.searchsorted(boundaries[1:], step, side="right"))
            ctx_limit = train_config.stage_contexts[stage]
            t0 = time.monotonic()
            task_rng = PortableRng(train_config.seed).spawn(2_000_000 + step)
            P = model_config.patch_len
            max_ctx_patches = max(ctx_limit // P, train_config.min_context_patches)
            span = max_ctx_patches - train_config.min_context_patches + 1
            ctx_patches = train_config.min_context_patches + int(task_rng.integers(1, span)[0])
            fut_patches = 1 + int(task_rng.integers(1, max_fut)[0])
            sample = sample_task(
                corpus,
                train_config.task_mix,
                task_rng,
                train_config.batch_groups,
                ctx_patches * P,
                fut_patches * P,
            )
            lr = _lr_at(train_config, step, total_steps)
            loss = train_step(state, sample, model_config, train_config, lr=lr)
            ms = (time.monotonic() - t0) * 1000.0
            log.write(f"{state.step},{stage + 1},{loss:.17g},{lr:.17g},{ms:.3f}\n")
            if state.step % train_config.checkpoint_every == 0 or state.step in boundaries[1:]:
                save(out_dir / f"ckpt_step{state.step:06d}.ckpt")
    save(final_path)
    return final_path
