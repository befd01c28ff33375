"""
The active-sensing policy.

Per stage: observations -> attention feature extractor -> LSTM state ->
(next sensing configuration, position estimate). Configurations are
projected structurally onto the feasible set: the combiner is rescaled to
||w||^2 = P_max exactly and every pattern coefficient vector is
unit-normalized, so no parameter value can emit an infeasible config.

Every operation is batched along a leading axis; the numpy types
SensingConfig and the (b, ...) tensors are converted at the edges.
"""
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from src.autodiff import (
    LSTMCell,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiHeadSelfAttention,
    Tensor,
    attention_pool,
    concat,
    l2_normalize,
    sqrt,
)
from src.channel import MeasurementModel, NoiseModel, draw_noise
from src.errors import ConfigurationError, DegenerateInputError, ShapeError
from src.harmonics import UNIT_NORM_EPS, BasisSpec, isotropic_coefficients
from src.logger import get_logger
from src.utils import substream

logger = get_logger("policy")

HEAD_DEPTH = 2


@dataclass(frozen=True)
class PolicyConfig:
    n_antennas: int
    n_subcarriers: int
    substages: int
    basis_size: int
    stages: int
    p_max: float
    d_model: int
    heads: int
    embed_dim: int
    lstm_hidden: int
    head_hidden: int
    ff_hidden: int
    reconfigurable: bool = True
    position_scale: float = 1.0

    def __post_init__(self):
        if not self.embed_dim < 2 * self.n_subcarriers * self.substages:
            raise ConfigurationError(
                f"embed_dim={self.embed_dim} must be < 2*M*L={2 * self.n_subcarriers * self.substages}"
            )
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigurationError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.stages < 1 or self.substages < 1:
            raise ConfigurationError("stages and substages must be >= 1")
        if not self.p_max > 0:
            raise ConfigurationError(f"P_max must be positive, got {self.p_max}")
        BasisSpec.from_size(self.basis_size)

    @property
    def pattern_size(self) -> int:
        """Raw reals spent on pattern coefficients (zero for digital-only)."""
        if not self.reconfigurable:
            return 0
        return self.n_antennas * self.substages * self.basis_size

    @property
    def config_size(self) -> int:
        return 2 * self.n_antennas + self.pattern_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "PolicyConfig":
        return cls(**payload)

    @classmethod
    def from_run_config(cls, run_config) -> "PolicyConfig":
        s, m = run_config.system, run_config.model
        return cls(
            n_antennas=s.antennas,
            n_subcarriers=s.n_subcarriers,
            substages=s.substages,
            basis_size=s.basis,
            stages=s.stages,
            p_max=s.p_max,
            d_model=m.d_model,
            heads=m.heads,
            embed_dim=m.embed_dim,
            lstm_hidden=m.lstm_hidden,
            head_hidden=m.head_hidden,
            ff_hidden=m.ff_hidden,
            reconfigurable=run_config.train.method == "proposed",
            position_scale=s.region_half_width,
        )


@dataclass
class SensingConfig:
    """One episode's configuration for one stage: combiner and L x N x K coefficients."""
    w: NDArray[np.complex128]
    coeffs: NDArray[np.float64]
    stage_index: int


@dataclass
class StageConfig:
    """Batched configuration on the tape; coeffs is a constant array when patterns are frozen."""
    w_re: Tensor
    w_im: Tensor
    coeffs: Tensor | NDArray[np.float64]
    stage_index: int

    @property
    def batch(self) -> int:
        return self.w_re.shape[0]

    def sample(self, i: int) -> SensingConfig:
        coeffs = self.coeffs.data if isinstance(self.coeffs, Tensor) else self.coeffs
        return SensingConfig(
            w=self.w_re.data[i] + 1j * self.w_im.data[i],
            coeffs=np.array(coeffs[i]),
            stage_index=self.stage_index,
        )


@dataclass
class PolicyState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "PolicyState":
        return cls(h=Tensor(np.zeros((batch, hidden))), c=Tensor(np.zeros((batch, hidden))))


def project_combiner(w_re: Tensor, w_im: Tensor, p_max: float) -> tuple[Tensor, Tensor]:
    """Rescale each row to ||w||^2 = p_max."""
    norm = sqrt((w_re * w_re + w_im * w_im).sum(axis=-1, keepdims=True))
    smallest = float(norm.data.min())
    if not smallest > UNIT_NORM_EPS:
        raise DegenerateInputError(f"raw combiner of norm {smallest:.3e} cannot be projected")
    scale = float(np.sqrt(p_max)) / norm
    return w_re * scale, w_im * scale


class ActiveSensingPolicy(Module):
    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c = config
        self.spec = BasisSpec.from_size(c.basis_size)

        # feature extractor
        self.token_proj = self.add_module("token_proj", Linear(2 * c.n_subcarriers, c.d_model, rng))
        self.pos_embed = self.add_parameter("pos_embed", 0.1 * rng.standard_normal((c.substages, c.d_model)))
        self.attn_norm = self.add_module("attn_norm", LayerNorm(c.d_model))
        self.attention = self.add_module("attention", MultiHeadSelfAttention(c.d_model, c.heads, rng))
        self.ff_norm = self.add_module("ff_norm", LayerNorm(c.d_model))
        self.feed_forward = self.add_module("feed_forward", MLP(c.d_model, c.ff_hidden, c.d_model, 1, rng))
        self.pool_query = self.add_parameter("pool_query", 0.1 * rng.standard_normal(c.d_model))
        self.embed = self.add_module("embed", Linear(c.d_model, c.embed_dim, rng))

        self.lstm = self.add_module("lstm", LSTMCell(c.embed_dim, c.lstm_hidden, rng))
        self.config_head = self.add_module(
            "config_head", MLP(c.lstm_hidden, c.head_hidden, c.config_size, HEAD_DEPTH, rng)
        )
        self.loc_head = self.add_module("loc_head", MLP(c.lstm_hidden, c.head_hidden, 2, HEAD_DEPTH, rng))
        self.initial = self.add_parameter("initial_config", rng.standard_normal(c.config_size))
        logger.debug(f"Policy with {sum(p.size for p in self.parameters())} parameters, config size {c.config_size}")

    def project(self, raw: Tensor, stage_index: int) -> StageConfig:
        """Split a raw (b, 2N + N*L*K) head output into a feasible StageConfig."""
        c = self.config
        if raw.ndim != 2 or raw.shape[1] != c.config_size:
            raise ShapeError(f"raw config must be (batch, {c.config_size}), got {raw.shape}")
        b, n = raw.shape[0], c.n_antennas
        w_re, w_im = project_combiner(raw[:, 0:2 * n:2], raw[:, 1:2 * n:2], c.p_max)
        if c.reconfigurable:
            patterns = raw[:, 2 * n:].reshape(b, c.substages, n, c.basis_size)
            coeffs = l2_normalize(patterns, axis=-1, eps=UNIT_NORM_EPS)
        else:
            coeffs = np.broadcast_to(isotropic_coefficients(self.spec), (b, c.substages, n, c.basis_size))
        return StageConfig(w_re=w_re, w_im=w_im, coeffs=coeffs, stage_index=stage_index)

    def initial_config(self, batch: int = 1) -> StageConfig:
        raw = self.initial.reshape(1, self.config.config_size) * np.ones((batch, 1))
        return self.project(raw, stage_index=1)

    def encode_stage(self, y_re: Tensor, y_im: Tensor) -> Tensor:
        """(b, L, M) real and imaginary observations -> (b, d) stage embedding."""
        c = self.config
        expected = (c.substages, c.n_subcarriers)
        if y_re.ndim != 3 or y_re.shape[1:] != expected or y_im.shape != y_re.shape:
            raise ShapeError(f"observations must be (batch, {expected[0]}, {expected[1]}), got {y_re.shape}")
        tokens = self.token_proj(concat([y_re, y_im], axis=-1)) + self.pos_embed
        tokens = self.attention(self.attn_norm(tokens), residual=tokens)
        tokens = tokens + self.feed_forward(self.ff_norm(tokens))
        return self.embed(attention_pool(tokens, self.pool_query))

    def update_state(self, z: Tensor, state: PolicyState) -> PolicyState:
        h, c = self.lstm(z, state.h, state.c)
        return PolicyState(h=h, c=c)

    def next_config(self, state: PolicyState, stage_index: int) -> StageConfig:
        return self.project(self.config_head(state.h), stage_index=stage_index)

    def estimate_position(self, state: PolicyState) -> Tensor:
        return self.loc_head(state.h) * self.config.position_scale


def observation_tensors(Y: NDArray[np.complex128]) -> tuple[Tensor, Tensor]:
    """Complex M x L (or b x M x L) observation matrices -> (b, L, M) real/imag tensors."""
    Y = np.asarray(Y, dtype=np.complex128)
    if Y.ndim == 2:
        Y = Y[None]
    if Y.ndim != 3:
        raise ShapeError(f"expected M x L observations, got shape {Y.shape}")
    Y = np.swapaxes(Y, 1, 2)
    return Tensor(Y.real.copy()), Tensor(Y.imag.copy())


@dataclass
class EpisodeResult:
    estimates: list[Tensor]
    configs: list[StageConfig] = field(default_factory=list)
    observations: list[tuple[Tensor, Tensor]] = field(default_factory=list)

    @property
    def stages(self) -> int:
        return len(self.estimates)

    def estimates_array(self) -> NDArray[np.float64]:
        """(b, T, 2) stage estimates."""
        return np.stack([e.data for e in self.estimates], axis=1)


def stage_noise(noise_keys: Sequence[tuple], stage_index: int, substages: int, n_subcarriers: int):
    """Standard normals (b, L, M, 2); one substream per (episode key, stage)."""
    return np.stack([
        draw_noise(substream(*key, stage_index), (substages, n_subcarriers)) for key in noise_keys
    ])


def run_episode(
    policy: ActiveSensingPolicy,
    measurement: MeasurementModel,
    noise: NoiseModel,
    noise_keys: Sequence[tuple] | None = None,
    pilots=None,
    record: bool = False,
) -> EpisodeResult:
    """Closed loop over T stages for a batch of scenes.

    Stage t draws its noise from substream(*noise_keys[i], t), so an
    estimate never depends on the noise of later stages. Under an active
    tape the whole unrolled episode is recorded.
    """
    c = policy.config
    batch = measurement.batch
    if measurement.geom.n_elements != c.n_antennas or measurement.grid.n_subcarriers != c.n_subcarriers:
        raise ConfigurationError(
            f"simulator ({measurement.geom.n_elements} antennas, {measurement.grid.n_subcarriers} subcarriers) "
            f"does not match the policy ({c.n_antennas}, {c.n_subcarriers})"
        )
    if measurement.spec.size != c.basis_size:
        raise ConfigurationError(f"basis size {measurement.spec.size} does not match policy {c.basis_size}")
    if noise.sigma2 > 0 and (noise_keys is None or len(noise_keys) != batch):
        raise ConfigurationError("one noise key per episode is required when sigma^2 > 0")
    if pilots is None:
        pilots = np.ones((c.substages, c.n_subcarriers), dtype=np.complex128)

    result = EpisodeResult(estimates=[])
    state = PolicyState.zeros(batch, c.lstm_hidden)
    config = policy.initial_config(batch)
    for t in range(1, c.stages + 1):
        draws = None
        if noise.sigma2 > 0:
            draws = stage_noise(noise_keys, t, c.substages, c.n_subcarriers)
        y_re, y_im = measurement.observe_stage(config.w_re, config.w_im, config.coeffs, pilots, draws, noise.sigma)
        state = policy.update_state(policy.encode_stage(y_re, y_im), state)
        result.estimates.append(policy.estimate_position(state))
        if record:
            result.configs.append(config)
            result.observations.append((y_re, y_im))
        if t < c.stages:
            config = policy.next_config(state, stage_index=t + 1)
    return result
