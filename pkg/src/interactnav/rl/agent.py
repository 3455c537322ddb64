"""Everything a trained controller consists of, plus feature computation."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..env import EnvConfig, reduced_config
from ..learn import tape as T
from ..learn.params import ParamStore, atomic_write_text
from ..models.encoder import EncoderConfig
from ..models.heads import FrozenPredictor, Predictor, scene_batch_scores
from .policy import InputLayout, PolicyNet, ValueNet, VariantConfig, build_policy_input, manipulate_beliefs

AUX = "aux"
NOEGO = "noego"


class CheckpointMissingError(FileNotFoundError):
    pass


@dataclass
class TrainConfig:
    variant: str = "a"
    tp: bool = False
    message_passing: str = "gat"
    seed: int = 0
    total_steps: int = 500_000
    steps_per_iter: int = 8192
    n_envs: int = 16
    chunk: int = 16
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    epochs: int = 4
    minibatch: int = 256
    lr_policy: float = 1e-4
    lr_value: float = 1e-3
    lr_aux: float = 1e-3
    normalize_advantages: bool = True
    max_grad_norm: float = 0.5
    replay_capacity: int = 50_000
    aux_steps: int = 32
    aux_batch: int = 64
    hidden: int = 64
    sigma2: float = 0.5
    action_prior: list = field(default_factory=lambda: [0.2, 0.2, 0.6])
    pretrained: Optional[str] = None
    env: dict = field(default_factory=lambda: reduced_config().to_dict())

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "TrainConfig":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        cfg = cls(**d)
        VariantConfig.of(cfg.variant)
        EnvConfig.from_dict(cfg.env)
        if cfg.steps_per_iter % (cfg.n_envs * cfg.chunk):
            raise ValueError("steps_per_iter must be a multiple of n_envs * chunk")
        if cfg.minibatch % cfg.chunk:
            raise ValueError("minibatch must be a multiple of chunk")
        prior = np.asarray(cfg.action_prior, dtype=np.float64)
        if prior.shape != (3,) or np.any(prior <= 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("action_prior must be three positive probabilities summing to 1")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def env_config(self) -> EnvConfig:
        return EnvConfig.from_dict(self.env)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def encoder_config(env_cfg: EnvConfig, message_passing: str, hidden: int = 64) -> EncoderConfig:
    return EncoderConfig(n_vehicles=env_cfg.n_vehicles, n_pedestrians=env_cfg.n_pedestrians,
                         hidden=hidden, message_passing=message_passing)


def build_noego_predictor(env_cfg: EnvConfig, message_passing: str, seed: int,
                          hidden: int = 64) -> Predictor:
    rng = np.random.default_rng([seed, 7])
    return Predictor(ParamStore(), NOEGO, encoder_config(env_cfg, message_passing, hidden),
                     env_cfg.t_future, rng, with_isi=False, hidden=hidden)


def load_noego_predictor(path, env_cfg: EnvConfig, message_passing: str,
                         hidden: int = 64) -> Predictor:
    if path is None or not os.path.exists(path):
        raise CheckpointMissingError(f"no pretrained without-ego predictor at {path!r}")
    store, header = ParamStore.load(path)
    enc = encoder_config(env_cfg, message_passing, hidden)
    if header["config_digest"] != enc.digest():
        raise ValueError("pretrained predictor was built for a different encoder configuration")
    pred = build_noego_predictor(env_cfg, message_passing, 0, hidden)
    pred.store.load_values(store.values())
    return pred


@dataclass
class StepFeatures:
    x: np.ndarray
    z: Optional[np.ndarray]
    w: Optional[np.ndarray]
    beliefs: Optional[tuple]
    embedding: Optional[np.ndarray]


class Agent:
    """Policy, value, internal-state/prediction module and frozen counterfactual branch."""

    def __init__(self, cfg: TrainConfig, noego: Optional[Predictor] = None):
        self.cfg = cfg
        self.vcfg = VariantConfig.of(cfg.variant)
        self.env_cfg = cfg.env_config
        e = self.env_cfg
        rng = np.random.default_rng([cfg.seed, 11])
        self.enc_cfg = encoder_config(e, cfg.message_passing, cfg.hidden)
        self.aux: Optional[Predictor] = None
        if self.vcfg.uses_isi or cfg.tp:
            self.aux = Predictor(ParamStore(), AUX, self.enc_cfg, e.t_future, rng,
                                 with_isi=self.vcfg.uses_isi, hidden=cfg.hidden)
        self.frozen: Optional[FrozenPredictor] = None
        if cfg.tp:
            if noego is None:
                noego = load_noego_predictor(cfg.pretrained, e, cfg.message_passing, cfg.hidden)
            self.frozen = FrozenPredictor(noego)
            # the with-ego branch starts from the pretrained weights
            mapping = {}
            for n in noego.param_names():
                dst = AUX + n[len(NOEGO):]
                if dst in self.aux.store:
                    mapping[dst] = n
            self.aux.store.copy_from(noego.store, mapping)
        self.layout = InputLayout(e.n_vehicles, e.n_pedestrians, use_z=self.vcfg.uses_isi, use_w=cfg.tp,
                                  embed_dim=self.enc_cfg.embed_dim if self.vcfg.shared_encoder else 0)
        self.pi_store = ParamStore()
        self.vf_store = ParamStore()
        self.policy = PolicyNet(self.pi_store, self.layout, rng, cfg.hidden)
        self.value = ValueNet(self.vf_store, self.layout, rng, cfg.hidden)
        # the initial policy follows the exploration prior (output weights start near zero)
        logp = np.log(np.asarray(cfg.action_prior, dtype=np.float64))
        self.pi_store[self.policy.out.bname].data = logp - logp.mean()

    @property
    def needs_encoder(self) -> bool:
        return self.aux is not None and (self.cfg.tp or self.vcfg.shared_encoder
                                         or self.vcfg.z_source == "inferred")

    def features(self, feats, mask, x, tmask, z_true=None, infer: bool = False,
                 manipulation="none", manip_rngs=None) -> StepFeatures:
        """Policy inputs for a batch of decision steps.

        ``infer`` forces inferred beliefs (test time); otherwise the variant's
        training source is used and ``z_true`` must be given when it asks for
        ground truth.
        """
        e = self.env_cfg
        nv = e.n_vehicles
        z = w = beliefs = embedding = None
        use_inferred = infer or self.vcfg.z_source == "inferred"
        need_enc = self.aux is not None and (self.cfg.tp or self.vcfg.shared_encoder
                                             or (self.vcfg.uses_isi and use_inferred))
        if need_enc:
            with T.no_grad():
                emb = self.aux.embed(x, tmask, mask)
                if self.vcfg.uses_isi:
                    b = self.aux.beliefs(emb)
                    beliefs = (b.p_conservative, b.p_yield)
                if self.cfg.tp:
                    mu_with = self.aux.predict(emb, x).data
                    mu_without = self.frozen.predict(x, tmask, mask)
                    w = scene_batch_scores(mu_with, mu_without, mask)
                if self.vcfg.shared_encoder:
                    embedding = emb.full.data[:, 0]
        if self.vcfg.uses_isi:
            if use_inferred:
                pc, py = beliefs
                if manipulation != "none":
                    pc, py = pc.copy(), py.copy()
                    for i in range(len(pc)):
                        pc[i], py[i] = manipulate_beliefs(pc[i], py[i], mask[i, 1:1 + nv], manipulation,
                                                          manip_rngs[i])
                z = np.stack([pc, py], axis=-1)
            else:
                if z_true is None:
                    raise ValueError("ground-truth internal states required for this variant")
                z = z_true
        base = build_policy_input(InputLayout(e.n_vehicles, e.n_pedestrians, self.layout.use_z,
                                              self.layout.use_w), feats, mask, z, w)
        xin = base if embedding is None else np.concatenate([base, embedding], axis=1)
        return StepFeatures(xin, z, w, beliefs, embedding)

    # ------------------------------------------------------------------ persistence
    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        digest = self.cfg.digest()
        self.pi_store.save(os.path.join(directory, "policy.ckpt"), digest)
        self.vf_store.save(os.path.join(directory, "value.ckpt"), digest)
        if self.aux is not None:
            self.aux.store.save(os.path.join(directory, "aux.ckpt"), self.enc_cfg.digest())
        if self.frozen is not None:
            self.frozen.predictor.store.save(os.path.join(directory, "noego.ckpt"), self.enc_cfg.digest())
        atomic_write_text(os.path.join(directory, "config.json"),
                          json.dumps(self.cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "Agent":
        path = os.path.join(directory, "config.json")
        if not os.path.exists(path):
            raise CheckpointMissingError(f"no agent checkpoint in {directory!r}")
        with open(path) as fh:
            cfg = TrainConfig.from_dict(json.load(fh))
        noego = None
        if cfg.tp:
            noego = load_noego_predictor(os.path.join(directory, "noego.ckpt"), cfg.env_config,
                                         cfg.message_passing, cfg.hidden)
        agent = cls(cfg, noego)
        for store, name in ((agent.pi_store, "policy.ckpt"), (agent.vf_store, "value.ckpt")):
            loaded, _ = ParamStore.load(os.path.join(directory, name))
            store.load_values(loaded.values())
            store.step = loaded.step
        if agent.aux is not None:
            loaded, _ = ParamStore.load(os.path.join(directory, "aux.ckpt"))
            agent.aux.store.load_values(loaded.values())
        return agent
