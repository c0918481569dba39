"""End-to-end training and evaluation on the synthetic aligned world.

Both encoder towers are frozen; only the decoder stack and the shared head
learn. Per batch: prompted text embeddings form the initial queries, pyramid
tile encodings (precomputed once, since the towers never change) form the
initial keys/values, the asymmetric loss is applied over the selected label
set, and Adam updates the decoder and head.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import classify, init_head, init_stack, stack_forward
from .encoders import DEFAULT_PROMPTS, PromptTemplate, embed_label, make_synthetic_world
from .errors import ConfigurationError
from .optim import AdamState, adam_step
from .pyramid import build_plan, encode_and_stack, extract_tiles
from .rng import SeedStreams
from .supervision import AslConfig, asl_loss_node, select_labels
from .tensor import Tensor, add, backward, scale
from .metrics import MetricsReport, metrics_report


def default_lr(target_side: int) -> float:
    return 1e-4 if target_side > 336 else 3e-4


@dataclass
class TrainConfig:
    # synthetic world
    classes: int = 16
    image_side: int = 64
    base_size: int = 32
    patch_size: int = 8
    embed_dim: int = 16
    noise_std: float = 0.05
    world_seed: int = 0
    n_seen: int = 12
    # decoder
    depth: int = 6
    kind: str = "dual_modal"
    heads: int = 2
    ffn_hidden: int = 0  # 0 = 4 * embed_dim
    dropout: float = 0.1
    # optimization
    lr: float = -1.0  # negative = resolve from resolution
    weight_decay: float = 1e-4
    epochs: int = 5
    batch_size: int = 8
    # supervision
    alpha: float = 3.0
    selection_threshold: int = 512
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    # pyramid
    cls_only_non_bottom: bool = False
    pyramid_levels: list = field(default_factory=list)  # empty = all levels
    # run
    n_train: int = 400
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0:
            self.lr = default_lr(self.image_side)
        if self.n_seen > self.classes:
            raise ConfigurationError(
                f"n_seen {self.n_seen} exceeds class count {self.classes}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def asl_config(self) -> AslConfig:
        return AslConfig(self.gamma_pos, self.gamma_neg, self.margin)


@dataclass
class Checkpoint:
    config: dict
    config_hash: str
    epoch: int
    weights: dict  # name -> ndarray
    opt_m: dict
    opt_v: dict
    opt_step: int
    rng: dict
    loss_history: list  # per-epoch mean loss


def open_vocab_split(class_names, n_seen: int):
    """Case-insensitive alphabetical split: first n_seen seen, rest unseen."""
    if len(set(class_names)) != len(class_names):
        raise ValueError("class names contain duplicates")
    if not n_seen < len(class_names):
        raise ValueError(
            f"n_seen {n_seen} must be smaller than total {len(class_names)}"
        )
    ordered = sorted(class_names, key=str.casefold)
    return ordered[:n_seen], ordered[n_seen:]


def build_world(config: TrainConfig):
    return make_synthetic_world(
        k=config.classes,
        image_side=config.image_side,
        base_size=config.base_size,
        embed_dim=config.embed_dim,
        seed=config.world_seed,
        patch_size=config.patch_size,
        noise_std=config.noise_std,
    )


def build_pyramid_plan(config: TrainConfig):
    return build_plan(
        config.base_size,
        config.image_side,
        selected_levels=config.pyramid_levels or None,
        cls_only_non_bottom=config.cls_only_non_bottom,
    )


def label_queries(world, names, dtype=np.float64) -> np.ndarray:
    """Prompted, averaged, unit-norm text embedding per label name; k x e."""
    templates = [PromptTemplate(p) for p in DEFAULT_PROMPTS]
    rows = [embed_label(n, templates, world.text_encoder) for n in names]
    return np.stack(rows).astype(dtype)


def encode_image(world, plan, image, dtype=np.float64) -> np.ndarray:
    tiles = extract_tiles(image, plan)
    return encode_and_stack(tiles, plan, world.image_encoder).astype(dtype)


def build_model(config: TrainConfig, streams: SeedStreams):
    dtype = config.np_dtype
    stack = init_stack(
        streams.stream("init.decoder"),
        depth=config.depth,
        embed_dim=config.embed_dim,
        heads=config.heads,
        kind=config.kind,
        ffn_hidden=config.ffn_hidden or None,
        dropout_rate=config.dropout,
        dtype=dtype,
    )
    head = init_head(streams.stream("init.head"), config.embed_dim, dtype=dtype)
    return stack, head


def named_parameters(stack, head):
    out = [(f"decoder.{n}", t) for n, t in stack.tensors()]
    out.extend((f"head.{n}", t) for n, t in head.tensors())
    return out


def forward_scores(stack, head, q0_values, kv_values, dtype=None) -> np.ndarray:
    """Inference-mode per-label probabilities for one image; returns (k,)."""
    q0 = Tensor(np.asarray(q0_values))
    kv = Tensor(np.asarray(kv_values))
    probs = classify(stack_forward(q0, kv, stack, training=False), head)
    return probs.value.reshape(-1)


def train(config: TrainConfig, world=None, resume: Checkpoint | None = None) -> Checkpoint:
    """Train the decoder stack + head; returns an in-memory checkpoint.

    Resuming from a checkpoint of the same config reproduces the
    uninterrupted run bit-exactly.
    """
    dtype = config.np_dtype
    if world is None:
        world = build_world(config)
    if world.embed_dim != config.embed_dim:
        raise ConfigurationError(
            f"world embed dim {world.embed_dim} != config {config.embed_dim}"
        )
    plan = build_pyramid_plan(config)
    streams = SeedStreams(config.seed)

    seen, _unseen = open_vocab_split(world.class_names, config.n_seen)
    seen_idx = np.array([world.class_names.index(n) for n in seen])
    q0_all = label_queries(world, seen, dtype)

    # dataset is fixed per seed; draw it before any training randomness
    data_stream = streams.stream("data")
    samples = world.sample_many(data_stream, config.n_train, class_subset=seen_idx)
    kv_list = [encode_image(world, plan, img, dtype) for img, _ in samples]
    label_mat = np.stack([lab[seen_idx] for _, lab in samples])

    stack, head = build_model(config, streams)
    params = named_parameters(stack, head)
    tensors = [t for _, t in params]
    state = AdamState.for_params(tensors)

    start_epoch = 0
    loss_history: list[float] = []
    if resume is not None:
        mine = config.to_dict()
        theirs = dict(resume.config)
        mine.pop("epochs")
        theirs.pop("epochs", None)
        if mine != theirs:
            raise ConfigurationError("resume checkpoint config differs from config")
        if resume.epoch > config.epochs:
            raise ConfigurationError(
                f"checkpoint already at epoch {resume.epoch} > target {config.epochs}"
            )
        _load_into(resume, params, state, streams)
        start_epoch = resume.epoch
        loss_history = list(resume.loss_history)

    shuffle_stream = streams.stream("shuffle")
    dropout_stream = streams.stream("dropout")
    selection_stream = streams.stream("selection")
    asl_cfg = config.asl_config()
    k_seen = len(seen)
    n = len(samples)

    for _epoch in range(start_epoch, config.epochs):
        order = shuffle_stream.permutation(n)
        epoch_losses = []
        for lo in range(0, n, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            if k_seen > config.selection_threshold:
                sel = select_labels(label_mat[batch], config.alpha, selection_stream)
                idx = sel.selected
            else:
                idx = np.arange(k_seen)
            q0 = Tensor(q0_all[idx])
            loss_sum = None
            for i in batch:
                q_final = stack_forward(
                    q0, Tensor(kv_list[i]), stack, training=True, stream=dropout_stream
                )
                probs = classify(q_final, head)
                node = asl_loss_node(probs, label_mat[i][idx], asl_cfg)
                loss_sum = node if loss_sum is None else add(loss_sum, node)
            loss = scale(loss_sum, 1.0 / len(batch))
            backward(loss)
            if config.lr > 0:
                adam_step(tensors, state, config.lr, config.weight_decay)
            epoch_losses.append(float(loss.value[0, 0]))
        loss_history.append(float(np.mean(epoch_losses)))

    return Checkpoint(
        config=config.to_dict(),
        config_hash=config.hash(),
        epoch=config.epochs,
        weights={name: t.value.copy() for name, t in params},
        opt_m={name: m.copy() for (name, _), m in zip(params, state.m)},
        opt_v={name: v.copy() for (name, _), v in zip(params, state.v)},
        opt_step=state.step,
        rng=streams.capture(),
        loss_history=loss_history,
    )


def _load_into(ckpt: Checkpoint, params, state: AdamState, streams: SeedStreams):
    for i, (name, t) in enumerate(params):
        if name not in ckpt.weights:
            raise ConfigurationError(f"checkpoint is missing parameter {name}")
        t.value = ckpt.weights[name].astype(t.value.dtype).copy()
        state.m[i] = ckpt.opt_m[name].astype(t.value.dtype).copy()
        state.v[i] = ckpt.opt_v[name].astype(t.value.dtype).copy()
    state.step = ckpt.opt_step
    streams.restore(ckpt.rng)


def restore_model(ckpt: Checkpoint):
    """Rebuild world + model from a checkpoint. Returns (config, world, stack, head)."""
    config = TrainConfig.from_dict(ckpt.config)
    world = build_world(config)
    stack, head = build_model(config, SeedStreams(config.seed))
    for name, t in named_parameters(stack, head):
        if name not in ckpt.weights:
            raise ConfigurationError(f"checkpoint is missing parameter {name}")
        t.value = ckpt.weights[name].astype(t.value.dtype).copy()
    return config, world, stack, head


def evaluate(stack, head, q0_values, kv_list, labels, ks=(3, 5)) -> MetricsReport:
    """Score every image against the given label queries and report metrics.

    ``labels`` is n_images x n_labels, aligned with the rows of ``q0_values``.
    """
    labels = np.atleast_2d(np.asarray(labels))
    if labels.shape[0] == 0:
        raise ValueError("dataset is empty")
    scores = np.stack(
        [forward_scores(stack, head, q0_values, kv) for kv in kv_list]
    )
    return metrics_report(scores, labels, ks)


def evaluation_scores(ckpt: Checkpoint, vocab=None, n_eval=200, eval_seed=1234,
                      class_subset=None):
    """Sample a fresh evaluation set from the checkpoint's world and score it.

    Returns (scores n x |vocab|, labels, vocab names). ``vocab`` defaults to
    the seen classes of the training split; passing the full class list
    exercises the open-vocabulary path (unseen names are simply embedded).
    """
    config, world, stack, head = restore_model(ckpt)
    plan = build_pyramid_plan(config)
    if vocab is None:
        vocab, _ = open_vocab_split(world.class_names, config.n_seen)
    for name in vocab:
        if name not in world.class_names:
            raise ValueError(f"label {name!r} is not a class of this world")
    vocab_idx = np.array([world.class_names.index(n) for n in vocab])
    dtype = config.np_dtype
    q0 = label_queries(world, vocab, dtype)

    stream = SeedStreams(eval_seed).stream("eval_data")
    samples = world.sample_many(stream, n_eval, class_subset=class_subset)
    kv_list = [encode_image(world, plan, img, dtype) for img, _ in samples]
    labels = np.stack([lab[vocab_idx] for _, lab in samples])
    scores = np.stack(
        [forward_scores(stack, head, q0, kv) for kv in kv_list]
    )
    return scores, labels, list(vocab)


def cosine_baseline_scores(world, images, vocab) -> np.ndarray:
    """Decoder-free reference scores: cosine of each image's global CLS token
    (level-0 view) against every prompted label embedding."""
    from .supervision import cosine_baseline

    plan = build_pyramid_plan_for(world)
    q = label_queries(world, vocab)
    rows = []
    for img in images:
        tile0 = extract_tiles(img, plan)[0]
        cls = world.image_encoder.encode_tile(tile0)[0]
        scores, _ = cosine_baseline(cls, q)
        rows.append(scores)
    return np.stack(rows)


def build_pyramid_plan_for(world):
    return build_plan(world.base_size, world.image_side)


def evaluate_checkpoint(ckpt: Checkpoint, vocab=None, n_eval=200, eval_seed=1234,
                        ks=(3, 5), class_subset=None) -> MetricsReport:
    scores, labels, _ = evaluation_scores(
        ckpt, vocab=vocab, n_eval=n_eval, eval_seed=eval_seed,
        class_subset=class_subset,
    )
    return metrics_report(scores, labels, ks)
