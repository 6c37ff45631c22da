"""Frozen-backbone prompt tuning and evaluation.

:class:`PromptTuner` is the one estimator for both downstream tasks: it
learns prompt parameters (per ``method``) and a linear probe on top of a
checkpointed backbone whose weights are never touched.  Node
classification optimizes the mean cross entropy over the labeled node
set in full batches; graph classification batches disjoint unions and
applies a readout before the probe.

Methods: ``edgeprompt``, ``edgeprompt+``, ``gpf``, ``gpf-plus``, and
``classifier-only`` (no prompts; the probing baseline).
"""

from __future__ import annotations

import numpy as np

from .base import BaseEstimator, check_is_fitted, check_positive
from .checkpoint import Checkpoint, LearnedPrompts, build_model
from .data import FewShotSplit, LabeledDataset
from .errors import ConfigError
from .graph import Graph, disjoint_union, membership_from_offsets
from .models import GNNModel, LinearHead, classifier_forward, model_forward, readout
from .optim import Adam
from .prompts import EdgePromptParams, EdgePromptPlusParams, NodePromptParams
from . import tensor as T
from .tensor import Tape, Tensor

METHODS = ("edgeprompt", "edgeprompt+", "gpf", "gpf-plus", "classifier-only")

_EVAL_CHUNK = 128  # graphs per disjoint union during evaluation


def prompted_representations(model: GNNModel, g: Graph, prompt_params) -> Tensor:
    """Final node representations under the given prompt family (or none)."""
    if prompt_params is None:
        return model_forward(model, g)
    if isinstance(prompt_params, NodePromptParams):
        return model_forward(model, g, features=prompt_params.apply(Tensor(g.features)))
    return model_forward(model, g, prompts=prompt_params.provider(g))


def _graph_logits(model, prompt_params, head, graphs, readout_kind):
    union, offsets = disjoint_union(graphs)
    h = prompted_representations(model, union, prompt_params)
    reps = readout(h, membership_from_offsets(offsets), readout_kind)
    return classifier_forward(head, reps)


def evaluate_accuracy(model: GNNModel, prompt_params, head: LinearHead,
                      ds: LabeledDataset, ids, readout_kind: str = "sum") -> float:
    """Argmax accuracy over the given instance ids (pure; no training state).

    Ties at the argmax resolve to the lowest class index.
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size == 0:
        raise ConfigError("evaluate_accuracy: empty id list")
    preds = predict_labels(model, prompt_params, head, ds, ids, readout_kind)
    return float(np.mean(preds == ds.all_labels()[ids]))


def predict_labels(model: GNNModel, prompt_params, head: LinearHead,
                   ds: LabeledDataset, ids, readout_kind: str = "sum") -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ds.task == "node":
        g = ds.graphs[0] if len(ds.graphs) == 1 else disjoint_union(ds.graphs)[0]
        reps = prompted_representations(model, g, prompt_params)
        logits = classifier_forward(head, T.gather_rows(reps, ids))
        return np.argmax(logits.data, axis=1)
    preds = np.empty(ids.size, dtype=np.int64)
    for start in range(0, ids.size, _EVAL_CHUNK):
        chunk = ids[start : start + _EVAL_CHUNK]
        logits = _graph_logits(model, prompt_params, head,
                               [ds.graphs[i] for i in chunk], readout_kind)
        preds[start : start + _EVAL_CHUNK] = np.argmax(logits.data, axis=1)
    return preds


class PromptTuner(BaseEstimator):
    """Learn prompts + a linear probe for a frozen checkpointed backbone.

    Parameters
    ----------
    checkpoint : Checkpoint
        The pre-trained backbone; its tensors are bit-identical before
        and after tuning.
    method : one of METHODS
    epochs, lr, batch_size : training loop knobs (batch_size applies to
        graph classification only; node tuning is full-batch).
    anchors : anchor prompts per layer for edgeprompt+ (int, per-layer
        list, or None for the task default: 10 node / 5 graph).  Doubles
        as the basis size for gpf-plus.
    readout : 'sum' or 'mean', graph classification only.
    leaky_slope : slope of the score function's LeakyReLU.
    seed : drives head init, score-weight init, and batch order.

    Fitted attributes: ``model_``, ``prompts_``, ``head_``, ``history_``
    (per-epoch ``loss`` and ``train_acc``), ``anchors_``.
    """

    def __init__(self, checkpoint: Checkpoint, method: str = "edgeprompt+",
                 epochs: int = 200, lr: float = 1e-3, batch_size: int = 32,
                 anchors=None, readout: str = "sum", leaky_slope: float = 0.2,
                 seed: int = 0):
        self.checkpoint = checkpoint
        self.method = method
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.anchors = anchors
        self.readout = readout
        self.leaky_slope = leaky_slope
        self.seed = seed

    # ------------------------------------------------------------------

    def _resolve_anchors(self, task: str, num_layers: int) -> list[int]:
        a = self.anchors
        if a is None:
            a = 10 if task == "node" else 5
        if isinstance(a, int):
            counts = [a] * num_layers
        else:
            counts = [int(m) for m in a]
            if len(counts) != num_layers:
                raise ConfigError(
                    f"{len(counts)} anchor counts for {num_layers} layers"
                )
        if any(m < 1 for m in counts):
            raise ConfigError(f"anchor counts must be >= 1, got {counts}")
        return counts

    def _build_prompts(self, model: GNNModel, task: str, feature_dim: int):
        prompt_rng = np.random.default_rng([int(self.seed), 0x9201])
        counts = self._resolve_anchors(task, model.num_layers)
        if self.method == "classifier-only":
            return None
        if self.method == "edgeprompt":
            return EdgePromptParams.create(model.dims[:-1])
        if self.method == "edgeprompt+":
            return EdgePromptPlusParams.create(
                model.dims[:-1], counts, prompt_rng, leaky_slope=self.leaky_slope
            )
        if self.method in ("gpf", "gpf-plus"):
            return NodePromptParams.create(self.method, feature_dim, counts[0], prompt_rng)
        raise ConfigError(f"unknown tuning method {self.method!r}; choose from {METHODS}")

    def fit(self, dataset: LabeledDataset, split: FewShotSplit) -> "PromptTuner":
        check_positive("epochs", self.epochs)
        check_positive("lr", self.lr)
        check_positive("batch_size", self.batch_size)
        if not isinstance(self.checkpoint, Checkpoint):
            raise ConfigError("checkpoint must be a Checkpoint instance")
        model = build_model(self.checkpoint)
        if dataset.feature_dim != model.input_dim:
            raise ConfigError(
                f"dataset feature dim {dataset.feature_dim} does not match "
                f"checkpoint input dim {model.input_dim}"
            )
        labels = dataset.all_labels()
        train_ids = np.asarray(split.train_ids, dtype=np.int64)
        if train_ids.size == 0:
            raise ConfigError("split has no training instances")
        if train_ids.max() >= labels.shape[0]:
            raise ConfigError("split ids exceed the dataset's instance count")

        task = dataset.task
        self.anchors_ = self._resolve_anchors(task, model.num_layers)
        prompts = self._build_prompts(model, task, dataset.feature_dim)
        head_rng = np.random.default_rng([int(self.seed), 0x4EAD])
        head = LinearHead.create(head_rng, model.output_dim, dataset.num_classes)

        trainable = ([] if prompts is None else prompts.trainable())
        trainable = trainable + [t for _, t in head.parameters()]
        opt = Adam(trainable, lr=self.lr)
        history = {"loss": [], "train_acc": []}

        if task == "node":
            self._fit_node(model, prompts, head, dataset, train_ids, labels,
                           trainable, opt, history)
        else:
            self._fit_graph(model, prompts, head, dataset, train_ids, labels,
                            trainable, opt, history)

        self.model_ = model
        self.prompts_ = prompts
        self.head_ = head
        self.history_ = history
        self.num_classes_ = dataset.num_classes
        self.task_ = task
        self.split_ = split
        return self

    def _fit_node(self, model, prompts, head, dataset, train_ids, labels,
                  trainable, opt, history):
        g = dataset.graphs[0] if len(dataset.graphs) == 1 else disjoint_union(dataset.graphs)[0]
        y = labels[train_ids]
        frozen_reps = None
        if prompts is None:
            # No prompts means the representations never change; compute once.
            frozen_reps = prompted_representations(model, g, None).data[train_ids]
        for _ in range(self.epochs):
            with Tape() as tape:
                tape.watch(*trainable)
                if frozen_reps is None:
                    reps = prompted_representations(model, g, prompts)
                    picked = T.gather_rows(reps, train_ids)
                else:
                    picked = Tensor(frozen_reps)
                logits = classifier_forward(head, picked)
                loss = T.cross_entropy_with_logits(logits, y)
                grads = tape.backward(loss)
                opt.step([grads[t] for t in trainable])
            history["loss"].append(loss.item())
            history["train_acc"].append(float(np.mean(np.argmax(logits.data, axis=1) == y)))

    def _fit_graph(self, model, prompts, head, dataset, train_ids, labels,
                   trainable, opt, history):
        batch_rng = np.random.default_rng([int(self.seed), 0xBA7C])
        y_all = labels
        for _ in range(self.epochs):
            order = train_ids[batch_rng.permutation(train_ids.size)]
            losses, sizes, correct = [], [], 0
            for start in range(0, order.size, self.batch_size):
                batch = order[start : start + self.batch_size]
                graphs = [dataset.graphs[i] for i in batch]
                y = y_all[batch]
                with Tape() as tape:
                    tape.watch(*trainable)
                    logits = _graph_logits(model, prompts, head, graphs, self.readout)
                    loss = T.cross_entropy_with_logits(logits, y)
                    grads = tape.backward(loss)
                    opt.step([grads[t] for t in trainable])
                losses.append(loss.item())
                sizes.append(batch.size)
                correct += int(np.sum(np.argmax(logits.data, axis=1) == y))
            history["loss"].append(float(np.average(losses, weights=sizes)))
            history["train_acc"].append(correct / order.size)

    # ------------------------------------------------------------------

    def predict(self, dataset: LabeledDataset, ids) -> np.ndarray:
        check_is_fitted(self, "model_", "head_")
        return predict_labels(self.model_, self.prompts_, self.head_,
                              dataset, ids, self.readout)

    def score(self, dataset: LabeledDataset, ids) -> float:
        check_is_fitted(self, "model_", "head_")
        return evaluate_accuracy(self.model_, self.prompts_, self.head_,
                                 dataset, ids, self.readout)

    def to_learned_prompts(self) -> LearnedPrompts:
        """Package the tuned tensors for persistence (omits classifier-only)."""
        check_is_fitted(self, "model_", "head_")
        if self.prompts_ is None:
            raise ConfigError("classifier-only runs have no prompt artifact to save")
        tensors = {name: t.data.copy() for name, t in self.prompts_.named_tensors()}
        for name, t in self.head_.parameters():
            tensors[name] = t.data.copy()
        return LearnedPrompts(
            method=self.method,
            task=self.task_,
            shots=int(self.split_.shots_per_class),
            split_seed=int(self.split_.seed),
            anchors=list(self.anchors_),
            readout=self.readout,
            backbone_digest=self.checkpoint.digest(),
            tensors=tensors,
            metadata={"epochs": int(self.epochs), "lr": self.lr,
                      "seed": int(self.seed), "num_classes": int(self.num_classes_)},
        )


def prompts_from_artifact(lp: LearnedPrompts, model: GNNModel):
    """Rebuild (prompt params, head) from a learned-prompt file."""
    tensors = lp.tensors
    head = LinearHead(Tensor(tensors["head.weight"]), Tensor(tensors["head.bias"]))
    if lp.method == "edgeprompt":
        vectors = [Tensor(tensors[f"prompt.{l}.vector"]) for l in range(model.num_layers)]
        return EdgePromptParams(vectors), head
    if lp.method == "edgeprompt+":
        anchors = [Tensor(tensors[f"prompt.{l}.anchors"]) for l in range(model.num_layers)]
        weights = [Tensor(tensors[f"prompt.{l}.score_weights"]) for l in range(model.num_layers)]
        return EdgePromptPlusParams(anchors, weights), head
    if lp.method == "gpf":
        return NodePromptParams("gpf", vector=Tensor(tensors["prompt.vector"])), head
    if lp.method == "gpf-plus":
        return NodePromptParams("gpf-plus", basis=Tensor(tensors["prompt.basis"]),
                                score_map=Tensor(tensors["prompt.score_map"])), head
    raise ConfigError(f"unknown method {lp.method!r} in prompt file")
