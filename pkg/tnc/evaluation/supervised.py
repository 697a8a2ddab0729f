"""End-to-end supervised baseline: the same encoder with a linear head trained on window labels."""

import logging

import numpy as np
import torch
from torch import nn

from ..dataset import TimeSeriesDataset
from ..errors import EvaluationError
from ..model import EncoderConfig, RnnEncoder, init_uniform_fan_in
from .classification import ClassifierEval, auprc, precision_recall_curves
from .encode import window_set

logger = logging.getLogger(__name__)


class SupervisedClassifier(nn.Module):
    def __init__(self, encoder_config: EncoderConfig, n_classes: int) -> None:
        super().__init__()
        self.encoder = RnnEncoder(encoder_config)
        self.head = nn.Linear(encoder_config.encoding_size, n_classes)

    def forward(self, windows: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(windows))


def supervised_baseline(
    dataset: TimeSeriesDataset,
    encoder_config: EncoderConfig,
    train_instances,
    test_instances,
    epochs: int = 20,
    learning_rate: float = 1e-3,
    batch_size: int = 64,
    seed: int = 42,
) -> ClassifierEval:
    if not dataset.has_labels:
        raise EvaluationError("the supervised baseline needs state labels")
    delta = encoder_config.window_size
    train = window_set(dataset, delta, instances=train_instances)
    test = window_set(dataset, delta, instances=test_instances)
    classes = np.unique(train.labels)
    if classes.size < 2:
        raise EvaluationError("training windows cover a single class")

    generator = torch.Generator().manual_seed(seed)
    model = SupervisedClassifier(encoder_config, classes.size)
    init_uniform_fan_in(model, generator)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    criterion = nn.CrossEntropyLoss()

    x_train = torch.as_tensor(train.windows, dtype=torch.float32)
    y_train = torch.as_tensor(np.searchsorted(classes, train.labels), dtype=torch.long)
    for epoch in range(1, epochs + 1):
        model.train()
        order = torch.randperm(len(train), generator=generator)
        epoch_loss = 0.0
        for start in range(0, len(train), batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad()
            loss = criterion(model(x_train[idx]), y_train[idx])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss) * idx.numel()
        logger.debug(f"supervised epoch={epoch} loss={epoch_loss / len(train):.4f}")

    model.eval()
    with torch.no_grad():
        scores = torch.softmax(model(torch.as_tensor(test.windows, dtype=torch.float32)), dim=-1).numpy()
    predictions = classes[scores.argmax(axis=1)]
    accuracy = float(np.mean(predictions == test.labels))
    score = auprc(test.labels, scores, classes)
    logger.info(f"Supervised baseline: accuracy={accuracy:.4f} auprc={score:.4f}")
    return ClassifierEval(
        accuracy=accuracy,
        auprc=score,
        classes=classes,
        predictions=predictions,
        pr_curves=precision_recall_curves(test.labels, scores, classes),
    )
