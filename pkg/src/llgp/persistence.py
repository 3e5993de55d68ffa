"""JSON model files.

A model file stores the learned kernel, the grid, the configuration, the
standardization and the training data, which prediction needs to condition
on.  Floats are written with Python's shortest round-trip representation, so
hyperparameters reload bit-for-bit.
"""

import json
from dataclasses import dataclass, field

from .config import ModelConfig
from .data import MultiOutputDataset, Standardization
from .interpolation import InterpolationGrid
from .kernel import LmcKernel, Representation

FORMAT = "llgp-model"
VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass
class SavedModel:
    kernel: LmcKernel
    grid: InterpolationGrid
    representation: Representation
    config: ModelConfig
    train: MultiOutputDataset
    metrics: dict = field(default_factory=dict)


def model_to_dict(model):
    train = model.train
    return {
        "format": FORMAT,
        "version": VERSION,
        "kernel": model.kernel.to_dict(),
        "grid": model.grid.to_dict(),
        "representation": Representation(model.representation).value,
        "config": model.config.to_dict(),
        "standardization": train.standardization.to_dict(),
        "training_data": {
            "labels": train.labels,
            "outputs": train.outputs.tolist(),
            "inputs": train.inputs.tolist(),
            "values": train.values.tolist(),
        },
        "metrics": model.metrics,
    }


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def model_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != FORMAT:
        raise ModelFileError("not an llgp model file")
    if d.get("version") != VERSION:
        raise ModelFileError("model file version {!r} is not supported (expected {})".format(d.get("version"), VERSION))
    try:
        td = d["training_data"]
        stdz = Standardization.from_dict(d["standardization"])
        train = MultiOutputDataset(td["labels"], td["outputs"], td["inputs"], td["values"], stdz)
        return SavedModel(
            kernel=LmcKernel.from_dict(d["kernel"]),
            grid=InterpolationGrid.from_dict(d["grid"]),
            representation=Representation(d["representation"]),
            config=ModelConfig.from_dict(d["config"]),
            train=train,
            metrics=d.get("metrics", {}),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFileError("corrupted model file: {}".format(e)) from e


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelFileError("{}: invalid JSON: {}".format(path, e)) from None
    return model_from_dict(d)
