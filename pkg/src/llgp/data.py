"""Multi-output datasets, their standardization, and the CSV schema.

Files carry a header ``output,x1[,x2],y``.  Output labels are arbitrary
strings mapped to indices by first appearance.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    """Per-output z-scoring of responses and per-dimension min/max scaling of inputs."""

    y_mean: np.ndarray
    y_scale: np.ndarray
    x_shift: np.ndarray
    x_scale: np.ndarray

    @classmethod
    def fit(cls, outputs, inputs, values, num_outputs):
        y_mean = np.zeros(num_outputs)
        y_scale = np.ones(num_outputs)
        for d in range(num_outputs):
            yd = values[outputs == d]
            if yd.size:
                y_mean[d] = yd.mean()
                sd = yd.std()
                if sd > 0:
                    y_scale[d] = sd
        lo = inputs.min(axis=0)
        span = inputs.max(axis=0) - lo
        span[span == 0] = 1.0
        return cls(y_mean, y_scale, lo, span)

    def transform_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_shift) / self.x_scale

    def transform_y(self, y, outputs):
        return (y - self.y_mean[outputs]) / self.y_scale[outputs]

    def inverse_y(self, y, outputs):
        return y * self.y_scale[outputs] + self.y_mean[outputs]

    def inverse_var(self, var, outputs):
        return var * self.y_scale[outputs] ** 2

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("y_mean", "y_scale", "x_shift", "x_scale")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("y_mean", "y_scale", "x_shift", "x_scale")))


class MultiOutputDataset:
    """Observations ``(output, x, y)`` for D outputs sharing a P-dimensional input space.

    ``inputs`` and ``values`` are kept in original units; :attr:`x` and
    :attr:`y` are the standardized views used by the model.
    """

    def __init__(self, labels, outputs, inputs, values, standardization=None):
        self.labels = [str(l) for l in labels]
        self.outputs = np.asarray(outputs, dtype=np.intp).ravel()
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        self.inputs = inputs
        self.values = np.asarray(values, dtype=np.float64).ravel()
        n = self.outputs.size
        if self.inputs.shape[0] != n or self.values.size != n:
            raise DatasetError("outputs, inputs and values must have the same length")
        if not self.labels:
            raise DatasetError("dataset needs at least one output")
        if n and (self.outputs.min() < 0 or self.outputs.max() >= len(self.labels)):
            raise DatasetError("output index out of range")
        if self.inputs.shape[1] not in (1, 2):
            raise DatasetError("only 1-D and 2-D inputs are supported, got P={}".format(self.inputs.shape[1]))
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.values))):
            raise DatasetError("non-finite input or response value")
        if standardization is None and n:
            standardization = Standardization.fit(self.outputs, self.inputs, self.values, len(self.labels))
        self.standardization = standardization

    @property
    def num_outputs(self):
        return len(self.labels)

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def n(self):
        return self.outputs.size

    def __len__(self):
        return self.n

    def counts(self):
        return np.bincount(self.outputs, minlength=self.num_outputs)

    @property
    def x(self):
        return self.standardization.transform_x(self.inputs)

    @property
    def y(self):
        return self.standardization.transform_y(self.values, self.outputs)

    def with_standardization(self, standardization):
        return MultiOutputDataset(self.labels, self.outputs, self.inputs, self.values, standardization)

    def subset(self, mask):
        mask = np.asarray(mask)
        return MultiOutputDataset(
            self.labels, self.outputs[mask], self.inputs[mask], self.values[mask], self.standardization
        )

    def require_all_outputs(self):
        empty = [self.labels[d] for d, c in enumerate(self.counts()) if c == 0]
        if empty:
            raise DatasetError("outputs without observations: {}".format(", ".join(empty)))


def load_dataset(path, labels=None, standardization=None):
    """Parse a dataset CSV.

    With ``labels`` given (a test file for a trained model) every row must
    name a known output; otherwise labels are collected in order of first
    appearance.  Standardization is fitted on the file unless supplied.
    """
    fixed = labels is not None
    labels = list(labels) if fixed else []
    index = {l: i for i, l in enumerate(labels)}
    outputs, inputs, values = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError("{}: empty file".format(path)) from None
        if len(header) not in (3, 4) or header[0] != "output" or header[-1] != "y":
            raise DatasetError(
                "{}: header must be output,x1[,x2],y; got {}".format(path, ",".join(header))
            )
        expected = ["x{}".format(p + 1) for p in range(len(header) - 2)]
        if header[1:-1] != expected:
            raise DatasetError("{}: input columns must be named {}".format(path, ",".join(expected)))
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DatasetError("{}:{}: expected {} columns, got {}".format(path, line, width, len(row)))
            label = row[0].strip()
            if label not in index:
                if fixed:
                    raise DatasetError("{}:{}: unknown output label {!r}".format(path, line, label))
                index[label] = len(labels)
                labels.append(label)
            try:
                nums = [float(c) for c in row[1:]]
            except ValueError:
                raise DatasetError("{}:{}: non-numeric cell in {}".format(path, line, row)) from None
            if not all(math.isfinite(v) for v in nums):
                raise DatasetError("{}:{}: non-finite value".format(path, line))
            outputs.append(index[label])
            inputs.append(nums[:-1])
            values.append(nums[-1])
    if not outputs:
        raise DatasetError("{}: no data rows".format(path))
    return MultiOutputDataset(labels, outputs, np.array(inputs), values, standardization)


def write_dataset(dataset, path):
    p = dataset.input_dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["output"] + ["x{}".format(i + 1) for i in range(p)] + ["y"])
        for d, x, y in zip(dataset.outputs, dataset.inputs, dataset.values):
            w.writerow([dataset.labels[d]] + [repr(float(v)) for v in x] + [repr(float(y))])
