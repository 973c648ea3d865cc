"""Python interface to the size recommendation engine.

Thin dict-friendly wrappers over the pybind11 module `_sizerec`; all heavy
lifting happens in the C++ core.
"""

import json as _json

import _sizerec

__version__ = _sizerec.__version__

SizerecError = _sizerec.SizerecError


def generate_dataset(config=None, out_path="dataset.jsonl"):
    """Generate a synthetic dataset; returns an info dict."""
    cfg = _json.dumps(config or {})
    return _json.loads(_sizerec.generate_dataset(cfg, out_path))


def dataset_info(path):
    return _json.loads(_sizerec.dataset_info(path))


def train(data_path, config=None, bundle_out="model.srb"):
    """Train on the dataset's back-testing split; returns the train report."""
    cfg = _json.dumps(config or {})
    return _json.loads(_sizerec.train(data_path, cfg, bundle_out))


def evaluate_scenarios(bundle_paths, data_path):
    """Scenario accuracy table (TSV string) for the given bundles."""
    return _sizerec.evaluate_scenarios(list(bundle_paths), data_path)


def run_ablation(axis, data_path, config=None):
    return _sizerec.run_ablation(axis, data_path, _json.dumps(config or {}))


def bench(bundle_paths, batch_sizes=(), history_lengths=(), warmup=5, iterations=30):
    return _sizerec.bench(list(bundle_paths), list(batch_sizes), list(history_lengths),
                          warmup, iterations)


class Bundle:
    """A trained model bundle ready for predictions."""

    def __init__(self, path):
        self._bundle = _sizerec.Bundle(path)

    @property
    def type(self):
        return self._bundle.type

    @property
    def version(self):
        return self._bundle.version

    def predict(self, request, use_cache=True):
        """request: dict with events, product, k (see docs/formats.md)."""
        out = self._bundle.predict(_json.dumps(request), use_cache)
        return _json.loads(out)
