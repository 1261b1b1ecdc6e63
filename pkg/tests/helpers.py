"""Test-only scorers and finite-difference oracles."""

import numpy as np

from masklab.models import Scorer, _softmax
from masklab.perturbation import PatchGrid, pool_mean


class LinearSoftmaxScorer(Scorer):
    """softmax(W @ flatten(x) + b): the Jacobian is computable by hand."""

    def __init__(self, weights, bias, input_shape):
        self.weights = np.asarray(weights, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        self.input_shape = tuple(input_shape)
        self.class_count = self.weights.shape[0]

    @property
    def gradient_capable(self):
        return True

    def score_vector(self, image):
        flat = np.asarray(image, dtype=float).ravel()
        return _softmax(self.weights @ flat + self.bias)

    def input_gradient(self, image, class_index):
        probs = self.score_vector(image)
        coeff = -probs * probs[class_index]
        coeff[class_index] += probs[class_index]
        grad = coeff @ self.weights
        return grad.reshape(self.input_shape)


class RawLinearScorer(Scorer):
    """f(x) = w . x with no softmax; used for closed-form direction checks."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)
        self.input_shape = self.weights.shape
        self.class_count = 1

    @property
    def gradient_capable(self):
        return True

    def score_vector(self, image):
        return np.array([float(np.sum(self.weights * np.asarray(image, dtype=float)))])

    def input_gradient(self, image, class_index):
        return self.weights.copy()


class ForwardOnlyScorer(Scorer):
    def __init__(self, input_shape=(8, 8, 1), class_count=2):
        self.input_shape = tuple(input_shape)
        self.class_count = class_count

    def score_vector(self, image):
        return np.full(self.class_count, 1.0 / self.class_count)


class ConstantScorer(Scorer):
    """Always the same probabilities, regardless of input."""

    def __init__(self, probs, input_shape=(8, 8, 1)):
        self.probs = np.asarray(probs, dtype=float)
        self.class_count = self.probs.size
        self.input_shape = tuple(input_shape)

    def score_vector(self, image):
        return self.probs.copy()


class PlantedScorer(Scorer):
    """Class-1 confidence is a pure function of which grid patches are kept.

    A patch counts as kept when its mean intensity exceeds 0.5 (use an
    all-ones image against an all-zeros baseline).  Confidence is high iff
    the kept set contains any of the planted required sets, so qualification
    is monotone and the minimal sufficient family equals the planted family.
    """

    def __init__(self, grid_rows, grid_cols, image_size, required_sets,
                 high=0.95, low_base=0.1, low_span=0.4):
        self.grid = PatchGrid(grid_rows, grid_cols, image_size, image_size)
        self.required = [frozenset(s) for s in required_sets]
        self.high = high
        self.low_base = low_base
        self.low_span = low_span
        self.input_shape = (image_size, image_size, 1)
        self.class_count = 2

    def kept_patches(self, image):
        means = pool_mean(np.asarray(image, dtype=float)[:, :, 0], self.grid)
        return frozenset(int(i) for i in np.flatnonzero(means.ravel() > 0.5))

    def confidence_for(self, kept):
        if any(req <= kept for req in self.required):
            p = self.high
        else:
            p = self.low_base + self.low_span * len(kept) / self.grid.patch_count
        return p

    def score_vector(self, image):
        p = self.confidence_for(self.kept_patches(image))
        return np.array([1.0 - p, p])

    def score_batch(self, images):
        x = np.asarray(images, dtype=float)[..., 0]
        sums = np.add.reduceat(x, self.grid.row_edges()[:-1], axis=1)
        sums = np.add.reduceat(sums, self.grid.col_edges()[:-1], axis=2)
        means = sums / self.grid.pixel_counts()[None]
        kept = means.reshape(x.shape[0], -1) > 0.5
        bits = kept @ (1 << np.arange(self.grid.patch_count, dtype=object))
        p = self.low_base + self.low_span * kept.sum(axis=1) / self.grid.patch_count
        for req in self.required:
            req_bits = sum(1 << i for i in req)
            p = np.where((bits & req_bits) == req_bits, self.high, p)
        p = p.astype(float)
        return np.stack([1.0 - p, p], axis=1)


def finite_difference(f, x, index, step=1e-5):
    """Central finite difference of a scalar function at one coordinate."""
    up = x.copy()
    dn = x.copy()
    up.ravel()[index] += step
    dn.ravel()[index] -= step
    return (f(up) - f(dn)) / (2.0 * step)


def relative_error(approx, exact, floor=1e-8):
    return abs(approx - exact) / max(abs(exact), floor)
