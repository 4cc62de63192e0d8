"""Polynomial dictionaries over covariates and their panel averages.

The treatment and covariates are averaged within unit and within period;
those averages, appended to the period covariates, form the inputs of a
low-order polynomial expansion. Projecting on the expanded dictionary
absorbs unit and time heterogeneity that is a smooth function of the
averages.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .data import FeatureMatrix, PanelDataset

__all__ = [
    "Dictionary",
    "mundlak_averages",
    "monomial_terms",
    "term_count",
    "build_dictionary",
]


def mundlak_averages(data):
    """Within-unit and within-period means of (treatment, covariates).

    Parameters
    ----------
    data : PanelDataset

    Returns
    -------
    (ndarray, ndarray)
        unit_means of shape (N, 1+p) and time_means of shape (T, 1+p);
        column 0 averages the treatment, columns 1..p the covariates.
    """
    if not isinstance(data, PanelDataset):
        raise TypeError(f"expected PanelDataset, got {type(data).__name__}")
    stacked = np.concatenate([data.treatment[:, :, None], data.covariates], axis=2)
    return stacked.mean(axis=1), stacked.mean(axis=0)


def monomial_terms(n_inputs, order):
    """Exponent vectors of all monomials with degree between 1 and order.

    Terms are ordered by total degree, then lexicographically by input
    index within each degree, so column positions never depend on data.

    Parameters
    ----------
    n_inputs : int
    order : int
        Maximum total degree, 1 to 3.

    Returns
    -------
    tuple of tuples
        Each entry has length n_inputs and sums to the term's degree.
        For order 2 there are k + k(k+1)/2 terms over k inputs; order 3
        adds C(k+2, 3) more, for k^3/6 + k^2 + 11k/6 in total.
    """
    k = int(n_inputs)
    if k < 1:
        raise ValueError(f"need at least one input, got {k}")
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    terms = []
    for degree in range(1, order + 1):
        for combo in combinations_with_replacement(range(k), degree):
            exponents = [0] * k
            for idx in combo:
                exponents[idx] += 1
            terms.append(tuple(exponents))
    return tuple(terms)


def term_count(n_inputs, order):
    """Closed-form number of monomials with degree between 1 and order."""
    k = int(n_inputs)
    if k < 1:
        raise ValueError(f"need at least one input, got {k}")
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    return sum(comb(k + d - 1, d) for d in range(1, order + 1))


def _term_name(exponents, input_names):
    pieces = []
    for name, e in zip(input_names, exponents):
        if e == 1:
            pieces.append(name)
        elif e > 1:
            pieces.append(f"{name}^{e}")
    return "*".join(pieces)


@dataclass(frozen=True)
class Dictionary(FeatureMatrix):
    """Expanded polynomial feature matrix with its construction record.

    Subclasses FeatureMatrix, so it can be passed anywhere a plain
    feature matrix is accepted. ``base`` holds the standardized inputs,
    ``term_index`` maps each output column to its exponent vector over
    the inputs (the intercept column maps to all zeros).
    """

    base: FeatureMatrix = None
    order: int = 1
    term_index: tuple = ()

    def __post_init__(self):
        super().__post_init__()
        if self.base is None:
            raise ValueError("Dictionary requires the base input matrix")
        if len(self.term_index) != self.n_columns:
            raise ValueError(
                f"{len(self.term_index)} term entries for {self.n_columns} columns"
            )


def build_dictionary(data, order, max_columns=10000):
    """Expand a panel into polynomial dictionary features.

    Inputs are the period covariates followed by the within-unit and
    within-period averages of (treatment, covariates), giving 3p + 2
    columns for p covariates. Each input is centered and scaled to unit
    standard deviation before expansion; the dictionary columns are all
    monomials of the scaled inputs with degree up to ``order``, plus a
    trailing intercept.

    Parameters
    ----------
    data : PanelDataset
    order : int
        Maximum monomial degree, 1 to 3.
    max_columns : int
        Size guard on the output column count, intercept included.

    Returns
    -------
    Dictionary
        Rows in panel order (row i*T + t is unit i, period t). Column
        names follow the inputs: covariates keep ``x1..xp``, averages are
        ``fbar_i0..fbar_ip`` and ``fbar_t0..fbar_tp`` (0 is the treatment
        slot), and products join with ``*``, e.g. ``x3*fbar_i1^2``.
    """
    if not isinstance(data, PanelDataset):
        raise TypeError(f"expected PanelDataset, got {type(data).__name__}")
    n, t_len, p = data.covariates.shape
    unit_means, time_means = mundlak_averages(data)
    inputs = np.column_stack(
        [
            data.covariates.reshape(n * t_len, p),
            np.repeat(unit_means, t_len, axis=0),
            np.tile(time_means, (n, 1)),
        ]
    )
    input_names = (
        [f"x{j + 1}" for j in range(p)]
        + [f"fbar_i{j}" for j in range(p + 1)]
        + [f"fbar_t{j}" for j in range(p + 1)]
    )
    k = inputs.shape[1]
    n_terms = term_count(k, order)
    if n_terms + 1 > max_columns:
        raise ValueError(
            f"dictionary would have {n_terms + 1} columns for {k} inputs at "
            f"order {order}, above the limit of {max_columns}"
        )

    means = inputs.mean(axis=0)
    sds = inputs.std(axis=0)
    dead = np.flatnonzero(sds == 0.0)
    if dead.size:
        raise ValueError(
            f"input column '{input_names[dead[0]]}' is constant and cannot "
            "be scaled; remove constant covariates before expansion"
        )
    scaled = (inputs - means) / sds

    terms = monomial_terms(k, order)
    values = np.empty((n * t_len, len(terms) + 1))
    names = []
    for col, exponents in enumerate(terms):
        active = [j for j, e in enumerate(exponents) if e > 0]
        product = scaled[:, active[0]] ** exponents[active[0]]
        for j in active[1:]:
            product = product * scaled[:, j] ** exponents[j]
        values[:, col] = product
        names.append(_term_name(exponents, input_names))
    values[:, -1] = 1.0
    names.append("const")
    zero = tuple([0] * k)
    return Dictionary(
        values=values,
        column_names=tuple(names),
        has_intercept=True,
        base=FeatureMatrix(values=scaled, column_names=tuple(input_names)),
        order=int(order),
        term_index=terms + (zero,),
    )
