"""Independent reference computations used by the tests.

Everything here deliberately avoids the package's inference code paths:
the GP oracle builds dense kernel matrices, the Kronecker oracle expands
the element-by-element definition, and batch regression solves the normal
equations directly.
"""

import numpy as np

from funtensor.kernels import MaternHyper, kernel_eval


def dense_gp_posterior(hyper: MaternHyper, x_obs, y_obs, noise_var, x_query):
    """Exact GP regression with a dense kernel matrix.

    Returns posterior means and variances of the latent function at
    ``x_query`` given observations y = f(x) + N(0, noise_var).
    """
    x_obs = np.asarray(x_obs, dtype=float)
    x_query = np.asarray(x_query, dtype=float)
    k_oo = np.array([[kernel_eval(hyper, a, b) for b in x_obs] for a in x_obs])
    k_qo = np.array([[kernel_eval(hyper, a, b) for b in x_obs] for a in x_query])
    k_qq = np.array([kernel_eval(hyper, a, a) for a in x_query])
    gram = k_oo + noise_var * np.eye(len(x_obs))
    alpha = np.linalg.solve(gram, np.asarray(y_obs, dtype=float))
    means = k_qo @ alpha
    variances = k_qq - np.einsum("qi,iq->q", k_qo, np.linalg.solve(gram, k_qo.T))
    return means, variances


def kron_by_definition(a, b):
    """Element-by-element Kronecker product expansion."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = np.zeros((a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i * b.shape[0]:(i + 1) * b.shape[0],
                j * b.shape[1]:(j + 1) * b.shape[1]] = a[i, j] * b
    return out


def tucker_value_by_sum(core_values, factors):
    """Multilinear Tucker value as an explicit sum over all rank indexes."""
    total = 0.0
    it = np.nditer(core_values, flags=["multi_index"])
    for w in it:
        term = float(w)
        for k, j in enumerate(it.multi_index):
            term *= factors[k][j]
        total += term
    return total


def ridge_regression_posterior(design, y, noise_prec):
    """Bayesian linear regression with a standard-normal prior on weights."""
    design = np.atleast_2d(design)
    lam = np.eye(design.shape[1]) + noise_prec * design.T @ design
    cov = np.linalg.inv(lam)
    mean = cov @ (noise_prec * design.T @ y)
    return mean, 0.5 * (cov + cov.T)
