"""Fisher information estimates, Mahalanobis penalties and Laplace checks.

All estimators use the SUM convention: the Fisher of a dataset is the sum of
per-example contributions, so estimates over disjoint datasets add exactly.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import autodiff as ad
from .classifier import (
    _check_labels,
    format_float,
    forward_tensor,
    log_likelihood_tensor,
    parse_floats,
    read_header,
)
from .errors import CapacityError, ContractError, IntegrityError, ParseError, ShapeError

FULL_FORM_MAX_PARAMS = 2000
FISH_MAGIC = "PBUFISH"
MODES = ("empirical", "model")
FORMS = ("diagonal", "full")


@dataclass(frozen=True)
class PriorSpec:
    """Isotropic Gaussian prior with log-density ``-(lam/2)||theta||^2 + const``."""

    lam: float = 0.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ContractError(f"prior lambda must be >= 0, got {self.lam}")


@dataclass
class FisherEstimate:
    values: np.ndarray
    form: str
    mode: str
    source: str = ""
    n_src: int = 0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ContractError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def size(self):
        return self.values.shape[0]

    def diagonal(self):
        return self.values if self.form == "diagonal" else np.diag(self.values).copy()

    def __add__(self, other):
        if (self.form, self.mode) != (other.form, other.mode):
            raise ContractError("cannot add Fisher estimates of different form or mode")
        return FisherEstimate(
            self.values + other.values,
            self.form,
            self.mode,
            f"{self.source}+{other.source}",
            self.n_src + other.n_src,
        )


def _check_mode(mode):
    if mode not in MODES:
        raise ContractError(f"Fisher mode must be one of {MODES}, got {mode!r}")


def example_scores(spec, theta, x, classes=None):
    """Log-probabilities and score vectors of one example.

    Runs a single forward pass and one backward pass per requested class.
    Returns ``(logp, scores)`` with ``scores[k]`` the gradient of
    ``log P(classes[k] | x, theta)``.
    """
    classes = range(spec.num_classes) if classes is None else classes
    tape = ad.GradTape()
    t = tape.leaf(np.asarray(theta, dtype=np.float64))
    logp = forward_tensor(spec, t, np.asarray(x, dtype=np.float64)[None, :])
    scores = []
    for c in classes:
        if not 0 <= c < spec.num_classes:
            raise ShapeError(f"class {c} out of range for {spec.num_classes} classes")
        pick = np.zeros((1, spec.num_classes))
        pick[0, c] = 1.0
        root = ad.reduce_sum(ad.mul(logp, pick))
        scores.append(ad.backward(root, tape)[0])
    return logp.data[0], np.array(scores)


def score(spec, theta, x, c):
    """Gradient of ``log P(y=c | x, theta)`` w.r.t. ``theta``."""
    return example_scores(spec, theta, x, [c])[1][0]


def _weighted_scores(spec, theta, data, mode):
    """Yield ``(weights, scores)`` per example, in dataset order."""
    for x, y in zip(data.X, data.y):
        if mode == "empirical":
            _, s = example_scores(spec, theta, x, [int(y)])
            yield np.ones(1), s
        else:
            logp, s = example_scores(spec, theta, x)
            yield np.exp(logp), s


def _prepare(spec, theta, data, mode):
    _check_mode(mode)
    if len(data) == 0:
        raise ContractError("Fisher information of an empty dataset is undefined")
    _check_labels(spec, data)
    if np.asarray(theta).shape != (spec.num_params,):
        raise ShapeError(f"theta length {np.asarray(theta).size} != m={spec.num_params}")


def fisher_diagonal(spec, theta, data, mode="empirical"):
    _prepare(spec, theta, data, mode)
    total = np.zeros(spec.num_params)
    for w, s in _weighted_scores(spec, theta, data, mode):
        total += w @ (s * s)
    return FisherEstimate(total, "diagonal", mode, data.name, len(data))


def fisher_full(spec, theta, data, mode="empirical"):
    m = spec.num_params
    if m > FULL_FORM_MAX_PARAMS:
        raise CapacityError(
            f"full Fisher needs an {m}x{m} matrix (m > {FULL_FORM_MAX_PARAMS}); "
            "use fisher_diagonal instead"
        )
    _prepare(spec, theta, data, mode)
    total = np.zeros((m, m))
    for w, s in _weighted_scores(spec, theta, data, mode):
        total += (s * w[:, None]).T @ s
    return FisherEstimate(total, "full", mode, data.name, len(data))


def fisher(spec, theta, data, mode="empirical", form="diagonal"):
    if form == "diagonal":
        return fisher_diagonal(spec, theta, data, mode)
    if form == "full":
        return fisher_full(spec, theta, data, mode)
    raise ContractError(f"form must be one of {FORMS}, got {form!r}")


def mahalanobis_tensor(theta, theta_star, F):
    """``(theta - theta*)^T F (theta - theta*)`` as a scalar Tensor."""
    theta = ad._as_tensor(theta)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if theta.data.shape != theta_star.shape or theta_star.shape[0] != F.size:
        raise ShapeError(
            f"mahalanobis: theta {theta.shape}, theta* {list(theta_star.shape)}, "
            f"Fisher of size {F.size}"
        )
    delta = ad.sub(theta, theta_star)
    if F.form == "diagonal":
        return ad.reduce_sum(ad.mul(F.values, ad.square(delta)))
    col = ad.matmul(F.values, ad.take_block(delta, 0, (F.size, 1)))
    return ad.reduce_sum(ad.mul(ad.take_block(delta, 0, (F.size, 1)), col))


def mahalanobis_sq(theta, theta_star, F):
    return mahalanobis_tensor(theta, theta_star, F).item()


def mahalanobis_grad(theta, theta_star, F):
    """Closed form ``2 F (theta - theta*)`` for symmetric ``F``."""
    delta = np.asarray(theta, dtype=np.float64) - np.asarray(theta_star, dtype=np.float64)
    if F.form == "diagonal":
        return 2.0 * F.values * delta
    return 2.0 * F.values @ delta


# --------------------------------------------------------------------------
# posterior and Laplace checks
# --------------------------------------------------------------------------

def log_posterior_tensor(spec, theta, data, prior):
    ll = log_likelihood_tensor(spec, theta, data)
    if prior.lam == 0:
        return ll
    return ad.sub(ll, ad.scale(ad.reduce_sum(ad.square(theta)), 0.5 * prior.lam))


def log_posterior_unnorm(spec, theta, data, prior):
    """Log-likelihood minus ``(lam/2)||theta||^2``; normalising constants dropped."""
    return log_posterior_tensor(spec, theta, data, prior).item()


def log_posterior_grad(spec, theta, data, prior):
    return ad.value_and_grad(lambda t: log_posterior_tensor(spec, t, data, prior), theta)[1]


def fd_hessian(grad_fn, x0, h=1e-4):
    """Central differences of ``grad_fn``, symmetrised."""
    x0 = np.asarray(x0, dtype=np.float64)
    m = x0.size
    H = np.empty((m, m))
    for j in range(m):
        xp, xm = x0.copy(), x0.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (grad_fn(xp) - grad_fn(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def taylor_residual(fn, x0, delta, hessian):
    """``|fn(x0+delta) - fn(x0) - 0.5 delta^T H delta|`` (gradient term assumed zero)."""
    delta = np.asarray(delta, dtype=np.float64)
    if not np.any(delta):
        return 0.0
    return abs(fn(x0 + delta) - fn(x0) - 0.5 * delta @ hessian @ delta)


def posterior_hessian(spec, theta_star, data, prior, h=1e-4, max_params=200):
    if spec.num_params > max_params:
        raise CapacityError(
            f"finite-difference Hessian limited to m <= {max_params}, got {spec.num_params}"
        )
    return fd_hessian(lambda th: log_posterior_grad(spec, th, data, prior), theta_star, h)


def quadratic_residual(spec, theta_star, data, prior, delta, hessian=None, tol=1e-4):
    """Error of the second-order expansion of the log posterior around a MAP.

    Raises :class:`ContractError` unless ``theta_star`` is stationary to
    ``tol`` in the sup norm. Pass a precomputed ``hessian`` to reuse it across
    several ``delta``.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    gnorm = np.max(np.abs(log_posterior_grad(spec, theta_star, data, prior)))
    if gnorm > tol:
        raise ContractError(
            f"theta* is not stationary: |grad log posterior|_inf = {gnorm:.3e} > {tol:g}"
        )
    if hessian is None:
        hessian = posterior_hessian(spec, theta_star, data, prior)
    return taylor_residual(
        lambda th: log_posterior_unnorm(spec, th, data, prior), theta_star, delta, hessian
    )


def fit_map(spec, data, prior, theta0, gtol=1e-9, newton_steps=5):
    """Maximise the log posterior: L-BFGS, then Newton polishing on an FD Hessian."""

    def neg(th):
        v, g = ad.value_and_grad(lambda t: log_posterior_tensor(spec, t, data, prior), th)
        return -v, -g

    res = optimize.minimize(
        neg, np.asarray(theta0, dtype=np.float64), jac=True, method="L-BFGS-B",
        options={"gtol": gtol, "ftol": 1e-15, "maxiter": 20000, "maxcor": 30},
    )
    theta = res.x
    if spec.num_params <= 200:
        for _ in range(newton_steps):
            g = log_posterior_grad(spec, theta, data, prior)
            if np.max(np.abs(g)) < 1e-10:
                break
            H = posterior_hessian(spec, theta, data, prior)
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                break
            theta = theta - step
    return theta


def predictive_hessian_fisher(spec, theta, data, h=1e-4):
    """Negative FD Hessian of the predictive expected log-likelihood.

    The objective is ``sum_i sum_c p(c|x_i, theta0) log p(c|x_i, theta)`` with
    the weights frozen at ``theta0 = theta``; under the usual regularity
    conditions its negative Hessian equals the model-mode Fisher.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if spec.num_params > 200:
        raise CapacityError("predictive Hessian check limited to m <= 200")
    weights = np.exp(forward_tensor(spec, theta, data.X).data)

    def grad(th):
        return ad.value_and_grad(
            lambda t: ad.reduce_sum(ad.mul(forward_tensor(spec, t, data.X), weights)), th
        )[1]

    return -fd_hessian(grad, theta, h)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_fisher(F, path):
    if F.form != "diagonal":
        raise ContractError("only diagonal Fisher estimates are persisted")
    lines = [
        f"{FISH_MAGIC} v1",
        f"mode={F.mode}",
        f"form={F.form}",
        f"n_src={F.n_src}",
        f"m={F.size}",
    ]
    lines.extend(format_float(v) for v in F.values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_fisher(path, source=""):
    with open(path) as fh:
        lines = fh.read().splitlines()
    read_header(lines, FISH_MAGIC)
    fields = {}
    for i, key in enumerate(("mode", "form", "n_src", "m"), start=1):
        if i >= len(lines) or not lines[i].startswith(key + "="):
            raise ParseError(f"expected '{key}=...'", i + 1)
        fields[key] = lines[i].split("=", 1)[1]
    if fields["form"] != "diagonal":
        raise ParseError(f"unsupported form {fields['form']!r}; only diagonal is stored", 3)
    try:
        n_src, m = int(fields["n_src"]), int(fields["m"])
    except ValueError:
        raise ParseError("n_src and m must be integers", 4) from None
    values = parse_floats(lines, 5, m)
    if any(ln.strip() for ln in lines[5 + m:]):
        raise IntegrityError(f"more than m={m} values present")
    try:
        return FisherEstimate(values, fields["form"], fields["mode"], source, n_src)
    except ContractError as exc:
        raise ParseError(str(exc), 2) from None
