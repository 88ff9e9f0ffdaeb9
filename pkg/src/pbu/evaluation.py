"""Forget/retain accuracy, loss-threshold membership inference and reports."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .classifier import accuracy, forward
from .errors import ContractError
from .rng import Rng

CSV_HEADER = [
    "variant", "A_Df_mean", "A_Df_std", "A_Dr_mean", "A_Dr_std",
    "mia", "steps", "epochs", "wall_time_s",
]
WALL_TIME_KEYS = ("wall_time_seconds", "wall_time_s")


@dataclass
class MetricsReport:
    variant: str
    a_df: float
    a_dr: float
    mia_accuracy: float
    unlearn_steps: int = 0
    unlearn_epochs: float = 0.0
    wall_time_seconds: float = 0.0
    seed: int = 0
    dataset: str = ""

    def __post_init__(self):
        for name in ("a_df", "a_dr", "mia_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown report keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MiaConfig:
    attacker_split_fraction: float = 0.7
    seed: int = 0
    balance: bool = True

    def __post_init__(self):
        if not 0.0 < self.attacker_split_fraction < 1.0:
            raise ContractError("attacker_split_fraction must lie in (0, 1)")


def class_split_accuracy(spec, theta, test, forget_class):
    """``(A_Df, A_Dr)``: accuracy on the forget class and on everything else."""
    forget_mask = test.y == forget_class
    if not forget_mask.any() or forget_mask.all():
        raise ContractError(
            f"test set needs examples of class {forget_class} and of some other class"
        )
    return (
        accuracy(spec, theta, test.subset(np.flatnonzero(forget_mask))),
        accuracy(spec, theta, test.subset(np.flatnonzero(~forget_mask))),
    )


def example_losses(spec, theta, data):
    """Per-example cross-entropy ``-log P(y_i | x_i, theta)``."""
    logp = forward(spec, theta, data.X)
    return -logp[np.arange(len(data)), data.y]


def _best_threshold(feats, labels):
    """Exhaustive threshold/direction search maximising accuracy.

    ``labels`` are 1 for members. Every cut between consecutive distinct
    feature values (plus both ends) is tried. A cut is stored as the largest
    value on its low side (``-inf`` below the minimum), so applying it only
    compares order and is invariant under monotone feature transforms.
    Direction ``+1`` predicts member at or below the cut (members have lower
    loss).
    """
    values = np.unique(feats)
    cuts = np.concatenate(([-np.inf], values))
    best = (-1.0, -np.inf, 1)
    for direction in (1, -1):
        for t in cuts:
            acc = np.mean(_apply(feats, t, direction) == labels)
            if acc > best[0]:
                best = (acc, t, direction)
    return best[1], best[2]


def _apply(feats, t, direction):
    return feats <= t if direction == 1 else feats > t


def threshold_attack_accuracy(member_feats, nonmember_feats, cfg):
    """Attacker-test accuracy of a 1-D threshold attack.

    Each side is sorted; its minimum and maximum always go to the attacker
    training split and the interior is divided by a seeded permutation
    (shared by both sides when they have equal size). Identical feature
    multisets therefore yield identical splits, and a perfectly separable
    pair of sides is never split inside its gap.
    """
    m = np.asarray(member_feats, dtype=np.float64)
    n = np.asarray(nonmember_feats, dtype=np.float64)
    if m.size < 4 or n.size < 4:
        raise ContractError("membership inference needs at least 4 examples per side")
    rng = Rng(cfg.seed)
    if cfg.balance and m.size != n.size:
        k = min(m.size, n.size)
        if m.size > k:
            m = m[np.sort(rng.permutation(m.size)[:k])]
        else:
            n = n[np.sort(rng.permutation(n.size)[:k])]
    m = np.sort(m, kind="stable")
    n = np.sort(n, kind="stable")
    perm_m = rng.permutation(m.size - 2)
    perm_n = perm_m if n.size == m.size else rng.permutation(n.size - 2)

    def split(side, perm):
        cut = int(round(cfg.attacker_split_fraction * side.size))
        cut = min(max(cut, 2), side.size - 1)
        interior = side[1:-1][perm]
        return np.concatenate(([side[0], side[-1]], interior[:cut - 2])), interior[cut - 2:]

    m_tr, m_te = split(m, perm_m)
    n_tr, n_te = split(n, perm_n)
    feats = np.concatenate([m_tr, n_tr])
    labels = np.concatenate([np.ones(m_tr.size, bool), np.zeros(n_tr.size, bool)])
    t, direction = _best_threshold(feats, labels)
    test_feats = np.concatenate([m_te, n_te])
    test_labels = np.concatenate([np.ones(m_te.size, bool), np.zeros(n_te.size, bool)])
    return float(np.mean(_apply(test_feats, t, direction) == test_labels))


def mia_accuracy(spec, theta, members, nonmembers, cfg=None):
    """Loss-threshold membership inference accuracy (0.5 means no leakage)."""
    cfg = cfg or MiaConfig()
    if len(members) == 0 or len(nonmembers) == 0:
        raise ContractError("members and nonmembers must both be nonempty")
    return threshold_attack_accuracy(
        example_losses(spec, theta, members), example_losses(spec, theta, nonmembers), cfg
    )


# --------------------------------------------------------------------------
# comparison tables
# --------------------------------------------------------------------------

def _mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


@dataclass
class ComparisonTable:
    dataset: str
    rows: list = field(default_factory=list)

    def row(self, variant):
        for r in self.rows:
            if r["variant"] == variant:
                return r
        raise KeyError(variant)

    def to_csv(self, include_wall_time=True):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([
                r["variant"],
                repr(r["A_Df_mean"]), repr(r["A_Df_std"]),
                repr(r["A_Dr_mean"]), repr(r["A_Dr_std"]),
                repr(r["mia"]), repr(r["steps"]), repr(r["epochs"]),
                repr(r["wall_time_s"]) if include_wall_time else "",
            ])
        return buf.getvalue()

    def render(self):
        lines = [f"{'variant':<14} {'A_Df':>16} {'A_Dr':>16} {'MIA':>7} {'steps':>7}"]
        for r in self.rows:
            lines.append(
                f"{r['variant']:<14} {r['A_Df_mean']:7.4f}+-{r['A_Df_std']:<7.4f}"
                f" {r['A_Dr_mean']:7.4f}+-{r['A_Dr_std']:<7.4f} {r['mia']:7.4f} {r['steps']:7.1f}"
            )
        return "\n".join(lines)


def compare_report(reports):
    """Aggregate reports per variant (mean and n-1 std across seeds).

    Variants appear in order of first occurrence.
    """
    if not reports:
        raise ContractError("no reports to compare")
    datasets = {r.dataset for r in reports}
    if len(datasets) != 1:
        raise ContractError(f"reports mix datasets: {sorted(datasets)}")
    order, groups = [], {}
    for r in reports:
        if r.variant not in groups:
            order.append(r.variant)
            groups[r.variant] = []
        groups[r.variant].append(r)
    table = ComparisonTable(datasets.pop())
    for v in order:
        g = groups[v]
        df_m, df_s = _mean_std([r.a_df for r in g])
        dr_m, dr_s = _mean_std([r.a_dr for r in g])
        table.rows.append({
            "variant": v,
            "A_Df_mean": df_m, "A_Df_std": df_s,
            "A_Dr_mean": dr_m, "A_Dr_std": dr_s,
            "mia": float(np.mean([r.mia_accuracy for r in g])),
            "steps": float(np.mean([r.unlearn_steps for r in g])),
            "epochs": float(np.mean([r.unlearn_epochs for r in g])),
            "wall_time_s": float(np.mean([r.wall_time_seconds for r in g])),
            "n": len(g),
        })
    return table
