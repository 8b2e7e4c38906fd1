"""Covariate-adjusted linear model and ANOVA for emphysema scores.

Model: score ~ b0 + b1*age + b2*sex + b3*smoking + b4*vendor + error, with
sex, smoking and vendor coded 0/1 and age in (uncentered) years. Each
covariate is tested with a Type II F-test, i.e. against the model that
drops only that covariate.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .errors import CollinearityError, ConfigurationError

COVARIATES = ("age", "sex", "smoking", "vendor")
LABELS = {"vendor": "Vendor", "age": "Age", "sex": "Sex", "smoking": "Smoking status"}
TABLE_ORDER = ("vendor", "age", "sex", "smoking")
ALPHA = 0.05
ENCODINGS = {"age": "years, uncentered", "sex": "0/1", "smoking": "0 former / 1 current",
             "vendor": "0 Siemens / 1 GE"}


@dataclass
class AnovaRow:
    covariate: str
    df: int
    sum_sq: float
    f_stat: float
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < ALPHA

    def to_dict(self):
        return {"covariate": self.covariate, "df": self.df, "sum_sq": self.sum_sq, "F": self.f_stat,
                "p": self.p_value, "significant": self.significant}


@dataclass
class RegressionResult:
    names: tuple            # ("intercept", *covariates)
    beta: np.ndarray
    residuals: np.ndarray
    n: int
    rss: float
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    anova: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def df_resid(self) -> int:
        return self.n - self.p

    @property
    def coefficients(self) -> dict:
        return dict(zip(self.names, map(float, self.beta)))

    def to_dict(self):
        return {"n": self.n, "rss": self.rss, "coefficients": self.coefficients,
                "anova": [r.to_dict() for r in self.anova.values()], "anova_type": "II",
                "encodings": {k: ENCODINGS.get(k, "") for k in self.names[1:]}}


def design_matrix(records, covariates: Sequence[str] = COVARIATES):
    """(X with a leading intercept column, y) from emphysema records."""
    X = np.array([[1.0, *(float(getattr(r, c)) for c in covariates)] for r in records]).reshape(-1, 1 + len(covariates))
    y = np.array([float(r.score) for r in records])
    return X, y


def ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients; columns are scaled to unit norm first for conditioning."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    beta, *_ = np.linalg.lstsq(X / scale, y, rcond=None)
    return beta / scale


def _check_rank(X, names):
    for j, name in enumerate(names[1:], start=1):
        if np.ptp(X[:, j]) == 0:
            raise CollinearityError(f"covariate {name!r} has zero variance (constant column)", covariate=name)
    for j in range(1, X.shape[1]):
        if np.linalg.matrix_rank(X[:, : j + 1]) <= j:
            raise CollinearityError(f"covariate {names[j]!r} is collinear with the preceding design columns",
                                    covariate=names[j])


def fit_arrays(X: np.ndarray, y: np.ndarray, names: Sequence[str]) -> RegressionResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if n < 6 or n <= p:
        raise ConfigurationError(f"need n >= 6 and n > {p} observations, got {n}", key="records")
    _check_rank(X, tuple(names))
    beta = ols(X, y)
    resid = y - X @ beta
    return RegressionResult(tuple(names), beta, resid, n, float(resid @ resid), X, y)


def fit_linear_model(records, covariates: Sequence[str] = COVARIATES) -> RegressionResult:
    X, y = design_matrix(records, covariates)
    return fit_arrays(X, y, ("intercept", *covariates))


def f_test(rss_reduced: float, rss_full: float, q: int, df_resid: int):
    """Nested-model F statistic and its upper-tail p-value."""
    if df_resid <= 0 or q <= 0:
        raise ConfigurationError(f"degenerate degrees of freedom (q={q}, df_resid={df_resid})", key="df")
    num = max(rss_reduced - rss_full, 0.0) / q
    if rss_full == 0.0:
        return (np.inf, 0.0) if num > 0 else (np.nan, 1.0)
    f = num / (rss_full / df_resid)
    return float(f), float(sps.f.sf(f, q, df_resid))


def anova(result: RegressionResult, records=None) -> dict:
    """Type II F-test of every covariate; fills and returns ``result.anova``.

    ``records`` is accepted for symmetry with :func:`fit_linear_model`; the
    design matrix stored on ``result`` is what gets refit.
    """
    # sums of squares at round-off level are exact zeros (noiseless or constant data)
    floor = 1e-20 * max(float(result.y @ result.y), 1.0)
    clean = lambda v: 0.0 if v <= floor else v
    rss_full = clean(result.rss)
    rows = {}
    for j, name in enumerate(result.names[1:], start=1):
        X_r = np.delete(result.X, j, axis=1)
        r = result.y - X_r @ ols(X_r, result.y)
        rss_r = float(r @ r)
        f, p = f_test(clean(rss_r), rss_full, 1, result.df_resid)
        rows[name] = AnovaRow(name, 1, rss_r - result.rss, f, p)
    result.anova = rows
    return rows


def analyze(records, covariates: Sequence[str] = COVARIATES) -> RegressionResult:
    res = fit_linear_model(records, covariates)
    anova(res)
    return res


def format_p(p: float) -> str:
    if p < 0.001:
        s = "p < 0.001"
    else:
        s = f"p = {p:.3f}"
    return s + (" *" if p < ALPHA else "")


def format_table(before: RegressionResult, after: RegressionResult) -> str:
    """Plain-text table: covariate, p before, p after (``*`` marks p < 0.05)."""
    head = ("Parameters", "Before harmonization", "After harmonization")
    rows = [(LABELS.get(c, c), format_p(before.anova[c].p_value), format_p(after.anova[c].p_value))
            for c in TABLE_ORDER if c in before.anova and c in after.anova]
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(3)]
    line = lambda r: "  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip()
    out = [line(head), line(tuple("-" * w for w in widths)), *map(line, rows)]
    out.append(f"* p < {ALPHA} (Type II ANOVA; n before = {before.n}, n after = {after.n})")
    return "\n".join(out)


def write_report(before: RegressionResult, after: RegressionResult, out_dir, before_records=None,
                 after_records=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "anova.json", "table": out / "anova_table.txt"}
    paths["json"].write_text(json.dumps({"before": before.to_dict(), "after": after.to_dict(),
                                         "alpha": ALPHA}, indent=2))
    paths["table"].write_text(format_table(before, after) + "\n")
    if before_records is not None and after_records is not None:
        paths["distributions"] = out / "score_distributions.csv"
        with open(paths["distributions"], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["condition", "kernel", "subject_id", "score"])
            for cond, recs in (("before", before_records), ("after", after_records)):
                for r in recs:
                    w.writerow([cond, r.kernel, r.subject_id, f"{r.score:.6f}"])
    return paths
