"""Panel data model: rectangular subject x period arrays with typed roles.

A panel holds, for every subject i and period m = 0..K, the triple observed in
temporal order (covariates Z_m, outcome Y_m, treatment A_m).  Y_m is measured
before A_m is given, so the history available when treatment m is decided is

    (Z_0..Z_m, Y_0..Y_{m-1}, A_0..A_{m-1})

and never includes Y_m or A_m itself.  All arrays are dense: a missing cell is
a data error, not a NaN.  The "never treated" convention is that a subject at
the baseline treatment value 0 in every period has no initiation time; such
subjects are marked with the module-level sentinel ``NEVER`` (its own type,
deliberately not a number and not None, so arithmetic on it fails loudly).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


class _NeverType:
    """Sentinel type for subjects that never leave the baseline treatment."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NEVER"

    def __reduce__(self):
        return (_NeverType, ())


NEVER = _NeverType()


@dataclass(frozen=True)
class InitiationTime:
    """First departure from baseline treatment: when and with what value.

    ``time`` is the calendar label of the first period with a nonzero
    treatment vector (or ``NEVER``); ``index`` is its 0-based position; and
    ``value`` is the treatment vector taken at that period (None if never).
    """

    time: object
    index: object
    value: object


@dataclass(frozen=True)
class PanelDataset:
    """Immutable rectangular panel.

    outcomes:   (n, P) float
    treatments: (n, P, q) float  -- q treatment components
    covariates: (n, P, p) float  -- p may be zero
    """

    outcomes: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray
    subject_ids: tuple
    time_labels: tuple
    treatment_names: tuple
    covariate_names: tuple

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        a = np.asarray(self.treatments, dtype=float)
        z = np.asarray(self.covariates, dtype=float)
        if y.ndim != 2:
            raise DataError(f"outcomes must be 2-d (n, periods); got shape {y.shape}")
        n, periods = y.shape
        if a.shape[:2] != (n, periods) or a.ndim != 3:
            raise DataError(
                f"treatments must have shape (n={n}, periods={periods}, q); got {a.shape}"
            )
        if z.ndim != 3 or z.shape[:2] != (n, periods):
            raise DataError(
                f"covariates must have shape (n={n}, periods={periods}, p); got {z.shape}"
            )
        if len(self.subject_ids) != n:
            raise DataError(f"{len(self.subject_ids)} subject ids for {n} subjects")
        if len(set(self.subject_ids)) != n:
            raise DataError("subject ids must be unique")
        if len(self.time_labels) != periods:
            raise DataError(f"{len(self.time_labels)} time labels for {periods} periods")
        labels = list(self.time_labels)
        if any(int(t) != t for t in labels):
            raise DataError("time labels must be integers")
        if any(b - a_ != 1 for a_, b in zip(labels, labels[1:])):
            raise DataError(f"time labels must be consecutive integers; got {labels}")
        if len(self.treatment_names) != a.shape[2]:
            raise DataError("treatment_names length must match treatment components")
        if len(self.covariate_names) != z.shape[2]:
            raise DataError("covariate_names length must match covariate columns")
        for name, arr in (("outcomes", y), ("treatments", a), ("covariates", z)):
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise DataError(
                    f"{name} contain a non-finite value at subject index {bad[0]}, "
                    f"period index {bad[1]} (missing cells are not allowed)"
                )
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatments", a)
        object.__setattr__(self, "covariates", z)
        object.__setattr__(self, "subject_ids", tuple(str(s) for s in self.subject_ids))
        object.__setattr__(self, "time_labels", tuple(int(t) for t in self.time_labels))
        object.__setattr__(self, "treatment_names", tuple(self.treatment_names))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    # -- basic geometry -----------------------------------------------------

    @property
    def n_subjects(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    @property
    def horizon(self) -> int:
        """Largest period index K (periods run 0..K)."""
        return self.n_periods - 1

    @property
    def n_treatment_components(self) -> int:
        return self.treatments.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[2]

    def time_index(self, label) -> int:
        try:
            return self.time_labels.index(int(label))
        except ValueError:
            raise DataError(f"time label {label!r} not in panel range {self.time_labels[0]}..{self.time_labels[-1]}") from None

    def take(self, indices, ids=None) -> "PanelDataset":
        """Row-subset / resample by subject index (bootstrap uses this).

        Duplicated indices are allowed; fresh unique ids are generated unless
        ``ids`` is given.
        """
        indices = np.asarray(indices, dtype=int)
        if ids is None:
            ids = tuple(f"r{j}_{self.subject_ids[i]}" for j, i in enumerate(indices))
        return PanelDataset(
            outcomes=self.outcomes[indices],
            treatments=self.treatments[indices],
            covariates=self.covariates[indices],
            subject_ids=ids,
            time_labels=self.time_labels,
            treatment_names=self.treatment_names,
            covariate_names=self.covariate_names,
        )

    def history(self, i, m) -> "HistoryView":
        return HistoryView(self, int(i), int(m))


@dataclass(frozen=True)
class HistoryView:
    """What is known about subject ``i`` just before treatment ``m`` is given.

    Covariates run through m (current included); outcomes and treatments stop
    at m-1.  At m = 0 the outcome/treatment histories are empty arrays — the
    "period -1" value is null by convention.
    """

    panel: PanelDataset
    i: int
    m: int

    def __post_init__(self):
        if not (0 <= self.m < self.panel.n_periods):
            raise DataError(f"period index {self.m} outside 0..{self.panel.horizon}")
        if not (0 <= self.i < self.panel.n_subjects):
            raise DataError(f"subject index {self.i} outside 0..{self.panel.n_subjects - 1}")

    @property
    def covariate_history(self) -> np.ndarray:
        """(m+1, p): Z_0 .. Z_m."""
        return self.panel.covariates[self.i, : self.m + 1]

    @property
    def outcome_history(self) -> np.ndarray:
        """(m,): Y_0 .. Y_{m-1}."""
        return self.panel.outcomes[self.i, : self.m]

    @property
    def treatment_history(self) -> np.ndarray:
        """(m, q): A_0 .. A_{m-1}."""
        return self.panel.treatments[self.i, : self.m]

    @property
    def current_treatment(self) -> np.ndarray:
        """A_m — not part of the history, exposed separately."""
        return self.panel.treatments[self.i, self.m]


# -- initiation of treatment ------------------------------------------------


def _initiation_index(panel: PanelDataset) -> np.ndarray:
    """(n,) int: first period with any nonzero treatment component;
    never-treated subjects get n_periods (one past the horizon).

    This integer encoding is private plumbing; the public API reports NEVER.
    """
    nonzero = np.any(panel.treatments != 0.0, axis=2)  # (n, P)
    any_at_all = nonzero.any(axis=1)
    first = np.argmax(nonzero, axis=1)
    first[~any_at_all] = panel.n_periods
    return first


def initiation_time(panel: PanelDataset, i) -> InitiationTime:
    """First departure from baseline treatment for subject ``i``."""
    idx = _initiation_index(panel)[int(i)]
    if idx == panel.n_periods:
        return InitiationTime(time=NEVER, index=NEVER, value=None)
    return InitiationTime(
        time=panel.time_labels[idx],
        index=int(idx),
        value=panel.treatments[int(i), idx].copy(),
    )


def initiation_times(panel: PanelDataset) -> list:
    """InitiationTime for every subject, in subject order."""
    idx = _initiation_index(panel)
    out = []
    for i, t in enumerate(idx):
        if t == panel.n_periods:
            out.append(InitiationTime(time=NEVER, index=NEVER, value=None))
        else:
            out.append(
                InitiationTime(
                    time=panel.time_labels[t],
                    index=int(t),
                    value=panel.treatments[i, t].copy(),
                )
            )
    return out


def is_staggered_adoption(panel: PanelDataset) -> bool:
    """True iff every treatment component is binary and absorbing.

    Absorbing means each component, once it turns 1, stays 1 through the
    horizon; all values must be exactly 0 or 1.
    """
    a = panel.treatments
    if not np.all((a == 0.0) | (a == 1.0)):
        return False
    # once on, never off: the running max equals the value itself
    running = np.maximum.accumulate(a, axis=1)
    return bool(np.all(a == running))


# -- CSV input/output ---------------------------------------------------------
#
# Long format, one row per (subject, period).  Default column roles:
#   subject_id, time, y           required names
#   a_<name>                      treatment components
#   z_<name>                      covariates
# A schema mapping {column_name: role} overrides the defaults, with roles
# "subject", "time", "outcome", "treatment:<name>", "covariate:<name>".
# Loading canonicalizes subject order (lexicographic by id) and period order,
# so load -> write -> load -> write is byte-stable.


def _infer_roles(header, schema):
    roles = {}
    if schema is not None:
        unknown = set(schema) - set(header)
        if unknown:
            raise DataError(f"schema refers to absent columns: {sorted(unknown)}")
        for col in header:
            roles[col] = schema.get(col, "ignore")
        return roles
    for col in header:
        if col in ("subject_id", "id", "subject", "unit"):
            roles[col] = "subject"
        elif col in ("time", "period", "year"):
            roles[col] = "time"
        elif col in ("y", "outcome"):
            roles[col] = "outcome"
        elif col.startswith("a_"):
            roles[col] = f"treatment:{col[2:]}"
        elif col.startswith("z_"):
            roles[col] = f"covariate:{col[2:]}"
        else:
            raise DataError(
                f"cannot infer a role for column {col!r}; "
                "use subject_id/time/y/a_*/z_* names or pass a schema"
            )
    return roles


def load_panel_csv(path_or_buffer, schema=None) -> PanelDataset:
    """Read a long-format CSV into a PanelDataset.

    Raises DataError naming the offending (subject, time) for duplicate rows,
    ragged subjects, gaps in the period grid, and non-numeric values.
    """
    if hasattr(path_or_buffer, "read"):
        rows = list(csv.reader(path_or_buffer))
    else:
        with open(path_or_buffer, "r", newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty CSV: no header row")
    header = rows[0]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    roles = _infer_roles(header, schema)
    by_role = {}
    for col, role in roles.items():
        by_role.setdefault(role, []).append(col)
    for required in ("subject", "time", "outcome"):
        if required not in by_role:
            raise DataError(f"no column mapped to role {required!r}")
        if len(by_role[required]) > 1:
            raise DataError(f"multiple columns mapped to role {required!r}: {by_role[required]}")

    col_idx = {c: j for j, c in enumerate(header)}
    subj_col = col_idx[by_role["subject"][0]]
    time_col = col_idx[by_role["time"][0]]
    y_col = col_idx[by_role["outcome"][0]]
    treat_cols = [(role.split(":", 1)[1], col_idx[c]) for c in header
                  for role in [roles[c]] if role.startswith("treatment:")]
    cov_cols = [(role.split(":", 1)[1], col_idx[c]) for c in header
                for role in [roles[c]] if role.startswith("covariate:")]

    cells = {}
    times = set()
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"line {ln}: expected {len(header)} fields, got {len(row)}")
        sid = row[subj_col]
        try:
            t = int(row[time_col])
        except ValueError:
            raise DataError(f"line {ln}: time {row[time_col]!r} is not an integer") from None

        def num(raw, what):
            try:
                v = float(raw)
            except ValueError:
                raise DataError(
                    f"line {ln} (subject {sid!r}, time {t}): {what} value {raw!r} is not numeric"
                ) from None
            if not np.isfinite(v):
                raise DataError(f"line {ln} (subject {sid!r}, time {t}): {what} value is not finite")
            return v

        vals = (
            num(row[y_col], "outcome"),
            tuple(num(row[j], f"treatment {nm!r}") for nm, j in treat_cols),
            tuple(num(row[j], f"covariate {nm!r}") for nm, j in cov_cols),
        )
        if (sid, t) in cells:
            raise DataError(f"duplicate row for subject {sid!r}, time {t}")
        cells[(sid, t)] = vals
        times.add(t)

    if not cells:
        raise DataError("CSV has a header but no data rows")
    labels = sorted(times)
    if labels != list(range(labels[0], labels[-1] + 1)):
        raise DataError(f"period grid has gaps: {labels}")
    subjects = sorted({sid for sid, _ in cells})
    for sid in subjects:
        for t in labels:
            if (sid, t) not in cells:
                raise DataError(f"missing cell: subject {sid!r} has no row at time {t}")

    n, periods = len(subjects), len(labels)
    q, p = len(treat_cols), len(cov_cols)
    y = np.empty((n, periods))
    a = np.empty((n, periods, q))
    z = np.empty((n, periods, p))
    for ii, sid in enumerate(subjects):
        for jj, t in enumerate(labels):
            yv, av, zv = cells[(sid, t)]
            y[ii, jj] = yv
            a[ii, jj, :] = av
            z[ii, jj, :] = zv
    return PanelDataset(
        outcomes=y,
        treatments=a,
        covariates=z,
        subject_ids=tuple(subjects),
        time_labels=tuple(labels),
        treatment_names=tuple(nm for nm, _ in treat_cols),
        covariate_names=tuple(nm for nm, _ in cov_cols),
    )


def _fmt(v: float) -> str:
    # shortest round-trip decimal; integral floats print as e.g. "1.0"
    return repr(float(v))


def write_panel_csv(panel: PanelDataset, path_or_buffer) -> None:
    """Write the canonical long-format CSV (subjects sorted by id).

    The writer is deterministic given the dataset, and loading re-sorts, so a
    load/write round trip is byte-stable.
    """
    header = (
        ["subject_id", "time", "y"]
        + [f"a_{nm}" for nm in panel.treatment_names]
        + [f"z_{nm}" for nm in panel.covariate_names]
    )
    order = np.argsort(np.asarray(panel.subject_ids, dtype=object))

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in order:
            sid = panel.subject_ids[i]
            for j, t in enumerate(panel.time_labels):
                row = [sid, str(t), _fmt(panel.outcomes[i, j])]
                row += [_fmt(v) for v in panel.treatments[i, j]]
                row += [_fmt(v) for v in panel.covariates[i, j]]
                w.writerow(row)

    if hasattr(path_or_buffer, "write"):
        emit(path_or_buffer)
    else:
        with open(path_or_buffer, "w", newline="", encoding="utf-8") as fh:
            emit(fh)


def panel_to_csv_bytes(panel: PanelDataset) -> bytes:
    buf = io.StringIO()
    write_panel_csv(panel, buf)
    return buf.getvalue().encode("utf-8")
