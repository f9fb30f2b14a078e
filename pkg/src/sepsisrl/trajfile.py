"""Reading and writing trajectory files, plus the processed-cohort archive.

Trajectory file layout (text, one timestep per line)::

    #sepsisrl-trajectories v1
    patient_id,step,<47 feature names>,iv_dose,vp_dose,outcome
    P0001,0,0.81,,...,120.0,0.0,
    P0001,1,0.77,4.0,...,0.0,0.0,survived

An empty feature field is an absent measurement. ``outcome`` is empty on every
line except the last line of a patient block, where it is ``survived`` or
``died``. Doses must already be normalized (IV in tonicity-adjusted mL per
window, vasopressor in a single drug-equivalent unit).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .cohort import ActionSpace, Cohort, NormStats, PatientTrajectory
from .errors import DataError
from .features import FEATURE_NAMES, N_FEATURES, default_caps
from .storage import load_archive, save_archive

MAGIC = "#sepsisrl-trajectories"
VERSION = 1
COLUMNS = ["patient_id", "step", *FEATURE_NAMES, "iv_dose", "vp_dose", "outcome"]


def _num(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_trajectories(path, cohort: Cohort) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"{MAGIC} v{VERSION}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for traj in cohort.trajectories:
            T = len(traj)
            for t in range(T):
                outcome = traj.outcome if t == T - 1 else ""
                writer.writerow([traj.patient_id, t, *(_num(v) for v in traj.features[t]),
                                 _num(traj.doses[t, 0]), _num(traj.doses[t, 1]), outcome])
    return path


def _parse_float(field: str, where: str, allow_empty: bool) -> float:
    if field == "":
        if allow_empty:
            return np.nan
        raise DataError(f"{where}: value required")
    try:
        return float(field)
    except ValueError:
        raise DataError(f"{where}: not a number: {field!r}") from None


def read_trajectories(path, caps: np.ndarray | None = None) -> Cohort:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        parts = first.split()
        if len(parts) != 2 or parts[0] != MAGIC:
            raise DataError(f"{path}: missing '{MAGIC} v{VERSION}' header line")
        if parts[1] != f"v{VERSION}":
            raise DataError(f"{path}: unsupported trajectory format version {parts[1]}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COLUMNS:
            raise DataError(f"{path}: column header does not match the expected feature order")

        trajs: list[PatientTrajectory] = []
        pid, rows, doses = None, [], []
        closed = set()

        def close(outcome: str, lineno: int):
            if outcome not in ("survived", "died"):
                raise DataError(f"{path}:{lineno}: patient {pid} block must end with an outcome")
            trajs.append(PatientTrajectory(pid, np.array(rows), np.array(doses), outcome == "died"))
            closed.add(pid)

        pending_outcome = ""
        lineno = 2
        for lineno, rec in enumerate(reader, start=3):
            if len(rec) != len(COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(rec)}")
            if rec[0] != pid:
                if pid is not None:
                    close(pending_outcome, lineno - 1)
                pid, rows, doses = rec[0], [], []
                if pid in closed:
                    raise DataError(f"{path}:{lineno}: patient {pid} appears in two blocks")
            elif pending_outcome:
                raise DataError(f"{path}:{lineno - 1}: outcome given before the last line of {pid}")
            where = f"{path}:{lineno}"
            if rec[1] != str(len(rows)):
                raise DataError(f"{where}: expected step {len(rows)} for {pid}, got {rec[1]}")
            rows.append([_parse_float(f, where, True) for f in rec[2:2 + N_FEATURES]])
            dose = [_parse_float(f, where, False) for f in rec[2 + N_FEATURES:4 + N_FEATURES]]
            if min(dose) < 0:
                raise DataError(f"{where}: negative dose")
            doses.append(dose)
            pending_outcome = rec[-1]
        if pid is not None:
            close(pending_outcome, lineno)
    return Cohort(trajs, caps=default_caps() if caps is None else caps)


def save_cohort(path, cohort: Cohort, action_space: ActionSpace | None = None) -> Path:
    """Persist a (processed) cohort as one archive; patient ids and stats in metadata."""
    if not cohort.trajectories:
        raise DataError("refusing to save an empty cohort")
    st = cohort.stacked()
    arrays = {"features": st["features"], "doses": st["doses"], "actions": st["actions"],
              "rewards": st["rewards"], "lengths": st["lengths"],
              "died": np.array([t.died for t in cohort.trajectories], dtype=np.int64),
              "caps": cohort.caps}
    meta = {"format": "sepsisrl-cohort", "version": 1,
            "patient_ids": [t.patient_id for t in cohort.trajectories],
            "normalized": cohort.normalized,
            "norm_stats": cohort.norm_stats.to_dict() if cohort.norm_stats else None,
            "action_space": action_space.to_dict() if action_space else None}
    return save_archive(path, arrays, meta)


def load_cohort(path) -> Cohort:
    arrays, meta = load_archive(path)
    if meta.get("format") != "sepsisrl-cohort":
        raise DataError(f"{path} is not a cohort archive")
    bounds = np.concatenate([[0], np.cumsum(arrays["lengths"])])
    trajs = []
    for i, pid in enumerate(meta["patient_ids"]):
        a, b = bounds[i], bounds[i + 1]
        trajs.append(PatientTrajectory(pid, arrays["features"][a:b], arrays["doses"][a:b],
                                       bool(arrays["died"][i]), arrays["actions"][a:b],
                                       arrays["rewards"][a:b]))
    stats = NormStats.from_dict(meta["norm_stats"]) if meta.get("norm_stats") else None
    return Cohort(trajs, caps=arrays["caps"], norm_stats=stats, normalized=bool(meta["normalized"]),
                  meta={"action_space": meta.get("action_space")})
