"""Per-episode metrics records written as CSV with a fixed column order."""

import csv
import math
import os
from dataclasses import astuple, dataclass, fields

LATENT_ERROR_KS = (1, 5, 15)


@dataclass
class MetricsRecord:
    episode: int
    env_steps: int
    episode_return: float
    eval_return: float
    model_loss: float
    policy_objective: float
    value_loss: float
    entropy: float
    confidence_weight: float
    confidence_loglik: float
    latent_error_k1: float
    latent_error_k5: float
    latent_error_k15: float


FIELDS = tuple(f.name for f in fields(MetricsRecord))
TIMING_FIELDS = ("episode", "wall_seconds")


def _fmt(x):
    if isinstance(x, int):
        return str(x)
    return "nan" if math.isnan(x) else repr(float(x))


class MetricsWriter:
    """Appends records to ``metrics.csv``; wall-clock time goes to ``timing.csv``.

    Keeping timing out of the main file lets identical runs produce identical bytes.
    """

    def __init__(self, out_dir, keep_through=None):
        self.path = os.path.join(out_dir, "metrics.csv")
        self.timing_path = os.path.join(out_dir, "timing.csv")
        _prepare(self.path, FIELDS, keep_through)
        _prepare(self.timing_path, TIMING_FIELDS, keep_through)

    def write(self, record, wall_seconds):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([_fmt(v) for v in astuple(record)])
        with open(self.timing_path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([record.episode, f"{wall_seconds:.3f}"])


def _prepare(path, header, keep_through):
    """Start a fresh file, or keep rows with episode <= keep_through when resuming."""
    rows = []
    if keep_through is not None and os.path.exists(path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) <= keep_through]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_metrics(path):
    """Load a metrics file as a list of dicts with numeric values."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for row in reader:
            out.append({k: (int(v) if k in ("episode", "env_steps") else float(v)) for k, v in row.items()})
    return out
