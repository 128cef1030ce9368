"""Per-epoch training metrics and their CSV export.

All recorded values are rounded to float32 before storage so that the CSV
export (9 significant digits) reproduces the in-memory record exactly when
parsed back at float32 precision.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .policies import LEARNABLE_POLICIES, POLICY_NAMES, N_LEARNABLE, N_POLICIES

MAGNITUDE_COLUMNS = tuple(p.name for p in LEARNABLE_POLICIES)
PROBABILITY_COLUMNS = POLICY_NAMES
LOSS_COLUMNS = (
    "loss_total",
    "loss_ce",
    "loss_kl",
    "search_loss_mean",
    "train_accuracy",
    "test_accuracy",
)


def f32(value: float) -> float:
    """Round to float32 precision (the storage precision of the record)."""
    return float(np.float32(value))


@dataclass
class EpochRecord:
    epoch: int
    train_accuracy: float
    test_accuracy: float
    loss_total: float
    loss_ce: float
    loss_kl: float
    teacher_confidence: float
    magnitudes: list[float]
    probabilities: list[float]
    search_losses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.magnitudes) != N_LEARNABLE:
            raise ValueError(f"need {N_LEARNABLE} magnitude snapshots")
        if len(self.probabilities) != N_POLICIES:
            raise ValueError(f"need {N_POLICIES} probability snapshots")
        if not 0.0 <= self.teacher_confidence <= 1.0:
            raise ValueError("teacher confidence must lie in [0, 1]")


@dataclass
class RunRecord:
    epochs: list[EpochRecord] = field(default_factory=list)

    def append(self, entry: EpochRecord) -> None:
        self.epochs.append(entry)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs]}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(epochs=[EpochRecord(**e) for e in d["epochs"]])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _write_csv(path: Path, header: list[str], rows: list[list[float]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join([str(int(row[0]))] + [_fmt(v) for v in row[1:]]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def export_curves(record: RunRecord, out_dir: str | Path, plots: bool = False) -> list[Path]:
    """Write the per-epoch curves as CSV files (and optionally PNG plots).

    Emits magnitudes.csv, probabilities.csv, confidence.csv and losses.csv.
    Column names for the magnitude/probability files follow the canonical
    sub-policy order; values are sigmoid-space snapshots in [0, 1].
    """
    if not record.epochs:
        raise ValueError("cannot export an empty run record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    mag_path = out / "magnitudes.csv"
    _write_csv(
        mag_path,
        ["epoch", *MAGNITUDE_COLUMNS],
        [[e.epoch, *e.magnitudes] for e in record.epochs],
    )
    written.append(mag_path)

    prob_path = out / "probabilities.csv"
    _write_csv(
        prob_path,
        ["epoch", *PROBABILITY_COLUMNS],
        [[e.epoch, *e.probabilities] for e in record.epochs],
    )
    written.append(prob_path)

    conf_path = out / "confidence.csv"
    _write_csv(
        conf_path,
        ["epoch", "teacher_confidence"],
        [[e.epoch, e.teacher_confidence] for e in record.epochs],
    )
    written.append(conf_path)

    loss_path = out / "losses.csv"
    rows = []
    for e in record.epochs:
        search_mean = (
            float(np.mean(e.search_losses)) if e.search_losses else float("nan")
        )
        rows.append(
            [
                e.epoch,
                e.loss_total,
                e.loss_ce,
                e.loss_kl,
                search_mean,
                e.train_accuracy,
                e.test_accuracy,
            ]
        )
    _write_csv(loss_path, ["epoch", *LOSS_COLUMNS], rows)
    written.append(loss_path)

    if plots:
        written += _plot_curves(record, out)
    return written


def _plot_curves(record: RunRecord, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [e.epoch for e in record.epochs]
    files = []
    for name, columns, rows in (
        ("magnitudes", MAGNITUDE_COLUMNS, [e.magnitudes for e in record.epochs]),
        ("probabilities", PROBABILITY_COLUMNS, [e.probabilities for e in record.epochs]),
    ):
        fig, ax = plt.subplots(figsize=(7, 4))
        data = np.asarray(rows)
        for j, col in enumerate(columns):
            ax.plot(epochs, data[:, j], label=col, linewidth=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel(name)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(fontsize=6, ncol=2)
        path = out / f"{name}.png"
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        files.append(path)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [e.teacher_confidence for e in record.epochs], label="teacher confidence")
    ax.plot(epochs, [e.test_accuracy for e in record.epochs], label="student test acc")
    ax.set_xlabel("epoch")
    ax.legend()
    path = out / "confidence.png"
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    files.append(path)
    return files


def parse_curve_csv(path: str | Path) -> tuple[list[str], list[list[float]]]:
    """Read back a curve CSV: header names and numeric rows."""
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln]
    header = lines[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return header, rows
