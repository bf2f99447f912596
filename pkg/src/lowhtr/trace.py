"""Per-round regret records."""
import csv
import json

import numpy as np

__all__ = ["RegretTrace", "PHASES", "CSV_COLUMNS"]

PHASES = ("warmup", "explore", "exploit")
CSV_COLUMNS = ("round", "batch", "phase", "arm_index", "inst_regret", "cum_regret")


def fmt_float(x):
    return format(float(x), ".17g")


class RegretTrace:
    """Round-by-round regret with batch and phase annotations.

    Rounds are numbered from 1. ``arm_index`` is the chosen arm's position in
    that round's arm set, or ``-1`` for arms drawn outside it.
    """

    def __init__(self, metadata=None):
        self.batch = []
        self.phase = []
        self.arm_index = []
        self.inst_regret = []
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.inst_regret)

    def record(self, batch, phase, arm_index, inst_regret):
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if inst_regret < -1e-10:
            raise AssertionError(f"negative instantaneous regret {inst_regret}")
        self.batch.append(int(batch))
        self.phase.append(phase)
        self.arm_index.append(int(arm_index))
        self.inst_regret.append(float(inst_regret))

    @property
    def rounds(self):
        return np.arange(1, len(self) + 1)

    @property
    def cum_regret(self):
        return np.cumsum(np.asarray(self.inst_regret, dtype=float))

    def final_regret(self):
        return float(self.cum_regret[-1]) if len(self) else 0.0

    def prefix(self, n):
        out = RegretTrace(self.metadata)
        out.batch = self.batch[:n]
        out.phase = self.phase[:n]
        out.arm_index = self.arm_index[:n]
        out.inst_regret = self.inst_regret[:n]
        return out

    def rows(self):
        cum = self.cum_regret
        for j in range(len(self)):
            yield (j + 1, self.batch[j], self.phase[j], self.arm_index[j],
                   fmt_float(self.inst_regret[j]), fmt_float(cum[j]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            w.writerows(self.rows())

    def to_dict(self):
        return {
            "metadata": self.metadata,
            "records": [dict(zip(CSV_COLUMNS, row)) for row in self.rows()],
        }

    def write_json(self, path):
        rows = [
            {"round": r, "batch": b, "phase": p, "arm_index": a,
             "inst_regret": float(i), "cum_regret": float(c)}
            for r, b, p, a, i, c in self.rows()
        ]
        with open(path, "w") as fh:
            json.dump({"metadata": self.metadata, "records": rows}, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.record(int(row["batch"]), row["phase"], int(row["arm_index"]),
                           float(row["inst_regret"]))
        return out
