from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from imdd_dsp.config import ExperimentConfig, config_hash
from imdd_dsp.nn import TrainingTrace


logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
REPORT_COLUMNS = [
    "scheme",
    "distance",
    "W",
    "BLER",
    "BER",
    "ci_low",
    "ci_high",
    "hdfec_pass",
    "bits_in_flight",
    "rx_params",
    "sequences",
    "seed",
]


@dataclass(frozen=True)
class EvalRow:
    scheme: str
    distance: float
    W: int
    BLER: float
    BER: float
    ci_low: float
    ci_high: float
    hdfec_pass: bool
    bits_in_flight: int
    rx_params: int
    sequences: int
    seed: int


def report_frame(rows: Iterable[EvalRow], *, sort_by: str | None = None) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=REPORT_COLUMNS)
    if sort_by is not None:
        frame = frame.sort_values(sort_by, kind="stable").reset_index(drop=True)
    return frame


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format="%.10g")
    logger.info("csv_written path=%s rows=%s", path, len(frame))
    return path


def write_loss_trace(trace: TrainingTrace | Sequence[float], path: Path) -> Path:
    if not isinstance(trace, TrainingTrace):
        trace = TrainingTrace(list(trace))
    frame = pd.DataFrame(trace.rows(), columns=["step", "loss"])
    return write_csv(frame, path)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def update_manifest(cfg: ExperimentConfig, command: str, outputs: Sequence[Path]) -> Path:
    """Record config hash and output checksums; entries are keyed by command so reruns replace them."""
    path = cfg.out_path / MANIFEST_NAME
    manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    manifest["config_hash"] = config_hash(cfg)
    manifest["scheme"] = cfg.scheme.value
    manifest["seed"] = cfg.seed
    commands = manifest.setdefault("commands", {})
    commands[command] = {
        "config_hash": config_hash(cfg),
        "outputs": {p.name: sha256_file(p) for p in sorted(outputs)},
    }
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def collect_reports(out_dir: Path) -> pd.DataFrame:
    frames = []
    for csv_path in sorted(out_dir.glob("eval*.csv")) + sorted(out_dir.glob("sweep_*.csv")):
        frame = pd.read_csv(csv_path)
        if not set(REPORT_COLUMNS) <= set(frame.columns):
            continue
        frame.insert(0, "source", csv_path.name)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["source", *REPORT_COLUMNS])
    return pd.concat(frames, ignore_index=True)
