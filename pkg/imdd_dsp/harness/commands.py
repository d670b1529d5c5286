from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch

from imdd_dsp import datasets
from imdd_dsp.autoencoder import retrain_receiver, train_end_to_end
from imdd_dsp.config import ExperimentConfig, Scheme
from imdd_dsp.datasets import RecordedDataset
from imdd_dsp.errors import ConfigError, TrainingDivergence
from imdd_dsp.harness.models import ModelBundle, load_bundle, save_bundle
from imdd_dsp.harness.reporting import (
    EvalRow,
    collect_reports,
    report_frame,
    update_manifest,
    write_csv,
    write_loss_trace,
)
from imdd_dsp.metrics import (
    BitMapping,
    average_ber,
    confusion_matrix,
    optimize_bit_mapping,
    wilson_interval,
)
from imdd_dsp.pamsys.modulation import symbols_to_bits
from imdd_dsp.pamsys.sbrnn import pam_sbrnn_receiver
from imdd_dsp.pamsys.sffnn import Sffnn, sffnn_detect_sequence, train_sffnn
from imdd_dsp.pamsys.volterra import volterra_equalize, volterra_fit
from imdd_dsp.rng import derive_seed, make_rng
from imdd_dsp.slidingwindow import decide, estimate_sequence
from imdd_dsp.storage import export_csv


logger = logging.getLogger(__name__)

STREAMS = {"train": 0, "generate": 1, "fit": 2, "mapping": 3, "sweep": 4, "receiver_init": 5}
AE_SEQUENCES_PER_ROW = datasets.AE_SEQUENCES_PER_ROW


def stream_rng(cfg: ExperimentConfig, name: str, *extra: int) -> np.random.Generator:
    return make_rng(np.random.SeedSequence([cfg.seed, STREAMS[name], *extra]), cfg.rng)


def _require_out_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.out_path
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    return out


def _load_dataset(cfg: ExperimentConfig, name: str) -> RecordedDataset:
    ds = datasets.load(cfg.path(name))
    if ds.scheme.is_autoencoder != cfg.scheme.is_autoencoder:
        raise ConfigError(f"dataset_scheme_mismatch: file={ds.scheme.value} config={cfg.scheme.value}")
    return ds


def _load_model(cfg: ExperimentConfig) -> ModelBundle:
    bundle = load_bundle(cfg.path("model"))
    if bundle.scheme is not cfg.scheme:
        raise ConfigError(f"model_scheme_mismatch: file={bundle.scheme.value} config={cfg.scheme.value}")
    return bundle


def _guard_training(fn: Callable[[], Any], loss_path: Path) -> Any:
    try:
        return fn()
    except TrainingDivergence as exc:
        write_loss_trace(exc.trace, loss_path)
        logger.error("training_diverged step=%s trace_path=%s", exc.step, loss_path)
        raise


def cmd_generate(cfg: ExperimentConfig, *, csv: bool = False) -> dict[str, Any]:
    out = _require_out_dir(cfg)
    rng = stream_rng(cfg, "generate")
    if cfg.scheme.is_autoencoder:
        bundle = _load_model(cfg)
        assert bundle.ae is not None
        train, test = datasets.build_ae_dataset(
            cfg.autoencoder,
            cfg.link,
            cfg.dataset.z,
            cfg.dataset.t,
            rng,
            tx=bundle.ae.tx,
            scheme=cfg.scheme,
            rng_kind=cfg.rng,
            threads=cfg.threads,
        )
    else:
        train, test = datasets.build_pam_dataset(
            cfg.pam,
            cfg.link,
            cfg.dataset.z,
            cfg.dataset.t,
            rng,
            scheme=cfg.scheme,
            rng_kind=cfg.rng,
            threads=cfg.threads,
        )
    outputs = [datasets.save(train, cfg.path("train_dataset")), datasets.save(test, cfg.path("test_dataset"))]
    if csv:
        for name, ds in (("train", train), ("test", test)):
            outputs.append(export_csv(ds.d, out / f"{name}_d.csv"))
            outputs.append(export_csv(ds.l, out / f"{name}_l.csv"))
    update_manifest(cfg, "generate", outputs)
    return {"command": "generate", "out_dir": str(out), "train_rows": train.rows, "test_rows": test.rows, "columns": train.columns}


def _train_bundle(cfg: ExperimentConfig, loss_path: Path) -> ModelBundle:
    schedule = cfg.schedule
    if cfg.scheme.is_autoencoder:
        model, trace = _guard_training(
            lambda: train_end_to_end(cfg.autoencoder, cfg.link, schedule, stream_rng(cfg, "train")), loss_path
        )
        write_loss_trace(trace, loss_path)
        return ModelBundle(cfg.scheme, ae=model, info={"trained_distance_km": cfg.link.distance_km})

    train = _load_dataset(cfg, "train_dataset")
    seed = derive_seed(stream_rng(cfg, "receiver_init"))
    if cfg.scheme.receiver == "sffnn":
        rx, trace = _guard_training(
            lambda: train_sffnn(train, cfg.eval_window, schedule, classes=cfg.pam.order, seed=seed), loss_path
        )
    else:
        rx, trace = _guard_training(
            lambda: pam_sbrnn_receiver(
                train, cfg.pam.sbrnn_window, schedule, classes=cfg.pam.order, state_dim=cfg.pam.sbrnn_state_dim, seed=seed
            ),
            loss_path,
        )
    write_loss_trace(trace, loss_path)
    return ModelBundle(cfg.scheme, receiver=rx, info={"trained_distance_km": train.meta.get("link", {}).get("distance_km")})


def cmd_train(cfg: ExperimentConfig) -> dict[str, Any]:
    if cfg.scheme.receiver == "volterra":
        return cmd_fit(cfg)
    out = _require_out_dir(cfg)
    loss_path = out / "train_loss.csv"
    bundle = _train_bundle(cfg, loss_path)
    model_path = save_bundle(bundle, cfg.path("model"))
    update_manifest(cfg, "train", [model_path, loss_path])
    return {"command": "train", "model": str(model_path), "rx_params": bundle.rx_params()}


def cmd_retrain(cfg: ExperimentConfig) -> dict[str, Any]:
    if not cfg.scheme.is_autoencoder:
        raise ConfigError(f"retrain_applies_to_autoencoder_schemes: {cfg.scheme.value}")
    out = _require_out_dir(cfg)
    bundle = _load_model(cfg)
    train = _load_dataset(cfg, "train_dataset")
    loss_path = out / "retrain_loss.csv"
    assert bundle.ae is not None

    if cfg.scheme is Scheme.AE_SBRNN:
        model, trace = _guard_training(
            lambda: retrain_receiver(train, bundle.ae, cfg.autoencoder.training_window, cfg.schedule), loss_path
        )
        bundle.ae = model
    else:
        seed = derive_seed(stream_rng(cfg, "receiver_init"))
        rx, trace = _guard_training(
            lambda: train_sffnn(train, cfg.eval_window, cfg.schedule, classes=cfg.autoencoder.alphabet_size, seed=seed),
            loss_path,
        )
        bundle.receiver = rx
    write_loss_trace(trace, loss_path)
    bundle.info["retrained_on"] = train.meta.get("link", {}).get("distance_km")
    model_path = save_bundle(bundle, cfg.path("model"))
    update_manifest(cfg, "retrain", [model_path, loss_path])
    return {"command": "retrain", "model": str(model_path), "steps": trace.steps}


def cmd_fit(cfg: ExperimentConfig) -> dict[str, Any]:
    if cfg.scheme.receiver != "volterra":
        raise ConfigError(f"fit_volterra_requires_volterra_scheme: {cfg.scheme.value}")
    out = _require_out_dir(cfg)
    train = _load_dataset(cfg, "train_dataset")
    coeffs = volterra_fit(
        train,
        cfg.pam.window,
        cfg.pam.volterra_w1,
        cfg=cfg.pam,
        count=cfg.pam.volterra_rows,
        rng=stream_rng(cfg, "fit"),
    )
    bundle = ModelBundle(cfg.scheme, volterra=coeffs, info={"rank": coeffs.rank, "full_rank": coeffs.full_rank})
    model_path = save_bundle(bundle, cfg.path("model"))
    update_manifest(cfg, "fit-volterra", [model_path])
    return {"command": "fit-volterra", "model": str(model_path), "features": coeffs.feature_count, "rank": coeffs.rank}


def _map_rows(fn: Callable[[int], np.ndarray], rows: int, threads: int) -> list[np.ndarray]:
    if threads <= 1:
        return [fn(r) for r in range(rows)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(rows)))


def detect_dataset(cfg: ExperimentConfig, bundle: ModelBundle, ds: RecordedDataset, window: int, *, threads: int = 1) -> np.ndarray:
    scheme = cfg.scheme
    _require_receiver(cfg, bundle)

    def detect_row(r: int) -> np.ndarray:
        blocks = ds.row_blocks(r)
        if scheme.receiver == "volterra":
            assert bundle.volterra is not None
            return volterra_equalize(bundle.volterra, blocks.numpy(), cfg.pam)
        if isinstance(bundle.receiver, Sffnn):
            return decide(sffnn_detect_sequence(blocks, bundle.receiver))
        rx = bundle.receiver if bundle.receiver is not None else bundle.ae.rx  # type: ignore[union-attr]
        return decide(estimate_sequence(blocks, rx, window))

    with torch.no_grad():
        return np.stack(_map_rows(detect_row, ds.rows, threads))


def _require_receiver(cfg: ExperimentConfig, bundle: ModelBundle) -> None:
    # the SFFNN receiver of this scheme only exists after retrain on recorded data
    if cfg.scheme is Scheme.AE_TX_BRNN_RX_SFFNN and not isinstance(bundle.receiver, Sffnn):
        raise ConfigError("sffnn_receiver_not_trained")


def _window_for(cfg: ExperimentConfig, bundle: ModelBundle, window: int | None) -> int:
    _require_receiver(cfg, bundle)
    if isinstance(bundle.receiver, Sffnn):
        if window is not None and window != bundle.receiver.window:
            raise ConfigError(f"sffnn_window_fixed_by_model: model={bundle.receiver.window} requested={window}")
        return bundle.receiver.window
    if bundle.volterra is not None:
        if window is not None and window != bundle.volterra.window:
            raise ConfigError(f"volterra_window_fixed_by_model: model={bundle.volterra.window} requested={window}")
        return bundle.volterra.window
    return cfg.eval_window if window is None else window


@dataclass(frozen=True)
class Scored:
    row: EvalRow
    mapping: BitMapping | None
    train_confusion: Any


def score_decisions(
    cfg: ExperimentConfig,
    *,
    window: int,
    distance_km: float,
    rx_params: int,
    test_truth: np.ndarray,
    test_decided: np.ndarray,
    train_truth: np.ndarray | None = None,
    train_decided: np.ndarray | None = None,
) -> Scored:
    bler = float(np.mean(test_truth != test_decided))
    per_sequence: list[float] = []
    bit_errors = 0
    bit_total = 0
    mapping: BitMapping | None = None
    train_cm = None

    if cfg.scheme.is_autoencoder:
        size = cfg.autoencoder.alphabet_size
        if train_truth is None or train_decided is None:
            raise ConfigError("autoencoder_scoring_needs_training_decisions")
        train_cm = confusion_matrix(train_truth, train_decided, size)
        mapping = optimize_bit_mapping(train_cm, restarts=cfg.eval.mapping_restarts, rng=stream_rng(cfg, "mapping"))
        bits_per_label = mapping.bits
        sequences_t = test_truth.reshape(-1, test_truth.shape[1] // AE_SEQUENCES_PER_ROW)
        sequences_d = test_decided.reshape(sequences_t.shape)
        for truth, decided in zip(sequences_t, sequences_d):
            errors = int(np.sum(mapping.symbol_bits(truth) != mapping.symbol_bits(decided)))
            bit_errors += errors
            bit_total += truth.size * bits_per_label
            per_sequence.append(errors / (truth.size * bits_per_label))
        sequences = sequences_t.shape[0]
    else:
        bits_per_label = cfg.pam.bits_per_symbol
        for truth, decided in zip(test_truth, test_decided):
            tb = symbols_to_bits(truth, cfg.pam)
            db = symbols_to_bits(decided, cfg.pam)
            errors = int(np.sum(tb != db))
            bit_errors += errors
            bit_total += tb.size
            per_sequence.append(errors / tb.size)
        sequences = test_truth.shape[0]

    ber = average_ber(per_sequence)
    ci_low, ci_high = wilson_interval(bit_errors, bit_total)
    row = EvalRow(
        scheme=cfg.scheme.value,
        distance=float(distance_km),
        W=int(window),
        BLER=bler,
        BER=ber,
        ci_low=ci_low,
        ci_high=ci_high,
        hdfec_pass=bool(ber < cfg.eval.hdfec_threshold),
        bits_in_flight=int(window * bits_per_label),
        rx_params=int(rx_params),
        sequences=int(sequences),
        seed=cfg.seed,
    )
    return Scored(row=row, mapping=mapping, train_confusion=train_cm)


def evaluate(
    cfg: ExperimentConfig,
    bundle: ModelBundle,
    test: RecordedDataset,
    *,
    train: RecordedDataset | None = None,
    window: int | None = None,
    threads: int = 1,
) -> Scored:
    w = _window_for(cfg, bundle, window)
    test_decided = detect_dataset(cfg, bundle, test, w, threads=threads)
    train_truth = train_decided = None
    if cfg.scheme.is_autoencoder:
        if train is None:
            raise ConfigError("autoencoder_evaluation_needs_training_dataset_for_bit_mapping")
        train_truth = train.l.astype(np.int64)
        train_decided = detect_dataset(cfg, bundle, train, w, threads=threads)
    distance = test.meta.get("link", {}).get("distance_km", cfg.link.distance_km)
    scored = score_decisions(
        cfg,
        window=w,
        distance_km=distance,
        rx_params=bundle.rx_params(),
        test_truth=test.l.astype(np.int64),
        test_decided=test_decided,
        train_truth=train_truth,
        train_decided=train_decided,
    )
    r = scored.row
    logger.info("eval_done scheme=%s distance=%s W=%s BER=%.4g BLER=%.4g", r.scheme, r.distance, r.W, r.BER, r.BLER)
    return scored


def cmd_eval(cfg: ExperimentConfig, *, window: int | None = None) -> dict[str, Any]:
    out = _require_out_dir(cfg)
    bundle = _load_model(cfg)
    test = _load_dataset(cfg, "test_dataset")
    train = _load_dataset(cfg, "train_dataset") if cfg.scheme.is_autoencoder else None
    scored = evaluate(cfg, bundle, test, train=train, window=window, threads=cfg.threads)
    outputs = [write_csv(report_frame([scored.row]), out / "eval.csv")]
    if scored.train_confusion is not None:
        outputs.append(write_csv(scored.train_confusion.to_frame().reset_index(), out / "confusion_train.csv"))
    update_manifest(cfg, "eval", outputs)
    r = scored.row
    return {"command": "eval", "BER": r.BER, "BLER": r.BLER, "hdfec_pass": r.hdfec_pass, "W": r.W, "rx_params": r.rx_params}


def _distance_point(cfg: ExperimentConfig, bundle: ModelBundle, index: int, distance: float) -> EvalRow:
    link = replace(cfg.link, distance_km=float(distance))
    rng = stream_rng(cfg, "sweep", index)
    if cfg.scheme.is_autoencoder:
        assert bundle.ae is not None
        train, test = datasets.build_ae_dataset(
            cfg.autoencoder, link, cfg.dataset.z, cfg.dataset.t, rng, tx=bundle.ae.tx, scheme=cfg.scheme, rng_kind=cfg.rng
        )
    else:
        train, test = datasets.build_pam_dataset(
            cfg.pam, link, cfg.dataset.z, cfg.dataset.t, rng, scheme=cfg.scheme, rng_kind=cfg.rng
        )
    return evaluate(cfg, bundle, test, train=train if cfg.scheme.is_autoencoder else None).row


def cmd_sweep(
    cfg: ExperimentConfig,
    *,
    kind: str | None = None,
    grid: list[float] | None = None,
) -> dict[str, Any]:
    """Distance sweeps regenerate data per point and apply the stored model as is; window sweeps reuse stored data."""
    out = _require_out_dir(cfg)
    kind = kind or cfg.sweep.kind
    bundle = _load_model(cfg)

    if kind == "distance":
        points = [float(d) for d in (grid if grid is not None else cfg.sweep.distances_km)]
        if not points:
            raise ConfigError("empty_sweep_grid")

        def run(item: tuple[int, float]) -> EvalRow:
            return _distance_point(cfg, bundle, *item)

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                rows = list(pool.map(run, enumerate(points)))
        else:
            rows = [run(item) for item in enumerate(points)]
        frame = report_frame(rows, sort_by="distance")
    elif kind == "window":
        points = [int(w) for w in (grid if grid is not None else cfg.sweep.windows)]
        if not points:
            raise ConfigError("empty_sweep_grid")
        if bundle.volterra is not None or isinstance(bundle.receiver, Sffnn):
            raise ConfigError(f"window_sweep_needs_sliding_window_receiver: {cfg.scheme.value}")
        test = _load_dataset(cfg, "test_dataset")
        train = _load_dataset(cfg, "train_dataset") if cfg.scheme.is_autoencoder else None
        rows = [evaluate(cfg, bundle, test, train=train, window=w, threads=cfg.threads).row for w in points]
        frame = report_frame(rows, sort_by="W")
    else:
        raise ConfigError(f"unsupported_sweep_kind: {kind}")

    path = write_csv(frame, out / f"sweep_{kind}.csv")
    update_manifest(cfg, f"sweep-{kind}", [path])
    return {"command": "sweep", "kind": kind, "points": len(frame), "csv": str(path)}


def cmd_report(cfg: ExperimentConfig) -> dict[str, Any]:
    out = _require_out_dir(cfg)
    frame = collect_reports(out)
    path = write_csv(frame, out / "summary.csv")
    update_manifest(cfg, "report", [path])
    best = None
    if len(frame):
        top = frame.sort_values(["BER", "source"], kind="stable").iloc[0]
        best = {"source": str(top["source"]), "BER": float(top["BER"]), "distance": float(top["distance"]), "W": int(top["W"])}
    summary = {"command": "report", "files": int(frame["source"].nunique()) if len(frame) else 0, "rows": len(frame), "best": best}
    logger.info("report_done %s", json.dumps(summary, sort_keys=True))
    return summary


COMMANDS: dict[str, Callable[..., dict[str, Any]]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "retrain": cmd_retrain,
    "fit-volterra": cmd_fit,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
}
