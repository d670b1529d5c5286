from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import yaml

from imdd_dsp.errors import ConfigError


def _env(key: str) -> Optional[str]:
    value = os.environ.get(key)
    return value if value else None


def _deep_update(dst: dict[str, Any], src: dict[str, Any]) -> dict[str, Any]:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v
    return dst


def _optional_int(value: Any) -> int | None:
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    return int(value)


def _optional_float(value: Any) -> float | None:
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    return float(value)


class Scheme(str, Enum):
    AE_SBRNN = "ae_sbrnn"
    AE_TX_BRNN_RX_SFFNN = "ae_tx_brnn_rx_sffnn"
    PAM2_SFFNN = "pam2_sffnn"
    PAM4_SFFNN = "pam4_sffnn"
    PAM2_SBRNN = "pam2_sbrnn"
    PAM2_VOLTERRA = "pam2_volterra"
    PAM4_VOLTERRA = "pam4_volterra"

    @property
    def tag(self) -> int:
        return list(Scheme).index(self)

    @classmethod
    def from_tag(cls, tag: int) -> "Scheme":
        members = list(cls)
        if not 0 <= tag < len(members):
            raise ConfigError(f"unknown_scheme_tag: {tag}")
        return members[tag]

    @property
    def is_autoencoder(self) -> bool:
        return self.value.startswith("ae_")

    @property
    def pam_order(self) -> int | None:
        if self.value.startswith("pam2"):
            return 2
        if self.value.startswith("pam4"):
            return 4
        return None

    @property
    def receiver(self) -> str:
        return self.value.rsplit("_", 1)[1]


@dataclass(frozen=True)
class LinkConfig:
    distance_km: float = 20.0
    beta2_ps2_per_km: float = -21.7
    dac_rate_hz: float = 84e9
    oversampling: int = 4
    lpf_cutoff_hz: float | None = 32e9
    launch_power_dbm: float = 1.0
    noise_sigma: float = 0.01
    dac_bits: int | None = None
    adc_bits: int | None = None
    samples_per_block: int = 48
    remove_mean: bool = False
    target_mean_square: float = 1.0

    @property
    def sample_rate_hz(self) -> float:
        return self.dac_rate_hz * self.oversampling

    @property
    def launch_power_mw(self) -> float:
        return 10.0 ** (self.launch_power_dbm / 10.0)

    @property
    def quantized(self) -> bool:
        return self.dac_bits is not None or self.adc_bits is not None

    def validate(self) -> None:
        if self.distance_km < 0:
            raise ConfigError(f"negative_distance: {self.distance_km}")
        if self.dac_rate_hz <= 0 or self.oversampling < 1:
            raise ConfigError("invalid_rates: dac_rate_hz must be > 0 and oversampling >= 1")
        if self.lpf_cutoff_hz is not None and not 0 < self.lpf_cutoff_hz <= self.dac_rate_hz / 2:
            raise ConfigError(f"lpf_cutoff_above_dac_nyquist: {self.lpf_cutoff_hz}")
        if self.noise_sigma < 0:
            raise ConfigError(f"negative_noise_sigma: {self.noise_sigma}")
        for name in ("dac_bits", "adc_bits"):
            bits = getattr(self, name)
            if bits is not None and not 2 <= bits <= 16:
                raise ConfigError(f"invalid_{name}: {bits}")
        if self.samples_per_block < 1:
            raise ConfigError(f"invalid_samples_per_block: {self.samples_per_block}")
        if self.target_mean_square <= 0:
            raise ConfigError(f"invalid_target_mean_square: {self.target_mean_square}")


@dataclass(frozen=True)
class AeConfig:
    alphabet_size: int = 64
    samples_per_block: int = 48
    estimation_window: int = 10
    training_window: int = 10
    guard_blocks: int | None = None
    sffnn_window: int = 11

    @property
    def bits_per_block(self) -> int:
        return int(math.log2(self.alphabet_size))

    @property
    def guard(self) -> int:
        return self.estimation_window if self.guard_blocks is None else self.guard_blocks

    def validate(self) -> None:
        m = self.alphabet_size
        if m < 2 or m & (m - 1):
            raise ConfigError(f"alphabet_size_not_power_of_two: {m}")
        if self.samples_per_block < 1:
            raise ConfigError(f"invalid_samples_per_block: {self.samples_per_block}")
        if self.estimation_window < 1 or self.training_window < 1:
            raise ConfigError("windows_must_be_positive")
        if self.guard < 0:
            raise ConfigError(f"negative_guard_blocks: {self.guard}")


@dataclass(frozen=True)
class PamConfig:
    order: int = 2
    samples_per_symbol: int = 2
    rc_rolloff: float = 0.25
    rc_span: int = 8
    window: int = 61
    volterra_w1: int = 21
    sbrnn_window: int = 61
    sbrnn_state_dim: int = 32
    volterra_rows: int = 1

    @property
    def levels(self) -> tuple[float, ...]:
        step = (math.pi / 4) / (self.order - 1)
        return tuple(k * step for k in range(self.order))

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.order))

    @property
    def gray_map(self) -> tuple[int, ...]:
        # level index -> bit pattern
        return tuple(k ^ (k >> 1) for k in range(self.order))

    def validate(self) -> None:
        if self.order not in (2, 4):
            raise ConfigError(f"unsupported_pam_order: {self.order}")
        if self.samples_per_symbol < 1:
            raise ConfigError(f"invalid_samples_per_symbol: {self.samples_per_symbol}")
        if not 0 <= self.rc_rolloff <= 1:
            raise ConfigError(f"invalid_rc_rolloff: {self.rc_rolloff}")
        if self.rc_span < 2 or self.rc_span % 2:
            raise ConfigError(f"rc_span_must_be_even: {self.rc_span}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"pam_window_must_be_odd: {self.window}")
        if self.volterra_w1 < 1 or self.volterra_w1 % 2 == 0 or self.volterra_w1 > self.window:
            raise ConfigError(f"invalid_volterra_w1: {self.volterra_w1}")
        if self.sbrnn_window < 1:
            raise ConfigError(f"invalid_sbrnn_window: {self.sbrnn_window}")
        if self.sbrnn_state_dim < 1:
            raise ConfigError(f"invalid_sbrnn_state_dim: {self.sbrnn_state_dim}")
        if self.volterra_rows < 1:
            raise ConfigError(f"invalid_volterra_rows: {self.volterra_rows}")


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 20000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_grad_norm: float | None = None
    log_every: int = 100

    def validate(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("schedule_steps_and_batch_size_must_be_positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"invalid_learning_rate: {self.learning_rate}")


@dataclass(frozen=True)
class DatasetConfig:
    z: int = 64
    t: int = 512


@dataclass(frozen=True)
class EvalConfig:
    window: int | None = None
    mapping_restarts: int = 16
    hdfec_threshold: float = 4.5e-3


@dataclass(frozen=True)
class SweepConfig:
    kind: str = "distance"
    distances_km: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0)
    windows: tuple[int, ...] = (1, 2, 5, 10, 20, 30)


@dataclass(frozen=True)
class PathsConfig:
    model: str = "model.imdd"
    train_dataset: str = "train.imdd"
    test_dataset: str = "test.imdd"


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: Scheme = Scheme.AE_SBRNN
    seed: int = 1
    out_dir: str = "runs/default"
    threads: int = 1
    rng: str = "pcg64"
    link: LinkConfig = LinkConfig()
    autoencoder: AeConfig = AeConfig()
    pam: PamConfig = PamConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    dataset: DatasetConfig = DatasetConfig()
    eval: EvalConfig = EvalConfig()
    sweep: SweepConfig = SweepConfig()
    paths: PathsConfig = PathsConfig()

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def path(self, name: str) -> Path:
        return self.out_path / getattr(self.paths, name)

    @property
    def eval_window(self) -> int:
        if self.eval.window is not None:
            return self.eval.window
        if self.scheme is Scheme.AE_SBRNN:
            return self.autoencoder.estimation_window
        if self.scheme is Scheme.AE_TX_BRNN_RX_SFFNN:
            return self.autoencoder.sffnn_window
        if self.scheme is Scheme.PAM2_SBRNN:
            return self.pam.sbrnn_window
        return self.pam.window

    def validate(self) -> None:
        self.link.validate()
        self.schedule.validate()
        if self.rng not in ("pcg64", "mt19937"):
            raise ConfigError(f"unsupported_rng: {self.rng}")
        if self.threads < 1:
            raise ConfigError(f"invalid_threads: {self.threads}")
        if self.dataset.z < 1 or self.dataset.t < 1:
            raise ConfigError("dataset_sizes_must_be_positive")
        if self.scheme.is_autoencoder:
            self.autoencoder.validate()
            if self.link.samples_per_block != self.autoencoder.samples_per_block:
                raise ConfigError("link_block_length_differs_from_autoencoder")
            if self.dataset.z % 8:
                raise ConfigError(f"ae_dataset_z_not_multiple_of_8: {self.dataset.z}")
            if self.scheme is Scheme.AE_TX_BRNN_RX_SFFNN and self.eval_window % 2 == 0:
                raise ConfigError(f"sffnn_window_must_be_odd: {self.eval_window}")
        else:
            self.pam.validate()
            if self.pam.order != self.scheme.pam_order:
                raise ConfigError(f"pam_order_mismatch: scheme={self.scheme.value} order={self.pam.order}")
            if self.link.samples_per_block != self.pam.samples_per_symbol:
                raise ConfigError("link_block_length_differs_from_pam")
            if self.dataset.t % 2:
                raise ConfigError(f"pam_dataset_t_must_be_even: {self.dataset.t}")
            if self.scheme.receiver == "sffnn" and self.eval_window % 2 == 0:
                raise ConfigError(f"sffnn_window_must_be_odd: {self.eval_window}")
        if self.sweep.kind not in ("distance", "window"):
            raise ConfigError(f"unsupported_sweep_kind: {self.sweep.kind}")

    def with_overrides(self, *, seed: int | None = None, out_dir: str | None = None, threads: int | None = None) -> "ExperimentConfig":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if out_dir is not None:
            changes["out_dir"] = str(out_dir)
        if threads is not None:
            changes["threads"] = int(threads)
        return replace(self, **changes) if changes else self

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["scheme"] = self.scheme.value
        return data


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def link_from_dict(data: dict[str, Any], *, samples_per_block: int, oversampling: int) -> LinkConfig:
    return LinkConfig(
        distance_km=float(data.get("distance_km", 20.0)),
        beta2_ps2_per_km=float(data.get("beta2_ps2_per_km", -21.7)),
        dac_rate_hz=float(data.get("dac_rate_hz", 84e9)),
        oversampling=int(data.get("oversampling", oversampling)),
        lpf_cutoff_hz=_optional_float(data.get("lpf_cutoff_hz", 32e9)),
        launch_power_dbm=float(data.get("launch_power_dbm", 1.0)),
        noise_sigma=float(data.get("noise_sigma", 0.01)),
        dac_bits=_optional_int(data.get("dac_bits")),
        adc_bits=_optional_int(data.get("adc_bits")),
        samples_per_block=samples_per_block,
        remove_mean=bool(data.get("remove_mean", False)),
        target_mean_square=float(data.get("target_mean_square", 1.0)),
    )


def _samples_per_block(ae: dict[str, Any], link: dict[str, Any]) -> int:
    if ae.get("samples_per_block") is not None:
        return int(ae["samples_per_block"])
    # 42 Gb/s -> n=48, 84 Gb/s -> n=24 at 84 GSa/s x4
    bit_rate = float(ae.get("bit_rate_gbps", 42.0)) * 1e9
    m = int(ae.get("alphabet_size", 64))
    sample_rate = float(link.get("dac_rate_hz", 84e9)) * int(link.get("oversampling", 4))
    return max(1, round(sample_rate * math.log2(m) / bit_rate))


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    experiment = data.get("experiment") or {}
    link = data.get("link") or {}
    ae = data.get("autoencoder") or {}
    pam = data.get("pam") or {}
    schedule = data.get("schedule") or {}
    dataset = data.get("dataset") or {}
    evaluation = data.get("eval") or {}
    sweep = data.get("sweep") or {}
    paths = data.get("paths") or {}

    try:
        scheme = Scheme(str(experiment.get("scheme", Scheme.AE_SBRNN.value)))
    except ValueError as exc:
        raise ConfigError(f"unknown_scheme: {experiment.get('scheme')}") from exc

    try:
        ae_cfg = AeConfig(
            alphabet_size=int(ae.get("alphabet_size", 64)),
            samples_per_block=_samples_per_block(ae, link),
            estimation_window=int(ae.get("estimation_window", 10)),
            training_window=int(ae.get("training_window", 10)),
            guard_blocks=_optional_int(ae.get("guard_blocks")),
            sffnn_window=int(ae.get("sffnn_window", 11)),
        )
        pam_cfg = PamConfig(
            order=int(pam.get("order", scheme.pam_order or 2)),
            samples_per_symbol=int(pam.get("samples_per_symbol", 2)),
            rc_rolloff=float(pam.get("rc_rolloff", 0.25)),
            rc_span=int(pam.get("rc_span", 8)),
            window=int(pam.get("window", 61)),
            volterra_w1=int(pam.get("volterra_w1", 21)),
            sbrnn_window=int(pam.get("sbrnn_window", 61)),
            sbrnn_state_dim=int(pam.get("sbrnn_state_dim", 32)),
            volterra_rows=int(pam.get("volterra_rows", 1)),
        )
        if scheme.is_autoencoder:
            link_cfg = link_from_dict(link, samples_per_block=ae_cfg.samples_per_block, oversampling=4)
            default_z, default_t = 64, 512
        else:
            link_cfg = link_from_dict(link, samples_per_block=pam_cfg.samples_per_symbol, oversampling=1)
            default_z, default_t = 20, 8192
        sweep_defaults = SweepConfig()
        cfg = ExperimentConfig(
            scheme=scheme,
            seed=int(experiment.get("seed", 1)),
            out_dir=str(experiment.get("out_dir", "runs/default")),
            threads=int(experiment.get("threads", 1)),
            rng=str(experiment.get("rng", "pcg64")).lower(),
            link=link_cfg,
            autoencoder=ae_cfg,
            pam=pam_cfg,
            schedule=ScheduleConfig(
                steps=int(schedule.get("steps", 20000)),
                learning_rate=float(schedule.get("learning_rate", 1e-3)),
                beta1=float(schedule.get("beta1", 0.9)),
                beta2=float(schedule.get("beta2", 0.999)),
                eps=float(schedule.get("eps", 1e-8)),
                batch_size=int(schedule.get("batch_size", 32)),
                max_grad_norm=_optional_float(schedule.get("max_grad_norm")),
                log_every=int(schedule.get("log_every", 100)),
            ),
            dataset=DatasetConfig(
                z=int(dataset.get("z", default_z)),
                t=int(dataset.get("t", default_t)),
            ),
            eval=EvalConfig(
                window=_optional_int(evaluation.get("window")),
                mapping_restarts=int(evaluation.get("mapping_restarts", 16)),
                hdfec_threshold=float(evaluation.get("hdfec_threshold", 4.5e-3)),
            ),
            sweep=SweepConfig(
                kind=str(sweep.get("kind", "distance")),
                distances_km=tuple(float(d) for d in sweep.get("distances_km", sweep_defaults.distances_km)),
                windows=tuple(int(w) for w in sweep.get("windows", sweep_defaults.windows)),
            ),
            paths=PathsConfig(
                model=str(paths.get("model", "model.imdd")),
                train_dataset=str(paths.get("train_dataset", "train.imdd")),
                test_dataset=str(paths.get("test_dataset", "test.imdd")),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid_config_value: {exc}") from exc
    cfg.validate()
    return cfg


def load_experiment_config(path: str | Path = "config.yaml") -> ExperimentConfig:
    config_path = Path(path)
    data: dict[str, Any] = {}
    if config_path.exists():
        try:
            data = yaml.safe_load(config_path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid_yaml: {config_path}: {exc}") from exc
    elif str(path) != "config.yaml":
        raise ConfigError(f"config_not_found: {config_path}")
    if not isinstance(data, dict):
        raise ConfigError(f"config_root_must_be_mapping: {config_path}")

    overrides: dict[str, Any] = {}
    if _env("IMDD_SCHEME"):
        overrides.setdefault("experiment", {})["scheme"] = _env("IMDD_SCHEME")
    if _env("IMDD_SEED"):
        overrides.setdefault("experiment", {})["seed"] = _env("IMDD_SEED")
    if _env("IMDD_OUT_DIR"):
        overrides.setdefault("experiment", {})["out_dir"] = _env("IMDD_OUT_DIR")
    if _env("IMDD_THREADS"):
        overrides.setdefault("experiment", {})["threads"] = _env("IMDD_THREADS")

    if overrides:
        _deep_update(data, overrides)
    return config_from_dict(data)
