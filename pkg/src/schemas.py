import math
from fractions import Fraction
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

Experiment = Literal["waveform", "psd", "ambiguity", "gram", "ber"]
System = Literal["analog", "digital", "otfs"]
Detector = Literal["mp", "lmmse"]

PRESETS = {
    "desk": {"M": 32, "N": 16, "Q": 5, "Ns": 8, "beta": 0.15, "T": 1 / 15000},
    "full": {"M": 128, "N": 32, "Q": 20, "Ns": 8, "beta": 0.15, "T": 1 / 15000},
}

EVA_MAX_DELAY_S = 2510e-9


def q_for_ta(ta_over_t: float, M: int) -> int:
    """
    Smallest sub-pulse half-span Q whose duration 2Q·T/M reaches the requested Ta.

    :param ta_over_t: Sub-pulse duration in multiples of T.
    :type ta_over_t: float
    :param M: Number of delay bins.
    :type M: int
    :return: The half-span in delay bins.
    :rtype: int
    """
    return max(1, math.ceil(ta_over_t * M / 2 - 1e-9))


class OddmParams(BaseModel):
    M: int = Field(default=128, ge=1)
    N: int = Field(default=32, ge=2)
    T: float = Field(default=1 / 15000, gt=0)
    Q: int = Field(default=20, ge=1)
    beta: float = Field(default=0.15, ge=0.0, le=1.0)
    Ns: int = Field(default=8, ge=4)
    Lcp: int = Field(default=0, ge=0)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def frame_is_consistent(self):
        if self.N % 2:
            raise ValueError("N must be even")
        if self.Lcp >= self.M:
            raise ValueError("Lcp must be smaller than M")
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "OddmParams":
        """
        Build parameters from a named preset.

        :param name: ``desk`` or ``full``.
        :type name: str
        :param overrides: Fields replacing the preset values.
        :return: Validated parameters.
        :rtype: OddmParams
        """
        return cls(**{**PRESETS[name], **overrides})

    def replace(self, **changes) -> "OddmParams":
        return OddmParams(**{**self.model_dump(), **changes})

    def with_ta(self, ta_over_t: float) -> "OddmParams":
        return self.replace(Q=q_for_ta(ta_over_t, self.M))

    @property
    def delay_res(self) -> float:
        return self.T / self.M

    @property
    def doppler_res(self) -> float:
        return 1.0 / (self.N * self.T)

    @property
    def fs(self) -> float:
        return self.Ns * self.M / self.T

    @property
    def dt(self) -> float:
        return self.T / (self.M * self.Ns)

    @property
    def ta(self) -> float:
        return 2 * self.Q * self.T / self.M

    @property
    def d(self) -> int:
        return -(-2 * self.Q // self.M)

    @property
    def tcp(self) -> float:
        return self.Lcp * self.delay_res

    @property
    def samples_per_symbol(self) -> int:
        return self.M * self.Ns

    @property
    def pulse_len(self) -> int:
        return 2 * self.Q * self.Ns + 1

    def derived(self) -> dict:
        return {
            "delay_res_s": self.delay_res,
            "doppler_res_hz": self.doppler_res,
            "fs_hz": self.fs,
            "ta_s": self.ta,
            "ta_over_t": self.ta / self.T,
            "d": self.d,
            "tcp_s": self.tcp,
            "samples_per_delay_bin": self.Ns,
            "samples_per_symbol": self.samples_per_symbol,
            "pulse_len": self.pulse_len,
        }


def _split_list(value):
    if isinstance(value, str):
        return tuple(item.strip() for item in value.split(",") if item.strip())
    return value


class ExperimentConfig(BaseModel):
    experiment: Experiment = "psd"
    preset: Literal["desk", "full"] = "full"
    M: Optional[int] = Field(None, ge=1)
    N: Optional[int] = Field(None, ge=2)
    T: Optional[float] = Field(None, gt=0)
    Q: Optional[int] = Field(None, ge=1)
    beta: Optional[float] = Field(None, ge=0.0, le=1.0)
    Ns: Optional[int] = Field(None, ge=4)
    Lcp: Optional[int] = Field(None, ge=0)
    systems: tuple[System, ...] = Field(("analog", "digital", "otfs"), min_length=1)
    ta_values: Optional[tuple[float, ...]] = Field(None, min_length=1)
    ebn0_db: tuple[float, ...] = Field((0.0, 4.0, 8.0, 12.0), min_length=1)
    trials: int = Field(200, ge=1)
    bits_per_point: int = Field(200_000, ge=1)
    seed: int = Field(1, ge=0, lt=2**64)
    channel: Literal["eva", "fixed"] = "eva"
    fc_hz: float = Field(5e9, gt=0)
    speed_kmh: float = Field(500.0, gt=0)
    detectors: tuple[Detector, ...] = Field(("mp",), min_length=1)
    thresholds_db: tuple[float, ...] = Field((3.0, 7.0, 10.0, 20.0, 30.0, 40.0), min_length=1)
    points_per_bin: Optional[int] = Field(None, ge=1)
    fft_len: Optional[int] = Field(None, ge=1)
    anchors: Optional[int] = Field(None, ge=1)
    output_dir: str = "results"

    model_config = ConfigDict(extra="forbid", frozen=True)

    @field_validator("systems", "ta_values", "ebn0_db", "detectors", "thresholds_db", mode="before")
    @classmethod
    def comma_separated(cls, value):
        return _split_list(value)

    @field_validator("T", mode="before")
    @classmethod
    def fraction_allowed(cls, value):
        if isinstance(value, str) and "/" in value:
            try:
                return float(Fraction(value.replace(" ", "")))
            except ZeroDivisionError:
                raise ValueError("T must be a positive duration") from None
        return value

    @field_validator("ta_values")
    @classmethod
    def positive_durations(cls, value):
        if value is not None and any(ta <= 0 for ta in value):
            raise ValueError("sub-pulse durations must be positive multiples of T")
        return value

    @model_validator(mode="after")
    def params_are_valid(self):
        try:
            self.base_params()
        except ValidationError as exc:
            raise ValueError(
                "; ".join(f"{'.'.join(map(str, e['loc'])) or 'params'}: {e['msg']}" for e in exc.errors())
            ) from None
        return self

    def default_lcp(self) -> int:
        M = self.M or PRESETS[self.preset]["M"]
        divisor = 8 if self.experiment == "ber" else 10
        return min(M - 1, math.ceil(M / divisor))

    def base_params(self) -> OddmParams:
        """
        Resolve the preset and explicit fields into frame parameters.

        :return: Parameters at the configured (or preset) Q.
        :rtype: OddmParams
        """
        fields = dict(PRESETS[self.preset])
        for name in ("M", "N", "T", "Q", "beta", "Ns"):
            value = getattr(self, name)
            if value is not None:
                fields[name] = value
        fields["Lcp"] = self.Lcp if self.Lcp is not None else self.default_lcp()
        return OddmParams(**fields)

    def params_sweep(self) -> list[OddmParams]:
        base = self.base_params()
        if not self.ta_values:
            return [base]
        return [base.with_ta(ta) for ta in self.ta_values]


class ManifestFile(BaseModel):
    path: str
    sha256: str
    bytes: int


class ManifestModel(BaseModel):
    experiment: Experiment
    version: str
    seed: int
    config: dict
    derived: dict
    warnings: list[str] = []
    conventions: dict[str, str] = {}
    wall_time_s: float
    files: list[ManifestFile]


class ExperimentRequest(BaseModel):
    settings: dict[str, str | int | float | list[str | int | float]] = {}
    output_dir: Optional[str] = Field(None, max_length=250)


class ExperimentInfo(BaseModel):
    name: Experiment
    description: str


class DerivedParamsResponse(BaseModel):
    params: OddmParams
    delay_res_s: float
    doppler_res_hz: float
    fs_hz: float
    ta_s: float
    ta_over_t: float
    d: int
    tcp_s: float
    samples_per_delay_bin: int
    samples_per_symbol: int
    pulse_len: int
