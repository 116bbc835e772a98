"""INI-backed experiment configuration.

One file drives every experiment: camera and observation noise, the
acoustic layout, both evaluation grids, trainer knobs, rotation angles
and endpoints.  Any subset may appear in a user file; the rest fall back
to defaults.  :func:`render` emits the *fully resolved* configuration —
every output CSV embeds it, and feeding those lines back in reproduces
the run.
"""

from __future__ import annotations

import configparser
import io

import numpy as np

from .acoustics import AcousticScene
from .anc import FxlmsConfig
from .geometry import CameraModel
from .scene import GridSpec, ObservationModel

#: Canonical value of every key.  Section and key order here is the
#: render order; values are strings exactly as they would appear on disk.
DEFAULTS = {
    "camera": {
        "fx": "600.0",
        "fy": "600.0",
        "cx": "320.0",
        "cy": "240.0",
        "width": "640",
        "height": "480",
        "distance": "0.8",
    },
    "observation": {
        "pixel_sigma": "1.0",
        "depth_sigma_at_1m": "0.002",
        "occlusion_threshold_deg": "25.0",
        "confidence_gate": "0.3",
        "noise": "on",
    },
    "acoustics": {
        "sample_rate": "8000",
        "speed_of_sound": "343.0",
        "band_low": "80.0",
        "band_high": "2000.0",
        "primary_source": "0.0 -1.5 0.0",
        "reference_mic": "0.0 -1.4 0.0",
        "secondary_left": "0.3 0.0 0.0",
        "secondary_right": "-0.3 0.0 0.0",
    },
    "accuracy_grid": {
        "nx": "7",
        "ny": "7",
        "nz": "3",
        "spacing": "0.025",
        "origin": "0.0 0.0 0.0",
        "repetitions": "100",
    },
    "anc_grid": {
        "nx": "5",
        "ny": "5",
        "nz": "2",
        "spacing": "0.025",
        "origin": "0.0 0.0 -0.0125",
        "initial_node": "2 2 1",
        "spectra_node": "1 1 0",
        "seeds": "5",
        "duration": "4.0",
    },
    "training": {
        "step_size": "0.005",
        "filter_taps": "256",
        "secondary_model_taps": "128",
        "block_size": "64",
        "leak": "0.0",
        "max_iterations": "240000",
        "convergence_window": "4000",
        "convergence_epsilon": "1e-4",
    },
    "rotation": {
        "accuracy_angles_deg": "15 30 45 60",
        "anc_angles_deg": "0 15 30 45 60",
        "node": "2 2 0",
    },
    "endpoints": {
        "ep": "127.0.0.1:7361",
        "frame_hz": "32.0",
        "poll_hz": "10.0",
        "serve_seconds": "10.0",
    },
}

#: Sections tolerated in a file but carrying no configuration: embedded
#: CSV headers include a [run] block recording the command and seed, and
#: stripping the comment prefix must yield a loadable file.
_METADATA_SECTIONS = {"run"}


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


def _merge(path: str | None) -> dict:
    raw = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is None:
        return raw
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        if section in _METADATA_SECTIONS:
            continue
        if section not in raw:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            if key not in raw[section]:
                raise ConfigError(f"unknown key {key} in [{section}]")
            raw[section][key] = value.strip()
    return raw


class Config:
    """Resolved configuration with typed accessors.

    The string map is the single source of truth; :meth:`render` writes
    it back out, and every typed view is built from it on demand.
    """

    def __init__(self, raw: dict):
        self.raw = raw
        # Fail fast: build every typed view once so bad values surface
        # at load time, not mid-experiment.
        try:
            self.camera()
            self.observation_model(0)
            self.acoustic_scene()
            self.accuracy_grid()
            self.anc_grid()
            self.fxlms()
            for name in ("initial_node", "spectra_node", "rotation_node"):
                getattr(self, name)
            _ = (self.accuracy_angles_deg, self.anc_angles_deg)
        except ConfigError:
            raise
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- scalar parsing ------------------------------------------------

    def _get(self, section: str, key: str) -> str:
        return self.raw[section][key]

    def _float(self, section: str, key: str) -> float:
        text = self._get(section, key)
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: {text!r} is not a number")

    def _int(self, section: str, key: str) -> int:
        text = self._get(section, key)
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: {text!r} is not an integer")

    def _vec(self, section: str, key: str, n: int = 3, integer: bool = False):
        text = self._get(section, key)
        parts = text.split()
        if len(parts) != n:
            raise ConfigError(f"[{section}] {key}: expected {n} values, got {text!r}")
        try:
            if integer:
                return tuple(int(p) for p in parts)
            return np.array([float(p) for p in parts])
        except ValueError:
            raise ConfigError(f"[{section}] {key}: {text!r} is not numeric")

    def _bool(self, section: str, key: str) -> bool:
        text = self._get(section, key).lower()
        if text in ("on", "true", "yes", "1"):
            return True
        if text in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"[{section}] {key}: {text!r} is not on/off")

    # -- typed views ---------------------------------------------------

    def camera(self) -> CameraModel:
        return CameraModel(
            fx=self._float("camera", "fx"),
            fy=self._float("camera", "fy"),
            cx=self._float("camera", "cx"),
            cy=self._float("camera", "cy"),
            width=self._int("camera", "width"),
            height=self._int("camera", "height"),
        )

    @property
    def camera_distance(self) -> float:
        return self._float("camera", "distance")

    @property
    def noise_enabled(self) -> bool:
        return self._bool("observation", "noise")

    @property
    def confidence_gate(self) -> float:
        return self._float("observation", "confidence_gate")

    def observation_model(self, seed: int) -> ObservationModel:
        """Observation noise model; sigmas collapse to zero when noise is off."""
        on = self.noise_enabled
        return ObservationModel(
            pixel_noise_sigma=self._float("observation", "pixel_sigma") if on else 0.0,
            depth_noise_sigma_at_1m=(
                self._float("observation", "depth_sigma_at_1m") if on else 0.0
            ),
            occlusion_yaw_threshold=np.deg2rad(
                self._float("observation", "occlusion_threshold_deg")
            ),
            seed=seed,
        )

    def acoustic_scene(self) -> AcousticScene:
        return AcousticScene(
            primary_source=self._vec("acoustics", "primary_source"),
            secondary_sources=[
                self._vec("acoustics", "secondary_left"),
                self._vec("acoustics", "secondary_right"),
            ],
            reference_mic=self._vec("acoustics", "reference_mic"),
            sample_rate=self._int("acoustics", "sample_rate"),
            speed_of_sound=self._float("acoustics", "speed_of_sound"),
        )

    @property
    def band(self) -> tuple:
        lo = self._float("acoustics", "band_low")
        hi = self._float("acoustics", "band_high")
        if not 0 < lo < hi:
            raise ConfigError(f"noise band ({lo}, {hi}) is not ascending-positive")
        return (lo, hi)

    def _grid(self, section: str) -> GridSpec:
        return GridSpec(
            origin=self._vec(section, "origin"),
            spacing=self._float(section, "spacing"),
            nx=self._int(section, "nx"),
            ny=self._int(section, "ny"),
            nz=self._int(section, "nz"),
        )

    def accuracy_grid(self) -> GridSpec:
        return self._grid("accuracy_grid")

    def anc_grid(self) -> GridSpec:
        return self._grid("anc_grid")

    @property
    def repetitions(self) -> int:
        return self._int("accuracy_grid", "repetitions")

    @property
    def nr_seeds(self) -> int:
        return self._int("anc_grid", "seeds")

    @property
    def control_duration(self) -> float:
        return self._float("anc_grid", "duration")

    def _node(self, section: str, key: str, grid: GridSpec) -> tuple:
        node = self._vec(section, key, integer=True)
        if not (0 <= node[0] < grid.nx and 0 <= node[1] < grid.ny and 0 <= node[2] < grid.nz):
            raise ConfigError(f"[{section}] {key}: node {node} outside grid")
        return node

    @property
    def initial_node(self) -> tuple:
        return self._node("anc_grid", "initial_node", self.anc_grid())

    @property
    def spectra_node(self) -> tuple:
        return self._node("anc_grid", "spectra_node", self.anc_grid())

    @property
    def rotation_node(self) -> tuple:
        return self._node("rotation", "node", self.anc_grid())

    def fxlms(self) -> FxlmsConfig:
        return FxlmsConfig(
            step_size=self._float("training", "step_size"),
            filter_taps=self._int("training", "filter_taps"),
            secondary_model_taps=self._int("training", "secondary_model_taps"),
            block_size=self._int("training", "block_size"),
            leak=self._float("training", "leak"),
            max_iterations=self._int("training", "max_iterations"),
            convergence_window=self._int("training", "convergence_window"),
            convergence_epsilon=self._float("training", "convergence_epsilon"),
            band=self.band,
        )

    def _angles(self, key: str) -> tuple:
        text = self._get("rotation", key)
        try:
            angles = tuple(float(p) for p in text.split())
        except ValueError:
            raise ConfigError(f"[rotation] {key}: {text!r} is not numeric")
        if not angles or any(b <= a for a, b in zip(angles, angles[1:])):
            raise ConfigError(f"[rotation] {key} must be strictly ascending")
        return angles

    @property
    def accuracy_angles_deg(self) -> tuple:
        return self._angles("accuracy_angles_deg")

    @property
    def anc_angles_deg(self) -> tuple:
        return self._angles("anc_angles_deg")

    @property
    def ep_endpoint(self) -> str:
        return self._get("endpoints", "ep")

    @property
    def frame_hz(self) -> float:
        return self._float("endpoints", "frame_hz")

    @property
    def poll_hz(self) -> float:
        return self._float("endpoints", "poll_hz")

    @property
    def serve_seconds(self) -> float:
        return self._float("endpoints", "serve_seconds")

    # -- rewriting -----------------------------------------------------

    def with_value(self, section: str, key: str, value: str) -> "Config":
        return self.with_values([(section, key, value)])

    def with_values(self, updates) -> "Config":
        """Apply several (section, key, value) changes, validating once at
        the end — interdependent keys (grid sizes and node indices, say)
        may move together.
        """
        raw = {s: dict(kv) for s, kv in self.raw.items()}
        for section, key, value in updates:
            if section not in raw or key not in raw[section]:
                raise ConfigError(f"unknown key [{section}] {key}")
            raw[section][key] = value
        return Config(raw)

    def with_noise(self, enabled: bool) -> "Config":
        return self.with_value("observation", "noise", "on" if enabled else "off")

    def render(self, run: dict | None = None) -> str:
        """The full configuration as INI text, optionally with a [run]
        metadata block (command, seed, ...) that the loader ignores.
        """
        out = io.StringIO()
        if run:
            out.write("[run]\n")
            for key, value in run.items():
                out.write(f"{key} = {value}\n")
            out.write("\n")
        for section, kv in self.raw.items():
            out.write(f"[{section}]\n")
            for key, value in kv.items():
                out.write(f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()


def default_config() -> Config:
    return Config({s: dict(kv) for s, kv in DEFAULTS.items()})


def load_config(path: str | None) -> Config:
    """Defaults overlaid with ``path`` (when given); unknown keys are errors."""
    return Config(_merge(path))
