import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.schemas import ManifestFile, ManifestModel
from src.services.channel import DdChannel
from src.services.errors import DomainError
from src.services.orthogonality import AmbiguitySurface
from src.services.params_grid import DdGrid, SampledWaveform
from src.services.pulse import ProtoPulse
from src.services.spectrum import PsdCurve

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


def sha256_of(path: Path) -> str:
    """
    Content hash of a file.

    :param path: The file.
    :type path: Path
    :return: Hex digest.
    :rtype: str
    """
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ResultSet:
    """
    Files emitted by one experiment run, written below a single output directory.

    :param root: Output directory, created if missing.
    :type root: Path
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        """
        Write one CSV file and register it.

        :param name: File name relative to the output directory.
        :type name: str
        :param header: Column names.
        :type header: Sequence[str]
        :param rows: Data rows.
        :type rows: Iterable[Sequence]
        :return: Path of the written file.
        :rtype: Path
        """
        path = self.root / name
        if path in self.files:
            raise DomainError(f"result file {name} written twice in one run")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(value) for value in row])
        self.files.append(path)
        logger.info("wrote %s", path)
        return path

    def write_grid(self, name: str, grid: DdGrid) -> Path:
        M, N = grid.shape
        rows = ((m, n, grid.values[m, n].real, grid.values[m, n].imag) for m in range(M) for n in range(N))
        return self.write_csv(name, ("m", "n", "re", "im"), rows)

    def write_json(self, name: str, data: dict) -> Path:
        path = self.root / name
        if path in self.files:
            raise DomainError(f"result file {name} written twice in one run")
        path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.files.append(path)
        logger.info("wrote %s", path)
        return path

    def write_waveform(self, name: str, wf: SampledWaveform) -> Path:
        # index is the absolute sample index, t = index / fs
        rows = zip(range(wf.offset, wf.end_offset), wf.times, wf.samples.real, wf.samples.imag)
        return self.write_csv(name, ("index", "time_s", "re", "im"), rows)

    def write_pulse(self, name: str, pulse: ProtoPulse) -> Path:
        rows = zip(range(pulse.taps.size), pulse.times, pulse.taps)
        return self.write_csv(name, ("index", "time_s", "value"), rows)

    def write_psd(self, name: str, curve: PsdCurve, metadata: dict | None = None) -> Path:
        """
        Write a PSD curve and its ``.json`` metadata sidecar.

        :param name: CSV file name; the sidecar replaces the suffix with ``.json``.
        :type name: str
        :param curve: The curve.
        :type curve: PsdCurve
        :param metadata: Run context merged over the curve metadata (parameters, trials).
        :type metadata: dict | None
        :return: Path of the CSV file.
        :rtype: Path
        """
        rows = zip(curve.freqs, curve.normalized_db(), curve.power)
        path = self.write_csv(name, ("freq_hz", "power_db", "power"), rows)
        sidecar = {"kind": curve.kind, **curve.meta, **(metadata or {})}
        self.write_json(Path(name).with_suffix(".json").name, sidecar)
        return path

    def write_surface(self, name: str, surface: AmbiguitySurface) -> Path:
        mag_db = surface.magnitude_db()
        rows = (
            (m_bar, n_bar, mag_db[i, j])
            for i, m_bar in enumerate(surface.m_bar)
            for j, n_bar in enumerate(surface.n_bar)
        )
        return self.write_csv(name, ("m_bar", "n_bar", "mag_db"), rows)

    def write_channel(self, name: str, ch: DdChannel) -> Path:
        return self.write_csv(name, ("tap", "gain_re", "gain_im", "delay_s", "doppler_hz"), ch.rows())

    def entries(self) -> list[ManifestFile]:
        return [
            ManifestFile(path=path.name, sha256=sha256_of(path), bytes=path.stat().st_size) for path in self.files
        ]

    def write_manifest(self, manifest: ManifestModel) -> Path:
        """
        Write the JSON manifest next to the data files.

        :param manifest: Manifest listing every data file.
        :type manifest: ManifestModel
        :return: Path of the manifest.
        :rtype: Path
        """
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.files.append(path)
        logger.info("wrote %s", path)
        return path

    def cleanup(self):
        """Remove every file this run has written."""
        for path in self.files:
            path.unlink(missing_ok=True)
        logger.info("removed %d partial result files from %s", len(self.files), self.root)
        self.files.clear()


def read_grid(path: Path | str) -> DdGrid:
    """
    Read a grid written by ``ResultSet.write_grid``.

    :param path: CSV file with columns m, n, re, im.
    :type path: Path | str
    :return: The grid.
    :rtype: DdGrid
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DomainError(f"{path} holds no grid entries")
    M = max(int(row["m"]) for row in rows) + 1
    N = max(int(row["n"]) for row in rows) + 1
    values = np.zeros((M, N), dtype=complex)
    for row in rows:
        values[int(row["m"]), int(row["n"])] = float(row["re"]) + 1j * float(row["im"])
    return DdGrid(values)


def read_manifest(root: Path | str) -> ManifestModel:
    return ManifestModel.model_validate_json((Path(root) / MANIFEST_NAME).read_text(encoding="utf-8"))
