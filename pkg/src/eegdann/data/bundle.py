"""On-disk EEG bundle: ``manifest.json`` plus one raw float32 file per trial.

Raw files hold little-endian IEEE-754 float32 values, channel-major (every
sample of channel 0, then channel 1, ...). Manifest keys::

    format_version   1
    channel_names    32 names in storage order
    subjects         [{id, trials: [{signal_file, sampling_rate_hz, n_channels,
                      n_samples, baseline_samples, valence, arousal, sha256?}]}]
    region_map       optional [{name, channels: [int, ...]}] override

Converting DEAP: for each ``sXX.dat`` of the preprocessed Python release,
take ``data[trial, :32, :]`` (already 128 Hz, 3 s baseline then 60 s of
stimulus, so ``baseline_samples = 384``), write it with
``np.asarray(x, '<f4').tofile(path)`` and copy ``labels[trial, 0]`` /
``labels[trial, 1]`` as valence / arousal. The stored channel order is the
Geneva order listed in :data:`regions.DEAP_CHANNELS`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .records import TrialRecord
from .regions import DEAP_CHANNELS, RegionMap

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class BundleError(ValueError):
    pass


@dataclass
class Bundle:
    trials: list
    channel_names: tuple = DEAP_CHANNELS
    region_map: Optional[RegionMap] = None

    @property
    def subjects(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.trials:
            seen.setdefault(t.subject_id, None)
        return list(seen)

    def by_subject(self) -> dict[str, list]:
        out: dict[str, list] = {}
        for t in self.trials:
            out.setdefault(t.subject_id, []).append(t)
        return out


def save_bundle(path: Union[str, Path], bundle: Bundle) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    subjects = []
    for sid, trials in bundle.by_subject().items():
        entries = []
        for t in trials:
            rel = f"{sid}/trial{t.trial_index:03d}.f32"
            (root / sid).mkdir(exist_ok=True)
            raw = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
            (root / rel).write_bytes(raw)
            entries.append({
                "signal_file": rel,
                "sampling_rate_hz": int(t.sampling_rate),
                "n_channels": int(t.n_channels),
                "n_samples": int(t.n_samples),
                "baseline_samples": int(t.baseline_samples),
                "valence": float(t.valence),
                "arousal": float(t.arousal),
                "sha256": hashlib.sha256(raw).hexdigest(),
            })
        subjects.append({"id": sid, "trials": entries})
    manifest = {"format_version": FORMAT_VERSION, "channel_names": list(bundle.channel_names),
                "subjects": subjects}
    if bundle.region_map is not None:
        manifest["region_map"] = bundle.region_map.to_json()
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return root


def load_bundle(path: Union[str, Path]) -> Bundle:
    root = Path(path)
    try:
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise BundleError(f"no {MANIFEST} in {root}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleError(f"unknown manifest format_version {version!r}")
    names = tuple(manifest["channel_names"])
    trials = []
    for subject in manifest["subjects"]:
        for i, entry in enumerate(subject["trials"]):
            file = root / entry["signal_file"]
            n_ch, n_s = int(entry["n_channels"]), int(entry["n_samples"])
            if n_ch != len(names):
                raise BundleError(f"{entry['signal_file']}: {n_ch} channels but {len(names)} channel names")
            raw = file.read_bytes()
            expected = 4 * n_ch * n_s
            if len(raw) != expected:
                raise BundleError(
                    f"{entry['signal_file']}: expected {expected} bytes "
                    f"({n_ch} x {n_s} float32), found {len(raw)}"
                )
            digest = entry.get("sha256")
            if digest is not None and hashlib.sha256(raw).hexdigest() != digest:
                raise BundleError(f"{entry['signal_file']}: checksum mismatch")
            data = np.frombuffer(raw, dtype="<f4").reshape(n_ch, n_s).astype(np.float32)
            index = int(Path(entry["signal_file"]).stem.removeprefix("trial")) \
                if Path(entry["signal_file"]).stem.startswith("trial") else i
            trials.append(TrialRecord(
                subject_id=str(subject["id"]), trial_index=index, data=data,
                sampling_rate=int(entry["sampling_rate_hz"]), baseline_samples=int(entry["baseline_samples"]),
                valence=float(entry["valence"]), arousal=float(entry["arousal"]),
            ))
    region_map = RegionMap.from_json(manifest["region_map"]) if "region_map" in manifest else None
    return Bundle(trials, names, region_map)
