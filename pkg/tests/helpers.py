import csv
import json
from pathlib import Path

from ext.constants import JudgeKind, NoiseKind
from ext.judge import JudgeSpec
from ext.protocol import RunConfig

# Intensities 0..3: a -0.1 slope from 0.9 stays above the binary chance floor
SHORT_SNR_SCHEDULE = (3.0, 2.4, 1.8, 1.2, 0.6, 0.0)


def write_csv(path: Path, header, rows):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_jsonl(path: Path, records):
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record) + '\n')
    return path


def write_manifest(directory: Path, name: str, data_file: str, fmt: str, task_kind: str,
                   label_field: str, **extra) -> Path:
    manifest = {'id': name, 'path': data_file, 'format': fmt, 'task_kind': task_kind,
                'label_field': label_field, **extra}
    path = directory / f"{name}.json"
    path.write_text(json.dumps(manifest), encoding='utf-8')
    return path


def scripted_config(manifest, out_dir, base=0.9, slope=-0.1, jitter=0.02, seed=0, **overrides) -> RunConfig:
    """Single uncorrelated-noise run on the unit schedule with a scripted judge"""
    settings = dict(
        dataset=str(manifest),
        judge=JudgeSpec(JudgeKind.SIM_SCRIPTED, base_accuracy=base, slope_per_intensity=slope,
                        response_jitter=jitter),
        noise_kinds=(NoiseKind.UNCORRELATED,),
        snr_schedule_db=SHORT_SNR_SCHEDULE,
        repetitions=5,
        master_seed=seed,
        output_dir=str(out_dir),
    )
    settings.update(overrides)
    return RunConfig(**settings)
