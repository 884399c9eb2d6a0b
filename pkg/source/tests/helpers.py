from __future__ import annotations

import subprocess
import sys
from pathlib import Path

_PROTO_READY = False


def _resolve_layout() -> tuple[Path, Path, Path]:
    for parent in Path(__file__).resolve().parents:
        repo_script = parent / "source" / "scripts" / "generate-proto.py"
        if repo_script.exists():
            return parent, parent / "source", repo_script
        flat_script = parent / "scripts" / "generate-proto.py"
        if flat_script.exists() and (parent / "core").exists():
            return parent, parent, flat_script
    raise RuntimeError("could not locate generate-proto.py")


def bootstrap_tests() -> None:
    global _PROTO_READY
    _base_dir, package_dir, proto_script = _resolve_layout()
    if str(package_dir) not in sys.path:
        sys.path.insert(0, str(package_dir))

    if _PROTO_READY:
        return
    subprocess.run([sys.executable, str(proto_script)], check=True)
    _PROTO_READY = True


# --- numerics -------------------------------------------------------------------


def numeric_grad(fn, values, eps: float = 1e-5):
    """Central finite differences of a scalar function of one array."""
    import numpy as np

    values = np.array(values, dtype=np.float64)
    grad = np.zeros_like(values)
    flat = values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        up = fn(values)
        flat[i] = saved - eps
        down = fn(values)
        flat[i] = saved
        out[i] = (up - down) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric) -> float:
    import numpy as np

    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


# --- tiny models and data -------------------------------------------------------

TINY_EMBEDDING = 16
TINY_SCALE = 1.0 / 32


def tiny_n1_spec(num_classes: int = 3, embedding_dim: int = TINY_EMBEDDING):
    from core.models import N1Spec

    return N1Spec(
        num_classes=num_classes,
        f1_kernel_w=embedding_dim // 16,
        embedding_dim=embedding_dim,
        width_scale=TINY_SCALE,
    )


def tiny_n2_spec(num_classes: int = 3, input_dim: int = 8, input_view: str = "view2"):
    from core.models import N2Spec

    return N2Spec(num_classes=num_classes, input_dim=input_dim, width_scale=1.0 / 128, input_view=input_view)


def tiny_options(**changes):
    from core.models import SyntheticOptions

    values = dict(embedding_dim=TINY_EMBEDDING, min_segments=2, max_segments=4, n_prototypes=8, min_angle_deg=45.0)
    values.update(changes)
    return SyntheticOptions(**values)


def tiny_dataset(n: int = 12, num_classes: int = 3, seed: int = 0, fp_rates=None, split: str = "train"):
    from core.models import NoiseModel
    from services.data_service import generate_synthetic

    noise = NoiseModel(fp_rates=tuple(fp_rates)) if fp_rates is not None else NoiseModel.clean(num_classes)
    return generate_synthetic(n, num_classes, noise, seed, options=tiny_options(), split=split)


def with_random_view2(ds, dim: int = 8, seed: int = 0):
    import dataclasses

    import numpy as np

    from core.models import Dataset

    rng = np.random.default_rng(seed)
    recordings = tuple(dataclasses.replace(rec, view2=rng.random(dim)) for rec in ds.recordings)
    return Dataset(recordings=recordings, class_names=ds.class_names, split=ds.split)


def tiny_config(output_dir: Path, **changes):
    from core.models import (
        ExperimentConfig,
        NetworkOverrides,
        SyntheticDataConfig,
        TrainConfig,
    )

    values = dict(
        source="synthetic",
        synthetic=SyntheticDataConfig(
            num_classes=3,
            n_train=20,
            n_test=10,
            n_pretrain=12,
            pretrain_classes=4,
            noisy_class_fraction=0.5,
            fp_rate_low=0.3,
            fp_rate_high=0.5,
            options=tiny_options(),
        ),
        manifests=None,
        networks=NetworkOverrides(width_scale=TINY_SCALE),
        train=TrainConfig(n_epochs=1, batch_size=8),
        pretrain_epochs=1,
        alpha_grid=(0.0, 1.0),
        seeds=(0,),
        validation_fraction=0.25,
        output_dir=Path(output_dir),
        ledger_db=Path(output_dir) / "ledger.db",
        workers=1,
    )
    values.update(changes)
    return ExperimentConfig(**values)
