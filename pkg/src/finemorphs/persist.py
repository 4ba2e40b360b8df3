"""Versioned on-disk model format.

A model file is a JSON key tree; dense numeric arrays are stored as
base64-encoded little-endian float64 bytes in C order together with their
shape, so a save/load round trip reproduces predictions bit-exactly.
Unknown future format versions are rejected.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .kernels import KernelConfig
from .preprocess import Standardization
from .sequence import AffineParams, AffineSpec, DiffeoSpec, ModelParams, SequenceSpec
from .trainer import TrainedModel, TrainReport

FORMAT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {
        "dtype": "float64",
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64, copy=True)
    return a.reshape(d["shape"])


def _encode_spec(spec: SequenceSpec) -> dict:
    mods = []
    for m in spec.modules:
        if isinstance(m, AffineSpec):
            mods.append({"kind": "affine", "in_dim": m.in_dim, "out_dim": m.out_dim,
                         "cost": m.cost_kind})
        else:
            mods.append({"kind": "diffeo", "dim": m.dim, "width": m.kernel.width,
                         "steps": m.steps})
    return {
        "name": spec.name, "modules": mods, "s": spec.s, "r": spec.r,
        "lambda": spec.lam, "d_x": spec.d_x, "d_y": spec.d_y,
        "n_subset": spec.n_subset,
    }


def _decode_spec(d: dict) -> SequenceSpec:
    mods = []
    for m in d["modules"]:
        if m["kind"] == "affine":
            mods.append(AffineSpec(m["in_dim"], m["out_dim"], m["cost"]))
        else:
            mods.append(DiffeoSpec(m["dim"], KernelConfig(m["width"], m["dim"]), m["steps"]))
    return SequenceSpec(
        modules=tuple(mods), s=d["s"], r=d["r"], lam=d["lambda"],
        d_x=d["d_x"], d_y=d["d_y"], n_subset=d["n_subset"], name=d.get("name", ""),
    )


def save_model(model: TrainedModel, path: str):
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": _encode_spec(model.spec),
        "standardization": {
            "mu_x": _encode_array(model.standardization.mu_x),
            "sigma_x": _encode_array(model.standardization.sigma_x),
            "mu_y": _encode_array(model.standardization.mu_y),
            "sigma_y": _encode_array(model.standardization.sigma_y),
            "s": model.standardization.s,
            "r": model.standardization.r,
            "std_ddof": model.standardization.std_ddof,
        },
        "sigma_sq": model.sigma_sq,
        "n_subset": model.n_subset,
        "rng_seed": model.rng_seed,
        "anchor_indices": [int(i) for i in model.anchor_indices],
        "params": {
            "affines": [
                {"M": _encode_array(a.M), "b": _encode_array(a.b)}
                for a in model.params.affines
            ],
            "controls": [_encode_array(c) for c in model.params.controls],
        },
        "caches": [_encode_array(c) for c in model.caches],
        "report": _report_summary(model.report),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _report_summary(report: TrainReport) -> dict:
    def rec(r):
        return {
            "loop": r.loop, "sigma_sq": r.sigma_sq, "train_mse": r.train_mse,
            "running": r.breakdown.running, "affine": r.breakdown.affine,
            "endpoint": r.breakdown.endpoint, "iterations": r.minimize_report.iterations,
            "status": r.minimize_report.status,
        }

    return {
        "sigma_mse_sq": report.sigma_mse_sq,
        "sigma_sq_init": report.sigma_sq_init,
        "target_mse": report.target_mse,
        "sigma_decay": report.sigma_decay,
        "loops": [rec(r) for r in report.loops],
        "final": rec(report.final) if report.final is not None else None,
    }


def load_model(path: str) -> TrainedModel:
    with open(path) as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(
            f"unsupported model format version {version!r}; this build reads version "
            f"{FORMAT_VERSION}"
        )
    st = doc["standardization"]
    standardization = Standardization(
        mu_x=_decode_array(st["mu_x"]),
        sigma_x=_decode_array(st["sigma_x"]),
        mu_y=_decode_array(st["mu_y"]),
        sigma_y=_decode_array(st["sigma_y"]),
        s=st["s"], r=st["r"], std_ddof=st["std_ddof"],
    )
    params = ModelParams(
        affines=[
            AffineParams(M=_decode_array(a["M"]), b=_decode_array(a["b"]))
            for a in doc["params"]["affines"]
        ],
        controls=[_decode_array(c) for c in doc["params"]["controls"]],
    )
    # The stored report is a plain summary tree, not live LoopRecords.
    report = doc.get("report", {})
    return TrainedModel(
        spec=_decode_spec(doc["spec"]),
        params=params,
        caches=[_decode_array(c) for c in doc["caches"]],
        standardization=standardization,
        sigma_sq=doc["sigma_sq"],
        n_subset=doc["n_subset"],
        anchor_indices=np.asarray(doc["anchor_indices"], dtype=int),
        report=report,
        rng_seed=doc["rng_seed"],
    )
