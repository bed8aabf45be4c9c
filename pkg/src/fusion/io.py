"""Dataset CSV files with a JSON sidecar."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .data import AssignmentProbs, Dataset
from .discrepancy import dataset_mmd, marginal_treatment_tv

FLOAT_FORMAT = "%.17g"


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.name + ".json")


def dataset_frame(data: Dataset) -> pd.DataFrame:
    cols = {f"x_{j}": data.X[:, j] for j in range(data.d)}
    cols["t"] = data.T
    cols["y"] = data.Y
    cols["source"] = np.where(data.is_rct, "rct", "obs")
    probs = data.prob_rows()
    for k in range(probs.shape[1]):
        cols[f"p_{k}"] = probs[:, k]
    if data.strata is not None:
        cols["stratum"] = data.strata
    if data.tau_true is not None:
        cols["tau_true"] = data.tau_true
    if data.mu0 is not None:
        cols["mu0"] = data.mu0
    if data.Z_latent is not None:
        for j in range(data.Z_latent.shape[1]):
            cols[f"z_{j}"] = data.Z_latent[:, j]
    if data.U is not None:
        cols["u"] = data.U
    if data.structural is not None:
        cols["structural"] = data.structural.astype(int)
    return pd.DataFrame(cols)


def summary(data: Dataset) -> dict:
    """n per source, arm frequencies per source, marginal TV and raw-covariate MMD."""
    rct, obs = data.rct(), data.obs()
    tv = marginal_treatment_tv(rct, obs)
    return {
        "n_rct": rct.n, "n_obs": obs.n,
        "arm_freq_rct": tv.p_rct.tolist(), "arm_freq_obs": tv.p_obs.tolist(),
        "marginal_tv": tv.tv, "raw_mmd": dataset_mmd(data, max_rows=2000).value,
    }


def save_dataset(data: Dataset, path, extra: dict | None = None) -> dict:
    """Write ``path`` (CSV) and ``path.json`` (sidecar). Returns the sidecar dict."""
    path = Path(path)
    dataset_frame(data).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    side = {"probs": None if data.probs is None else data.probs.p.tolist(),
            "n_features": data.d, "summary": summary(data),
            "sha256": hashlib.sha256(path.read_bytes()).hexdigest()}
    if "config" in data.meta:
        side["generator_config"] = data.meta["config"]
    if "weights" in data.meta:
        side["weights"] = {k: np.asarray(v).tolist() for k, v in data.meta["weights"].items()}
        side["layout"] = {k: data.meta[k] for k in ("n_cont", "n_cat", "L")}
    side.update(extra or {})
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return side


def load_dataset(path) -> Dataset:
    path = Path(path)
    df = pd.read_csv(path, float_precision="round_trip")
    xcols = sorted((c for c in df.columns if c.startswith("x_")), key=lambda c: int(c[2:]))
    side = json.loads(sidecar_path(path).read_text()) if sidecar_path(path).exists() else {}
    probs = side.get("probs")
    if probs is None:
        pcols = sorted((c for c in df.columns if c.startswith("p_")), key=lambda c: int(c[2:]))
        rct_rows = df[df["source"] == "rct"]
        if pcols and len(rct_rows):
            probs = rct_rows[pcols].iloc[0].to_numpy()
    zcols = sorted((c for c in df.columns if c.startswith("z_")), key=lambda c: int(c[2:]))

    def opt(col, dtype=float):
        return df[col].to_numpy(dtype) if col in df.columns else None

    structural = opt("structural", int)
    meta = {"source_file": str(path)}
    X = df[xcols].to_numpy(float)
    X_cat = None
    if "weights" in side and zcols:
        lay = side["layout"]
        block = X[:, lay["n_cont"]:].reshape(len(df), lay["n_cat"], lay["L"])
        X_cat = block.argmax(axis=2)
        meta.update(lay, synthetic=True, config=side.get("generator_config"),
                    weights={k: np.asarray(v) for k, v in side["weights"].items()})
    return Dataset(
        X=X, T=df["t"].to_numpy(int), Y=df["y"].to_numpy(float),
        is_rct=(df["source"] == "rct").to_numpy(),
        probs=None if probs is None else AssignmentProbs(np.asarray(probs, dtype=float)),
        strata=opt("stratum", int), tau_true=opt("tau_true"), mu0=opt("mu0"),
        Z_latent=df[zcols].to_numpy(float) if zcols else None, U=opt("u"),
        X_cat=X_cat, structural=None if structural is None else structural.astype(bool),
        meta=meta)
