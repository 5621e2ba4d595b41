#!/usr/bin/env python3
"""Materialize UCI regression datasets as plain CSV files.

The datasets are pulled from PyPI wheels that bundle them (the UCI archive
itself is often unreachable from build machines). Every output file has a
header row and numeric cells only; categorical columns are one-hot encoded
and free-text columns are dropped.

    python3 scripts/fetch_uci.py [--out data/uci]
"""

import argparse
import glob
import gzip
import io
import lzma
import os
import pickle
import subprocess
import sys
import tempfile
import zipfile

import pandas as pd

WHEELS = {
    "dataprep": "dataprep==0.4.5",
    "mlxtend": "mlxtend==0.24.0",
    "rdatasets": "rdatasets==0.2.10",
    "scikit_lego": "scikit-lego==0.9.10",
}

BOSTON_COLUMNS = [
    "crim", "zn", "indus", "chas", "nox", "rm", "age",
    "dis", "rad", "tax", "ptratio", "b", "lstat", "medv",
]


def download(workdir):
    for spec in WHEELS.values():
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", spec, "-d", workdir],
            check=True,
        )


def wheel(workdir, prefix):
    matches = glob.glob(os.path.join(workdir, prefix + "-*.whl"))
    if not matches:
        raise SystemExit(f"wheel for {prefix} not found in {workdir}")
    return zipfile.ZipFile(matches[0])


def load_all(workdir):
    out = {}

    wine = pd.read_csv(wheel(workdir, "dataprep").open("dataprep/datasets/data/wine-quality-red.csv"))
    out["wine"] = wine.rename(columns={"class": "quality"})

    boston = pd.read_csv(
        wheel(workdir, "mlxtend").open("mlxtend/data/data/boston_housing.csv"),
        header=None, names=BOSTON_COLUMNS,
    )
    out["boston"] = boston

    auto = pd.read_csv(
        gzip.open(wheel(workdir, "mlxtend").open("mlxtend/data/data/autompg.csv.gz")),
        header=None,
        names=["cylinders", "displacement", "horsepower", "weight",
               "acceleration", "model_year", "origin", "name", "mpg"],
    )
    out["autompg"] = auto.drop(columns=["name"])

    raw = wheel(workdir, "rdatasets").read("rdatasets/_data/modeldata/concrete.pkl.compress")
    concrete = pickle.loads(lzma.decompress(raw))
    out["concrete"] = pd.DataFrame(concrete).drop(columns=["rownames"], errors="ignore")

    inner = zipfile.ZipFile(io.BytesIO(wheel(workdir, "scikit_lego").read("sklego/data/abalone.zip")))
    abalone = pd.read_csv(inner.open(inner.namelist()[0]))
    sex = pd.get_dummies(abalone.pop("sex"), prefix="sex").astype(float)
    out["abalone"] = pd.concat([sex, abalone], axis=1)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "uci"))
    ap.add_argument("--wheels", help="directory with already-downloaded wheels")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        workdir = args.wheels or tmp
        if not args.wheels:
            download(workdir)
        for name, frame in load_all(workdir).items():
            frame = frame.apply(pd.to_numeric, errors="coerce").dropna()
            path = os.path.join(args.out, name + ".csv")
            frame.to_csv(path, index=False, float_format="%.10g")
            print(f"{name}: {frame.shape[0]} rows x {frame.shape[1]} cols -> {path}")


if __name__ == "__main__":
    main()
