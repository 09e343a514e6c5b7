#!/usr/bin/env python3
"""Rebuild data/real/ from datasets bundled with scikit-learn, statsmodels and
pydataset (pip install pydataset). No network access is needed.

Every table is a classification task with at most 16 features. Tables with
more than 1000 rows are subsampled with a fixed seed so the suite stays small.
"""
import argparse
import json
from pathlib import Path

import numpy as np
import pandas as pd

MAX_ROWS = 1000


def sklearn_frame(loader, columns=None):
    bunch = loader(as_frame=True)
    df = bunch.frame.copy()
    if columns is not None:
        df = df[columns + ["target"]]
    return df


def iris():
    from sklearn.datasets import load_iris
    return sklearn_frame(load_iris), "target"


def wine():
    from sklearn.datasets import load_wine
    return sklearn_frame(load_wine), "target"


def breast_cancer():
    from sklearn.datasets import load_breast_cancer
    cols = [c for c in load_breast_cancer(as_frame=True).frame.columns if c.startswith("mean ")]
    return sklearn_frame(load_breast_cancer, cols), "target"


def digits_4x4():
    # 8x8 digits pooled to 4x4 so the table fits the 16-feature ceiling.
    from sklearn.datasets import load_digits
    d = load_digits()
    img = d.images.reshape(-1, 4, 2, 4, 2).sum(axis=(2, 4))
    df = pd.DataFrame(img.reshape(len(img), 16), columns=[f"px{i}" for i in range(16)])
    df["digit"] = d.target
    return df, "digit"


def anes96():
    import statsmodels.api as sm
    df = sm.datasets.anes96.load_pandas().data
    cols = ["popul", "TVnews", "selfLR", "ClinLR", "DoleLR", "PID", "age", "educ", "income", "vote"]
    return df[cols], "vote"


def pima():
    from pydataset import data
    df = pd.concat([data("Pima.tr"), data("Pima.te")], ignore_index=True)
    return df, "type"


def biopsy():
    from pydataset import data
    return data("biopsy").drop(columns=["ID"]), "class"


def crabs():
    from pydataset import data
    return data("crabs").drop(columns=["index"]), "sp"


def participation():
    from pydataset import data
    return data("Participation"), "lfp"


def mroz():
    from pydataset import data
    # Hours and wage of the wife are zero exactly when she does not work.
    return data("Mroz").drop(columns=["hoursw", "wagew"]), "work"


def chile():
    from pydataset import data
    return data("Chile"), "vote"


def fishing():
    from pydataset import data
    return data("Fishing"), "mode"


def birthwt():
    from pydataset import data
    # bwt is the birth weight that defines `low`.
    return data("birthwt").drop(columns=["bwt"]), "low"


TABLES = {
    "iris": iris,
    "wine": wine,
    "breast_cancer": breast_cancer,
    "digits_4x4": digits_4x4,
    "anes96": anes96,
    "pima": pima,
    "biopsy": biopsy,
    "crabs": crabs,
    "participation": participation,
    "mroz": mroz,
    "chile": chile,
    "fishing": fishing,
    "birthwt": birthwt,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "real")
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    entries = []
    for name, build in TABLES.items():
        df, target = build()
        df = df.reset_index(drop=True)
        if len(df) > MAX_ROWS:
            keep = np.sort(np.random.RandomState(0).choice(len(df), MAX_ROWS, replace=False))
            df = df.iloc[keep]
        features = [c for c in df.columns if c != target]
        assert len(features) <= 16, name
        assert 2 <= df[target].nunique() <= 10, name
        df = df[features + [target]]
        path = args.out / f"{name}.csv"
        df.to_csv(path, index=False, na_rep="NA", float_format="%.10g")
        entries.append({"name": name, "file": path.name, "target": target})
        print(f"{name}: {len(df)} rows, {len(features)} features, {df[target].nunique()} classes")

    with open(args.out / "suite.json", "w") as f:
        json.dump({"tables": entries}, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
