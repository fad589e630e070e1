"""Materialise the UCI tables used by the experiments as header-row CSVs.

Both tables are taken from PyPI wheels that bundle them:

* ``skorecard`` ships a 6,000-row, 4-feature sample of the UCI
  "default of credit card clients" table -> ``data/credit_sample.csv``
* ``responsibly`` ships the UCI Adult (Census-Income) train/test files
  -> ``data/census.csv`` (train and test concatenated)

If you have the full credit table as CSV (header row as in the UCI
release), pass it with ``--credit-full`` and it is copied to
``data/credit.csv``.

    python tools/fetch_data.py [--out data] [--credit-full path.csv]
"""

from __future__ import annotations

import argparse
import io
import shutil
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num", "marital-status", "occupation",
    "relationship", "race", "sex", "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]


def download(spec: str, dest: Path) -> Path:
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                    "-d", str(dest), spec], check=True, capture_output=True)
    name = spec.split("==")[0].replace("-", "_")
    return next(dest.glob(f"{name}-*.whl"))


def credit_sample(wheel: Path, out: Path) -> None:
    with zipfile.ZipFile(wheel) as z:
        inner = zipfile.ZipFile(io.BytesIO(z.read("skorecard/data/UCI_Credit_Card.zip")))
        raw = inner.read(inner.namelist()[0])
    df = pd.read_csv(io.BytesIO(raw))
    df["EDUCATION"] = df["EDUCATION"].astype(int)
    df["MARRIAGE"] = df["MARRIAGE"].astype(int)
    df.to_csv(out, index=False)
    print(f"wrote {out} ({len(df)} rows)")


def census(wheel: Path, out: Path) -> None:
    frames = []
    with zipfile.ZipFile(wheel) as z:
        for name in ("adult.data", "adult.test"):
            text = z.read(f"responsibly/dataset/adult/{name}").decode()
            lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("|")]
            frames.append(pd.read_csv(io.StringIO("\n".join(lines)), header=None, names=ADULT_COLUMNS,
                                      skipinitialspace=True, dtype=str))
    df = pd.concat(frames, ignore_index=True)
    df["income"] = df["income"].str.rstrip(".")
    df.to_csv(out, index=False)
    print(f"wrote {out} ({len(df)} rows)")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data"))
    ap.add_argument("--credit-full", help="existing CSV of the full credit table")
    ap.add_argument("--skip-census", action="store_true")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        credit_sample(download("skorecard==1.6.9", tmp), out / "credit_sample.csv")
        if not args.skip_census:
            census(download("responsibly==0.1.2", tmp), out / "census.csv")
    if args.credit_full:
        shutil.copy(args.credit_full, out / "credit.csv")
        print(f"copied {args.credit_full} -> {out / 'credit.csv'}")


if __name__ == "__main__":
    main()
