"""Rebuild datasets/abalone.csv and datasets/concrete.csv.

Both UCI datasets are redistributed inside PyPI wheels, which is what this
script downloads (``pip download``), so it works wherever a package index is
reachable:

* Abalone (UCI id 1): ``scikit-lego==0.9.10``, ``sklego/data/abalone.zip``.
* Concrete Compressive Strength (UCI id 165): ``rdatasets==0.2.10``,
  ``rdatasets/_data/modeldata/concrete.pkl.compress`` (an lzma-compressed
  pandas pickle; needs pandas).

Values are rewritten with ``%.6g`` so float noise such as
0.10099999999999999 is stored as 0.101. The resulting files are checked
against the MD5 sums below.
"""

import argparse
import hashlib
import io
import lzma
import pickle
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd

MD5 = {
    "abalone.csv": "97b2e1b08f7b576c35a5206fb2f2aea3",
    "concrete.csv": "b2384d8a0b69bac181b75e7fcd48ba35",
}


def _wheel(requirement, tmp):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:", "-d", tmp, requirement],
        check=True,
    )
    name = requirement.split("==")[0].replace("-", "_")
    return zipfile.ZipFile(next(Path(tmp).glob(f"{name}-*.whl")))


def abalone(tmp) -> pd.DataFrame:
    outer = _wheel("scikit-lego==0.9.10", tmp)
    inner = zipfile.ZipFile(io.BytesIO(outer.read("sklego/data/abalone.zip")))
    return pd.read_csv(io.BytesIO(inner.read(inner.namelist()[0])))


def concrete(tmp) -> pd.DataFrame:
    whl = _wheel("rdatasets==0.2.10", tmp)
    df = pickle.loads(lzma.decompress(whl.read("rdatasets/_data/modeldata/concrete.pkl.compress")))
    return df.drop(columns=[c for c in df.columns if c.lower() == "rownames"])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "datasets"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        for fname, build in (("abalone.csv", abalone), ("concrete.csv", concrete)):
            path = out / fname
            build(tmp).to_csv(path, index=False, float_format="%.6g", lineterminator="\n")
            digest = hashlib.md5(path.read_bytes()).hexdigest()
            status = "ok" if digest == MD5[fname] else f"MD5 MISMATCH (expected {MD5[fname]})"
            print(f"{path}: {digest} {status}")


if __name__ == "__main__":
    main()
