"""Rebuild a raw-layout Communities and Crime file from the EthicML wheel.

The UCI host is not always reachable. EthicML (PyPI) ships a processed copy
(``ethicml/data/csvs/crime.csv``) that keeps every fully observed column,
one-hot encodes ``state`` and shuffles the rows with
``DataFrame.sample(frac=1.0, random_state=888)``. This script undoes the
shuffle and one-hot encoding and writes the headerless 128-column layout,
with ``?`` in the columns EthicML removed (county, community and the
partially observed attributes). Loading the result with
:func:`sotl.dataio.load_crime_csv` gives the same table as the original file
except for its first record, which EthicML's own conversion consumed as a
header line.

Usage: python scripts/rebuild_crime_data.py ethicml-1.3.0-py3-none-any.whl data/communities.data
"""

import io
import sys
import zipfile

import numpy as np
import pandas as pd

from sotl.dataio import CRIME_COLUMNS


def rebuild(wheel_path: str, out_path: str) -> None:
    with zipfile.ZipFile(wheel_path) as zf:
        df = pd.read_csv(io.BytesIO(zf.read("ethicml/data/csvs/crime.csv")), dtype=str)
    perm = np.random.RandomState(888).permutation(len(df))
    df.index = perm
    df = df.sort_index()
    state_cols = [c for c in df.columns if c.startswith("state_")]
    codes = np.array([int(c.split("_")[1]) for c in state_cols])
    onehot = df[state_cols].astype(int).to_numpy()
    if not np.all(onehot.sum(axis=1) == 1):
        raise SystemExit("state one-hot columns are not exclusive")
    cols = {"state": codes[onehot.argmax(axis=1)].astype(str)}
    for name in CRIME_COLUMNS[1:]:
        cols[name] = df[name].to_numpy() if name in df.columns else "?"
    out = pd.DataFrame(cols)
    out.to_csv(out_path, header=False, index=False)
    print(f"wrote {len(out)} rows x {out.shape[1]} columns to {out_path}")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    rebuild(sys.argv[1], sys.argv[2])
