"""Build the nominal weekly-change fixture with a prescribed covariance spectrum.

Rows are 154 weekly changes on eight pillars. The sample covariance in
bp^2/yr has eigenvalues EIGENVALUES exactly (up to float rounding), with
orthonormalized polynomial-in-log-tenor eigenvectors.
"""

from pathlib import Path

import numpy as np

TENORS = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
EIGENVALUES = (362589.0, 77330.0, 41972.0, 26305.0, 20000.0, 18000.0, 14000.0, 10810.0)
N_ROWS = 154
DT = 1.0 / 52
OUT = Path(__file__).resolve().parents[1] / "src" / "trihjm" / "data" / "nominal_changes_fixture.csv"


def build(seed: int = 20240101) -> np.ndarray:
    x = np.log(np.asarray(TENORS))
    V, _ = np.linalg.qr(np.vander((x - x.mean()) / x.std(), len(TENORS), increasing=True))
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((N_ROWS, len(TENORS)))
    U, _ = np.linalg.qr(Z - Z.mean(axis=0))
    s = np.sqrt(np.asarray(EIGENVALUES) * DT * (N_ROWS - 1) / 1e8)
    return U @ np.diag(s) @ V.T


def main() -> None:
    X = build()
    with open(OUT, "w") as fh:
        fh.write(",".join(f"{t:g}" for t in TENORS) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
