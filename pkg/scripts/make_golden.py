"""Offline generator for high-precision reference values.

Writes ``fixtures/incgamma_golden.csv`` (regularized lower incomplete gamma at
50 significant digits, rounded to 17 for storage) and prints the series
constants embedded in ``ggtde.special_math``. Needs mpmath; the package
itself does not.

    python scripts/make_golden.py
"""

from pathlib import Path

import mpmath as mp

mp.mp.dps = 50

ROOT = Path(__file__).resolve().parents[1]

GRID = [
    (0.05, 0.001), (0.05, 0.5), (0.05, 3.0),
    (0.1, 0.01), (0.1, 2.0),
    (0.25, 0.2), (0.25, 1.5), (0.25, 10.0),
    (0.5, 0.0), (0.5, 0.3), (0.5, 1.0), (0.5, 4.0),
    (1.0, 1.0), (1.0, 7.5),
    (1.25, 0.8), (1.25, 2.25),
    (2.5, 3.7), (2.5, 0.9), (2.5, 12.0),
    (4.0, 2.0), (4.0, 5.0),
    (7.5, 6.5), (7.5, 9.0),
    (10.0, 3.0), (10.0, 10.0), (10.0, 11.0), (10.0, 25.0),
    (20.0, 1.48), (20.0, 20.0),
    (33.3, 30.0), (50.0, 49.0), (50.0, 60.0),
    (100.0, 80.0), (100.0, 100.0), (100.0, 101.0), (100.0, 130.0),
]


def write_fixture() -> None:
    out = ROOT / "fixtures" / "incgamma_golden.csv"
    out.parent.mkdir(exist_ok=True)
    lines = ["a,s,P"]
    for a, s in GRID:
        p = mp.gammainc(mp.mpf(a), 0, mp.mpf(s), regularized=True)
        lines.append(f"{a!r},{s!r},{mp.nstr(p, 17, min_fixed=-30, max_fixed=30)}")
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(GRID)} rows to {out}")


def print_constants() -> None:
    print("# zeta(k) - 1, k = 2..31")
    for k in range(2, 32):
        print(f"    {mp.nstr(mp.zeta(k) - 1, 20)},")
    root = mp.findroot(mp.digamma, 1.46)
    hi = float(root)
    lo = float(root - hi)
    print(f"# digamma root: hi={hi!r} lo={lo!r}")
    print("# Taylor coefficients psi^(k)(root)/k!, k = 1..24")
    for k in range(1, 25):
        c = mp.polygamma(k, root) / mp.factorial(k)
        print(f"    {mp.nstr(c, 20)},")


if __name__ == "__main__":
    write_fixture()
    print_constants()
