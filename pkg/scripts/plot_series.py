"""Plot series CSVs written by ``husimi-egorov simulate``.

Usage::

    python scripts/plot_series.py results/D-desk/D-desk_eps0p05_*.csv -o fig.png

One panel per observable; when reference columns are present the absolute
error is drawn on a second axis. Needs matplotlib (not a package dependency).
"""

import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from husimi_egorov.experiment import read_series_csv  # noqa: E402


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="series.png")
    args = ap.parse_args(argv)

    loaded = [read_series_csv(p) for p in args.csv]
    names = list(dict.fromkeys(n for s, _ in loaded for n in s.observables))
    fig, axes = plt.subplots(len(names), 1, figsize=(7, 2.2 * len(names)), sharex=True, squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        for series, ref in loaded:
            if name not in series.values:
                continue
            ax.plot(series.times, series[name], label=series.method)
            if ref is not None:
                err_ax = ax.twinx()
                err_ax.semilogy(series.times, abs(series[name] - ref[name]) + 1e-300, ":", lw=0.8)
                err_ax.set_ylabel("|error|", fontsize=7)
        ax.set_ylabel(name)
    axes[0, 0].legend(fontsize=7)
    axes[-1, 0].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


if __name__ == "__main__":
    main()
