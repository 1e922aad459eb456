"""Report rendering: leaderboard and series CSVs with matching PNG figures."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .engine import SeriesRow  # noqa: E402
from .harness import LedgerEntry, SessionSummary, rank, read_summaries  # noqa: E402
from .windowing import WindowSpec, window_start_ns  # noqa: E402
from .marketdata import TickTimestamp  # noqa: E402

PathLike = Union[str, os.PathLike]

params = {
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "figure.figsize": [8, 4.5],
    "savefig.dpi": 120,
}

SERIES_HEADER = ["window_start", "close", "ema38", "ema100", "advisory"]
LEADERBOARD_HEADER = [
    "position", "name", "rank_q1", "rank_q2", "mean_rank", "q1_p90_ms", "q2_p90_ms",
    "q1_mean_ms", "q2_mean_ms", "throughput_batches_per_s", "batches", "complete",
]


def _ms(ns: Optional[float]) -> str:
    return "" if ns is None else f"{ns / 1e6:.3f}"


def write_leaderboard(summaries: Sequence[SessionSummary], out_csv: PathLike) -> list:
    board = rank(summaries)
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEADERBOARD_HEADER)
        for e in board:
            s = e.summary
            w.writerow([
                e.position, e.name, e.rank_q1, e.rank_q2, e.mean_rank,
                _ms(s.q1_latency.p90_ns if s.q1_latency else None),
                _ms(s.q2_latency.p90_ns if s.q2_latency else None),
                _ms(s.q1_latency.mean_ns if s.q1_latency else None),
                _ms(s.q2_latency.mean_ns if s.q2_latency else None),
                f"{s.throughput_batches_per_s:.3f}", s.batches, s.complete,
            ])
    return board


def read_ledger(path: PathLike) -> list[LedgerEntry]:
    def opt(v: str) -> Optional[int]:
        return int(v) if v else None

    with open(path, newline="") as fh:
        return [
            LedgerEntry(int(r["t_sent"]), opt(r["t_q1"]), opt(r["t_q2"]))
            for r in csv.DictReader(fh)
        ]


def plot_latency_cdf(ledgers: dict[str, Sequence[LedgerEntry]], out_png: PathLike) -> None:
    """Empirical CDF of per-batch Q1/Q2 latency, one line pair per session."""
    with plt.rc_context(params):
        fig, axes = plt.subplots(1, 2, sharey=True)
        for ax, slot, title in ((axes[0], "t_q1", "Query 1"), (axes[1], "t_q2", "Query 2")):
            for label, ledger in ledgers.items():
                lat = np.sort([
                    (getattr(e, slot) - e.t_sent) / 1e6 for e in ledger if getattr(e, slot) is not None
                ])
                if len(lat) == 0:
                    continue
                y = np.arange(1, len(lat) + 1) / len(lat)
                ax.step(lat, y, where="post", label=label)
            ax.axhline(0.9, color="0.6", ls=":", lw=0.8)
            ax.set_xscale("log")
            ax.set_xlabel("latency [ms]")
            ax.set_title(title)
        axes[0].set_ylabel("fraction of batches")
        if ledgers:
            axes[1].legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(out_png)
        plt.close(fig)


def write_series_csv(rows: Iterable[SeriesRow], out_csv: PathLike,
                     spec: WindowSpec = WindowSpec()) -> int:
    n = 0
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for r in rows:
            start = TickTimestamp.from_epoch_ns(window_start_ns(r.window, spec))
            w.writerow([
                f"{start.date.isoformat()}T{start.format_time()}",
                repr(r.close), repr(r.ema.ema38), repr(r.ema.ema100),
                r.advisory.value if r.advisory else "",
            ])
            n += 1
    return n


def plot_series(rows: Sequence[SeriesRow], symbol: str, out_png: PathLike) -> None:
    """Closes, both EMAs and buy/sell markers over the evaluated windows."""
    x = np.arange(len(rows))
    close = np.array([r.close for r in rows])
    e38 = np.array([r.ema.ema38 for r in rows])
    e100 = np.array([r.ema.ema100 for r in rows])
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.plot(x, close, color="0.7", label="close")
        ax.plot(x, e38, label="EMA 38")
        ax.plot(x, e100, label="EMA 100")
        for kind, marker, color in (("BUY", "^", "tab:green"), ("SELL", "v", "tab:red")):
            idx = [i for i, r in enumerate(rows) if r.advisory is not None and r.advisory.value == kind]
            if idx:
                ax.scatter(idx, e38[idx], marker=marker, color=color, zorder=3, label=kind.lower())
        ax.set_xlabel("evaluated window")
        ax.set_ylabel("price")
        ax.set_title(symbol)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(out_png)
        plt.close(fig)


def render_report(summaries_path: PathLike, out_dir: PathLike) -> dict[str, Path]:
    """Leaderboard CSV plus a latency CDF figure from a harness ``--out`` directory."""
    src = Path(summaries_path)
    summaries_file = src / "summaries.jsonl" if src.is_dir() else src
    summaries = read_summaries(summaries_file)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {"leaderboard": out / "leaderboard.csv"}
    write_leaderboard(summaries, written["leaderboard"])
    ledgers = {}
    for s in summaries:
        f = summaries_file.parent / f"ledger-{s.benchmark_id}.csv"
        if f.exists():
            ledgers[f"{s.name}#{s.benchmark_id}"] = read_ledger(f)
    if ledgers:
        written["latency_cdf"] = out / "latency_cdf.png"
        plot_latency_cdf(ledgers, written["latency_cdf"])
    return written
