"""Render evaluation figures and the per-slice table from runner CSVs.

Input schemas (header rows as written by the runner):
  learning curve: steps,mean_reward,success_rate,clip_frac,kl
  hourly energy:  hour,policy,node_kwh,net_idle_kwh,net_dyn_kwh,total_kwh
  hourly latency: hour,policy,avg_latency_ms,accepted,blocked
  per slice:      policy,service,avg_latency_ms,avg_links_used,accepted,blocked

Each plot function takes {label: csv_path} and returns the matplotlib figure;
pass out_path to also write a PNG.  All functions are deterministic given the
file contents.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

CURVE_COLUMNS = ("steps", "mean_reward", "success_rate", "clip_frac", "kl")
ENERGY_COLUMNS = ("hour", "policy", "node_kwh", "net_idle_kwh",
                  "net_dyn_kwh", "total_kwh")
LATENCY_COLUMNS = ("hour", "policy", "avg_latency_ms", "accepted", "blocked")
SLICE_COLUMNS = ("policy", "service", "avg_latency_ms", "avg_links_used",
                 "accepted", "blocked")


class SchemaError(ValueError):
    """A CSV is missing required columns; the message names them."""


def read_rows(path, required):
    """Parse a CSV into dict rows, enforcing the required column names."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(
                f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def _figure():
    return plt.subplots(figsize=(7.0, 4.2), dpi=120)


def _finish(fig, ax, xlabel, ylabel, out_path):
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    if out_path:
        fig.savefig(out_path)
    return fig


def plot_learning(curves, out_path=None):
    """Mean episode reward vs environment steps, one series per run."""
    fig, ax = _figure()
    for label, path in curves.items():
        rows = read_rows(path, CURVE_COLUMNS)
        steps = [int(r["steps"]) for r in rows]
        reward = [float(r["mean_reward"]) for r in rows]
        ax.plot(steps, reward, label=label)
    return _finish(fig, ax, "environment steps", "mean episode reward",
                   out_path)


def plot_energy(reports, out_path=None):
    """Total energy per hour, one series per policy."""
    fig, ax = _figure()
    for label, path in reports.items():
        rows = read_rows(path, ENERGY_COLUMNS)
        hours = [int(r["hour"]) for r in rows]
        total = [float(r["total_kwh"]) for r in rows]
        ax.plot(hours, total, marker="o", markersize=3, label=label)
    ax.set_xticks(range(0, 24, 2))
    return _finish(fig, ax, "hour of day", "energy (kWh)", out_path)


def plot_latency(reports, out_path=None):
    """Average accepted-flow latency per hour, one series per policy."""
    fig, ax = _figure()
    for label, path in reports.items():
        rows = read_rows(path, LATENCY_COLUMNS)
        hours = [int(r["hour"]) for r in rows]
        lat = [float(r["avg_latency_ms"]) for r in rows]
        ax.plot(hours, lat, marker="o", markersize=3, label=label)
    ax.set_xticks(range(0, 24, 2))
    return _finish(fig, ax, "hour of day", "average latency (ms)", out_path)


def render_slice_table(reports, out_path=None):
    """Per-service latency and path-length table across policies.

    Rows are the six services; columns are (avg latency ms, avg links used)
    per policy.  Returns the formatted text.
    """
    per_policy = {}
    services = []
    for label, path in reports.items():
        rows = read_rows(path, SLICE_COLUMNS)
        per_policy[label] = {r["service"]: r for r in rows}
        for r in rows:
            if r["service"] not in services:
                services.append(r["service"])

    labels = list(per_policy)
    headers = ["service"]
    for label in labels:
        headers += [f"{label} lat (ms)", f"{label} links"]
    lines = []
    for service in services:
        cells = [service]
        for label in labels:
            row = per_policy[label].get(service)
            if row is None:
                cells += ["-", "-"]
            else:
                cells += [f"{float(row['avg_latency_ms']):.3f}",
                          f"{float(row['avg_links_used']):.2f}"]
        lines.append(cells)

    widths = [max(len(h), *(len(row[i]) for row in lines))
              for i, h in enumerate(headers)]
    def fmt(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    text = "\n".join([fmt(headers), fmt(["-" * w for w in widths])]
                     + [fmt(row) for row in lines]) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    return text
