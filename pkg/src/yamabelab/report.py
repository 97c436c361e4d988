"""Assemble scenario artifacts into a report: JSON, plot-ready CSVs, figures.

The reporter never recomputes anything: every number it emits is read back
from an artifact file written by the pipeline stages.  Alongside the
delimited curve files it renders the matching matplotlib figures to PNG.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .artifacts import ArtifactError, read_csv, read_json, write_csv, write_json

_PNG_META = {"Software": "yamabelab"}


def _curve_from_summary(summary_path):
    header, cols = read_csv(summary_path)
    return cols


def _load_profile(path):
    _, cols = read_csv(path)
    first, second = list(cols)
    return cols[first], cols[second]


def emit_report(artifact_dir, out_dir=None) -> dict:
    """Build report.json plus curve CSVs and figures from a scenario directory."""
    artifact_dir = Path(artifact_dir)
    out_dir = artifact_dir if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    verdicts_path = artifact_dir / "verdicts.json"
    if not verdicts_path.exists():
        raise ArtifactError(f"missing artifact {verdicts_path}")
    verdicts = read_json(verdicts_path)
    meta = read_json(artifact_dir / "scenario.json")

    curves = {}
    run_dir = artifact_dir / "run"
    if (run_dir / "summary.csv").exists():
        cols = _curve_from_summary(run_dir / "summary.csv")
        curves["max_u_tilde_vs_t"] = [list(pair) for pair in
                                      zip(cols["t"], cols["max_u_tilde"])]
        curves["min_Rt_vs_t"] = [list(pair) for pair in zip(cols["t"], cols["min_Rt"])]
        run_meta = read_json(run_dir / "meta.json")
        if run_meta["checkpoints"]:
            last = run_meta["checkpoints"][-1]
            r, u = _load_profile(run_dir / last["file"])
            scale = last["t"] ** (-(meta["grid"]["dimension"] - 2.0) / 4.0)
            curves["rescaled_final_vs_r"] = [[ri, scale * ui] for ri, ui in zip(r, u)]

    elliptic_dir = artifact_dir / "elliptic"
    for tag, key in (("steady_negative", "steady_profile_vs_r"),
                     ("harmonic_decay", "harmonic_profile_vs_r")):
        path = elliptic_dir / f"{tag}.csv"
        if path.exists():
            r, v = _load_profile(path)
            curves[key] = [list(pair) for pair in zip(r, v)]

    report = {
        "scenario": meta["name"],
        "rng_seed": meta.get("rng_seed", 0),
        "verdicts": verdicts,
        "curves": curves,
    }
    write_json(out_dir / "report.json", report)

    for key, rows in curves.items():
        write_csv(out_dir / f"curve_{key}.csv", ["x", "y"],
                  [[row[0] for row in rows], [row[1] for row in rows]])

    _render_figures(curves, out_dir)
    return report


def _render_figures(curves: dict, out_dir: Path) -> None:
    if "max_u_tilde_vs_t" in curves:
        data = curves["max_u_tilde_vs_t"]
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.loglog([p[0] for p in data], [p[1] for p in data], lw=1.2)
        ax.set_xlabel("t")
        ax.set_ylabel("max rescaled factor")
        ax.set_title("rescaled flow amplitude")
        fig.tight_layout()
        fig.savefig(out_dir / "figure_max_u_tilde_vs_t.png", dpi=120, metadata=_PNG_META)
        plt.close(fig)

    if "min_Rt_vs_t" in curves:
        data = curves["min_Rt_vs_t"]
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        ax.semilogx([p[0] for p in data], [p[1] for p in data], lw=1.2)
        ax.axhline(-1.0, color="k", ls="--", lw=0.8)
        ax.set_xlabel("t")
        ax.set_ylabel("min R * t")
        ax.set_title("curvature lower bound")
        fig.tight_layout()
        fig.savefig(out_dir / "figure_min_Rt_vs_t.png", dpi=120, metadata=_PNG_META)
        plt.close(fig)

    if "rescaled_final_vs_r" in curves:
        fig, ax = plt.subplots(figsize=(5.0, 3.4))
        data = curves["rescaled_final_vs_r"]
        r = [p[0] for p in data if p[0] > 0]
        v = [p[1] for p in data if p[0] > 0]
        ax.loglog(r, v, lw=1.2, label="rescaled final state")
        overlay = curves.get("steady_profile_vs_r") or curves.get("harmonic_profile_vs_r")
        if overlay is not None:
            ro = [p[0] for p in overlay if p[0] > 0]
            vo = [p[1] for p in overlay if p[0] > 0]
            ax.loglog(ro, vo, lw=1.0, ls="--", label="elliptic profile")
        ax.set_xlabel("r")
        ax.set_ylabel("value")
        ax.set_title("final profile against elliptic solve")
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_dir / "figure_profiles_vs_r.png", dpi=120, metadata=_PNG_META)
        plt.close(fig)
