"""Experiment pipeline: synthesize -> reconstruct -> stats -> report.

Layout of an output directory::

    manifest.json            config hash, seed, sample status, checksums
    timings.json             wall-clock per command and stage (not checksummed)
    config.ini               canonical config
    dataset/records.json     per-record metadata
    dataset/records/*.csv    measured p_n^d (n, re, im)
    reconstruct/coefficients.csv, stage_means.csv, status.json
    reconstruct/samples/*.csv     per-sample coefficients (p, a)
    reconstruct/stage_log.jsonl   Landweber trace (not checksummed)
    stats/...                mean curve, covariance, KDE curves, metrics
    report/...               metrics and plot-ready grids

Every command re-verifies the checksums of the artifacts it consumes and
refuses artifacts written under a different config hash.
"""

from __future__ import annotations

import logging
import os
import time

import numpy as np

from . import artifacts as io
from .config import ExperimentConfig
from .exceptions import ArtifactMismatchError, NumericalError
from .forward import ScatterRecord, excluded_samples, synthesize_dataset
from .inverse import run_tsmcc
from .stats import ensemble_stats, nominal_covariance, write_stats

log = logging.getLogger(__name__)

FLAG_LIMIT = 0.10
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ARTIFACT = 0, 2, 3, 4
STEPS = ("synthesize", "reconstruct", "stats", "report")
UNTRACKED = ("timings.json", "reconstruct/stage_log.jsonl")


class Run:
    """Output directory of one experiment and its manifest."""

    def __init__(self, cfg: ExperimentConfig, out=None, workers=None):
        self.cfg = cfg
        self.out = os.path.abspath(out or cfg.output)
        self.workers = workers
        os.makedirs(self.out, exist_ok=True)

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    # manifest -------------------------------------------------------------

    def manifest(self):
        p = self.path("manifest.json")
        if not os.path.exists(p):
            return {
                "config_hash": self.cfg.hash(),
                "seed": self.cfg.schedule.seed,
                "name": self.cfg.name,
                "steps": {},
                "samples": {},
                "untracked": list(UNTRACKED),
            }
        man = io.read_json(p)
        if man.get("config_hash") != self.cfg.hash():
            raise ArtifactMismatchError(
                f"{p} was written for config hash {man.get('config_hash', '?')[:12]}, "
                f"current config hashes to {self.cfg.hash()[:12]}"
            )
        return man

    def save_manifest(self, man):
        io.write_json(self.path("manifest.json"), man)

    def record_step(self, step, files, extra=None):
        man = self.manifest()
        # later steps depend on this one; drop their now stale entries
        for s in STEPS[STEPS.index(step) :]:
            man["steps"].pop(s, None)
        man["steps"][step] = {"files": io.file_table(self.out, files)}
        if extra:
            man["steps"][step].update(extra)
        self.save_manifest(man)
        return man

    def require(self, step):
        man = self.manifest()
        if step not in man["steps"]:
            raise ArtifactMismatchError(f"{self.out}: step {step!r} has not been run (manifest has {sorted(man['steps'])})")
        io.verify_files(self.out, man["steps"][step]["files"])
        return man

    def timing(self, key, seconds):
        p = self.path("timings.json")
        t = io.read_json(p) if os.path.exists(p) else {}
        t[key] = seconds
        io.write_json(p, t)

    def write_config(self):
        p = self.path("config.ini")
        with open(p, "w") as fh:
            fh.write(self.cfg.with_output("").to_ini())
        return p


# records -------------------------------------------------------------------

def _record_name(r):
    return f"m{r.m:05d}_j{r.j}_l{r.l}.csv"


def write_dataset(records, root):
    os.makedirs(os.path.join(root, "records"), exist_ok=True)
    meta, paths = [], []
    for key in sorted(records):
        r = records[key]
        p = os.path.join(root, "records", _record_name(r))
        io.write_csv(p, ["n", "re", "im"], [r.n, r.coeffs.real, r.coeffs.imag])
        paths.append(p)
        meta.append(
            {
                "m": r.m, "j": r.j, "l": r.l, "kappa": r.kappa, "theta": r.theta, "tau": r.tau,
                "file": os.path.join("records", _record_name(r)),
                "residual": r.residual, "energy_defect": r.energy_defect, "resolved": bool(r.resolved),
            }
        )
    p = os.path.join(root, "records.json")
    io.write_json(p, meta)
    paths.append(p)
    return paths


def read_dataset(root):
    """Records keyed by ``(m, j, l)`` (coefficients only, no field samples)."""
    out = {}
    for e in io.read_json(os.path.join(root, "records.json")):
        _, data = io.read_csv(os.path.join(root, e["file"]))
        n = data[:, 0].astype(int)
        out[(e["m"], e["j"], e["l"])] = ScatterRecord(
            e["m"], e["j"], e["l"], e["kappa"], e["theta"], n, data[:, 1] + 1j * data[:, 2], e["tau"],
            residual=e["residual"], energy_defect=e["energy_defect"], resolved=e["resolved"],
        )
    return out


def group_by_stage(records, n_angles):
    grouped = {}
    for (m, j, l), r in records.items():
        grouped.setdefault((m, j), [None] * n_angles)[l] = r.coeffs
    return grouped


def _coef_header(width):
    return ["m", "ok"] + [f"a{i}" for i in range(width)]


# commands ------------------------------------------------------------------

def cmd_synthesize(run: Run):
    cfg = run.cfg
    t0 = time.perf_counter()
    cfg.check_wood()
    b_plus = cfg.resolved_heights().b_plus
    records = synthesize_dataset(
        cfg.surface, cfg.schedule, cfg.medium, b_plus, heights=cfg.heights, workers=run.workers, tol=cfg.forward_tol
    )
    files = [run.write_config()] + write_dataset(records, run.path("dataset"))
    bad = excluded_samples(records)
    man = run.record_step("synthesize", files, {"b_plus": b_plus, "excluded": bad})
    man["samples"] = {str(m): ("excluded" if m in bad else "synthesized") for m in range(cfg.schedule.M)}
    run.save_manifest(man)
    run.timing("synthesize", time.perf_counter() - t0)
    return _flag_status(len(bad), cfg.schedule.M, "synthesis")


def cmd_reconstruct(run: Run):
    cfg = run.cfg
    man = run.require("synthesize")
    t0 = time.perf_counter()
    records = read_dataset(run.path("dataset"))
    b_plus = man["steps"]["synthesize"]["b_plus"]
    excluded = man["steps"]["synthesize"]["excluded"]
    stage_times = {}
    last = [time.perf_counter()]

    def on_stage(j, mean):
        now = time.perf_counter()
        stage_times[f"stage_{j}"] = now - last[0]
        last[0] = now

    os.makedirs(run.path("reconstruct"), exist_ok=True)
    with io.JsonlLog(run.path("reconstruct", "stage_log.jsonl")) as logger:
        out = run_tsmcc(
            group_by_stage(records, len(cfg.schedule.angles)), cfg.schedule, cfg.medium, b_plus,
            workers=run.workers, logger=logger, on_stage=on_stage, exclude=excluded,
        )
    C = out["coeffs"]
    ok = np.array([s["ok"] for s in out["status"]])
    p_coef = run.path("reconstruct", "coefficients.csv")
    io.write_csv(p_coef, _coef_header(C.shape[1]), [np.arange(C.shape[0]), ok.astype(float)] + list(C.T))
    p_means = run.path("reconstruct", "stage_means.csv")
    width = C.shape[1]
    means = np.array([np.pad(mu, (0, width - mu.size)) for mu in out["stage_means"]])
    io.write_csv(p_means, ["stage"] + [f"a{i}" for i in range(width)], [np.arange(len(means))] + list(means.T))
    p_status = run.path("reconstruct", "status.json")
    io.write_json(p_status, out["status"])
    per_sample = write_sample_tables(C, run.path("reconstruct", "samples"))
    man = run.record_step("reconstruct", [p_coef, p_means, p_status] + per_sample)
    man["samples"] = {
        str(m): ("excluded" if m in excluded else ("ok" if s["ok"] else "flagged")) for m, s in enumerate(out["status"])
    }
    run.save_manifest(man)
    run.timing("reconstruct", time.perf_counter() - t0)
    run.timing("reconstruct_stages", stage_times)
    return _flag_status(int((~ok).sum()), ok.size, "reconstruction")


def write_sample_tables(C, root):
    """One ``p, a_p`` table per sample (rows of NaN for excluded samples)."""
    os.makedirs(root, exist_ok=True)
    paths = []
    for m, a in enumerate(C):
        p = os.path.join(root, f"m{m:05d}.csv")
        io.write_csv(p, ["p", "a"], [np.arange(a.size), a])
        paths.append(p)
    return paths


def read_coefficients(path):
    header, data = io.read_csv(path)
    if header[:2] != ["m", "ok"]:
        raise ArtifactMismatchError(f"{path}: unexpected header {header[:2]}")
    return data[:, 2:], data[:, 1].astype(bool)


def true_covariance(cfg: ExperimentConfig):
    s = cfg.surface
    if cfg.truth == "nominal":
        return lambda x: nominal_covariance(s.sigma, s.ell, x)
    return lambda x: s.covariance(x)


def cmd_stats(run: Run, coefficients=None):
    cfg = run.cfg
    run.require("reconstruct")
    t0 = time.perf_counter()
    C, ok = read_coefficients(coefficients or run.path("reconstruct", "coefficients.csv"))
    if not ok.any():
        raise NumericalError("no successfully reconstructed samples")
    res = ensemble_stats(C[ok], cfg.surface.mean_profile, true_covariance(cfg), n=cfg.stats_n)
    files = write_stats(res, run.path("stats"))
    run.record_step("stats", files)
    run.timing("stats", time.perf_counter() - t0)
    return EXIT_OK


def cmd_report(run: Run, stats_dir=None):
    cfg = run.cfg
    man = run.require("stats")
    sdir = stats_dir or run.path("stats")
    metrics = io.read_json(os.path.join(sdir, "metrics.json"))
    rdir = run.path("report")
    os.makedirs(rdir, exist_ok=True)
    samples = man.get("samples", {})
    flagged = sum(v != "ok" for v in samples.values())
    metrics.update(
        {
            "name": cfg.name,
            "config_hash": cfg.hash(),
            "seed": cfg.schedule.seed,
            "flagged": flagged,
            "flagged_fraction": flagged / max(1, len(samples)),
            "sigma": cfg.surface.sigma,
            "ell": cfg.surface.ell,
            "kappas": list(cfg.schedule.kappas),
            "samples": list(cfg.schedule.M_per_stage),
            "truth": cfg.truth,
        }
    )
    files = []
    p = os.path.join(rdir, "metrics.json")
    io.write_json(p, metrics)
    files.append(p)
    _, mc = io.read_csv(os.path.join(sdir, "mean_curve.csv"))
    p = os.path.join(rdir, "mean_curve.csv")
    io.write_csv(p, ["x", "fbar", "ftilde", "difference"], [mc[:, 0], mc[:, 1], mc[:, 2], mc[:, 1] - mc[:, 2]])
    files.append(p)
    x = mc[:, 0]
    ch = io.read_matrix_csv(os.path.join(sdir, "covariance.csv"))
    ct = io.read_matrix_csv(os.path.join(sdir, "covariance_true.csv"))
    S, T = np.meshgrid(x, x, indexing="ij")
    p = os.path.join(rdir, "covariance_grid.csv")
    io.write_csv(p, ["s", "t", "c_hat", "c_true", "abs_error"], [S, T, ch, ct, np.abs(ch - ct)])
    files.append(p)
    cols = [[], [], []]
    for i, loc in enumerate(metrics.get("kde_locations", [])):
        _, d = io.read_csv(os.path.join(sdir, f"kde_{i}.csv"))
        cols[0].append(np.full(d.shape[0], loc))
        cols[1].append(d[:, 0])
        cols[2].append(d[:, 1])
    if cols[0]:
        p = os.path.join(rdir, "kde_curves.csv")
        io.write_csv(p, ["location", "value", "density"], [np.concatenate(c) for c in cols])
        files.append(p)
    run.record_step("report", files)
    return EXIT_OK


def cmd_run(run: Run):
    """All four steps in order; returns the worst exit status seen."""
    worst = EXIT_OK
    for step in (cmd_synthesize, cmd_reconstruct, cmd_stats, cmd_report):
        code = step(run)
        worst = max(worst, code)
    return worst


def _flag_status(n_bad, n_total, what):
    frac = n_bad / max(1, n_total)
    if frac > FLAG_LIMIT:
        log.error("%s flagged %d of %d samples (%.0f%% > %.0f%%)", what, n_bad, n_total, 100 * frac, 100 * FLAG_LIMIT)
        return EXIT_NUMERICAL
    if n_bad:
        log.warning("%s flagged %d of %d samples", what, n_bad, n_total)
    return EXIT_OK

