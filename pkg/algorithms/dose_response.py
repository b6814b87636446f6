''' Population velocity summaries, percent response against control, and the
4-parameter logistic (Hill) dose-response fit used to estimate EC50.

    R(c) = bottom + (top - bottom) / (1 + (c / ec50) ** h)

Fitting is a Levenberg-Marquardt damped Gauss-Newton over
(top, bottom, log ec50, log h); the logs keep ec50 and h positive.
'''

import math
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
from loguru import logger

from algorithms.worm_tracker import compute_velocities
from utilities.logging_utils import fmt_float, read_csv_table, write_csv_table

DEFAULT_CONDITION = "default"


class AssayError(Exception):
    pass

class InsufficientDataError(AssayError):
    pass


##====== Types =================================================================

@dataclass
class VelocitySummary:
    per_worm_means: List[float]    # um/s
    population_mean: float
    population_std: float
    n: int
    single: bool = False           # n == 1, std reported as 0


@dataclass(frozen = True)
class DosePoint:
    concentration_um: float        # 0 encodes control
    percent_response: float

    def __post_init__(self):
        if self.concentration_um < 0 or self.percent_response < 0:
            raise AssayError("negative dose point ({}, {})".format(
                                self.concentration_um, self.percent_response))


@dataclass
class HillFit:
    ec50: float
    hill_slope: float
    top: float
    bottom: float
    sse: float
    converged: bool
    iterations: int
    sse_history: List[float] = field(default_factory = list)
    warnings: List[str] = field(default_factory = list)


##====== Velocities ============================================================

def summarize_velocities(tracks, fps = None, um_per_pixel = 1.0):
    ''' Per-worm mean of instantaneous velocities (um/s) and population stats
    fps: recompute velocities; when None each track's stored series is used
    '''
    if not tracks:
        raise AssayError("no tracks to summarize")
    means = []
    for t in tracks:
        if len(t.points) < 2:
            raise AssayError("track {} has fewer than 2 points".format(t.id))
        if fps is not None:
            series = compute_velocities(t, fps, um_per_pixel)
        elif t.velocity is not None:
            series = t.velocity
        else:
            raise AssayError("track {} has no velocity series and no fps was given".format(t.id))
        means.append(series.mean_um_s)
    return summary_from_means(means)


def summary_from_means(means):
    ''' Population mean and sample std of per-worm means '''
    if not len(means):
        raise AssayError("no worm means to summarize")
    arr = np.asarray(means, dtype = np.float64)
    n = len(arr)
    std = float(np.std(arr, ddof = 1)) if n > 1 else 0.0
    return VelocitySummary(per_worm_means = list(means), population_mean = float(arr.mean()),
                           population_std = std, n = n, single = n == 1)


def percent_response(dose, control):
    ''' 100 * dose mean / control mean; accepts summaries or plain means
    '''
    dose_mean = getattr(dose, "population_mean", dose)
    control_mean = getattr(control, "population_mean", control)
    if not control_mean > 0:
        raise AssayError("control mean velocity must be > 0, got {}".format(control_mean))
    return 100.0 * dose_mean / control_mean


##====== 4PL model =============================================================

def hill_response(conc, top, bottom, ec50, hill_slope):
    conc = np.asarray(conc, dtype = np.float64)
    with np.errstate(over = "ignore"):
        u = (conc / ec50) ** hill_slope
    return bottom + (top - bottom) / (1.0 + u)


def hill_model(conc, fit):
    return hill_response(conc, fit.top, fit.bottom, fit.ec50, fit.hill_slope)


def effective_concentration(fit, fraction):
    ''' Concentration giving `fraction` of the drop from top to bottom (0.9 -> EC90)
    '''
    if not 0 < fraction < 1:
        raise AssayError("fraction must be in (0, 1), got {}".format(fraction))
    return fit.ec50 * (fraction / (1.0 - fraction)) ** (1.0 / fit.hill_slope)


def _jacobian(conc, params):
    top, bottom, log_ec50, log_h = params
    ec50 = math.exp(log_ec50); h = math.exp(log_h)
    ratio = conc / ec50
    with np.errstate(over = "ignore", divide = "ignore", invalid = "ignore"):
        u = ratio ** h
        log_ratio = np.where(ratio > 0, np.log(np.where(ratio > 0, ratio, 1.0)), 0.0)
    denom = 1.0 + u
    dm_du = -(top - bottom) / denom ** 2
    jac = np.empty((len(conc), 4))
    jac[:, 0] = 1.0 / denom
    jac[:, 1] = u / denom
    jac[:, 2] = dm_du * (-h * u)
    jac[:, 3] = dm_du * (u * log_ratio * h)
    return jac


def _sse(conc, resp, params):
    top, bottom, log_ec50, log_h = params
    pred = hill_response(conc, top, bottom, math.exp(log_ec50), math.exp(log_h))
    return float(np.sum((resp - pred) ** 2))


##====== Fitting ===============================================================

def initial_guess(conc, resp):
    ''' top = max, bottom = min, ec50 = concentration nearest the mid response, h = 1
    '''
    top = float(resp.max()); bottom = float(resp.min())
    mid = 0.5 * (top + bottom)
    nonzero = conc > 0
    c_nz = conc[nonzero]; r_nz = resp[nonzero]
    ec50 = float(c_nz[int(np.argmin(np.abs(r_nz - mid)))])
    return HillFit(ec50 = ec50, hill_slope = 1.0, top = top, bottom = bottom,
                   sse = float("nan"), converged = False, iterations = 0)


def fit_hill(points, init = None, max_iters = 200, rel_tol = 1e-9, step_tol = 1e-8):
    ''' Least-squares 4PL fit. Control points (c = 0) observe `top` directly.
    '''
    points = sorted(points, key = lambda p: (p.concentration_um, p.percent_response))
    conc = np.array([p.concentration_um for p in points], dtype = np.float64)
    resp = np.array([p.percent_response for p in points], dtype = np.float64)
    distinct = len(set(c for c in conc.tolist() if c > 0))
    if len(points) < 4 or distinct < 3:
        raise InsufficientDataError("need >= 4 points with >= 3 distinct nonzero "
                                    "concentrations, got {} / {}".format(len(points), distinct))

    guess = init or initial_guess(conc, resp)
    if resp.max() - resp.min() <= 1e-12 * max(1.0, abs(resp.max())):
        msg = "flat responses, ec50 unidentifiable"
        logger.warning(msg)
        flat = float(resp[0])
        sse = float(np.sum((resp - flat) ** 2))
        return HillFit(ec50 = guess.ec50, hill_slope = guess.hill_slope, top = flat,
                       bottom = flat, sse = sse, converged = False, iterations = 0,
                       sse_history = [sse], warnings = [msg])

    params = np.array([guess.top, guess.bottom, math.log(guess.ec50),
                       math.log(guess.hill_slope)])
    sse = _sse(conc, resp, params)
    history = [sse]
    damping = 1e-3
    converged = sse == 0.0
    it = 0
    while not converged and it < max_iters:
        it += 1
        top, bottom, log_ec50, log_h = params
        pred = hill_response(conc, top, bottom, math.exp(log_ec50), math.exp(log_h))
        jac = _jacobian(conc, params)
        normal = jac.T @ jac
        grad = jac.T @ (resp - pred)
        diag = np.maximum(np.diag(normal), 1e-12)
        try:
            step = np.linalg.solve(normal + damping * np.diag(diag), grad)
        except np.linalg.LinAlgError:
            damping *= 10
            continue
        trial = params + step
        trial_sse = _sse(conc, resp, trial) if np.all(np.isfinite(trial)) else float("inf")
        step_norm = float(np.linalg.norm(step))
        if np.isfinite(trial_sse) and trial_sse < sse:
            rel_change = (sse - trial_sse) / max(sse, 1e-300)
            params, sse = trial, trial_sse
            history.append(sse)
            damping = max(damping / 10, 1e-12)
            if rel_change < rel_tol or step_norm < step_tol or sse == 0.0:
                converged = True
        else:
            damping *= 10
            if step_norm < step_tol:
                converged = True
            elif damping > 1e16:
                break

    fit = HillFit(ec50 = math.exp(params[2]), hill_slope = math.exp(params[3]),
                  top = float(params[0]), bottom = float(params[1]), sse = sse,
                  converged = converged, iterations = it, sse_history = history)
    if not converged:
        fit.warnings.append("no convergence after {} iterations".format(it))
    c_nz = conc[conc > 0]
    lo, hi = 0.1 * c_nz.min(), 10 * c_nz.max()
    if not lo <= fit.ec50 <= hi:
        fit.warnings.append("ec50 {:.4g} outside tested range [{:.4g}, {:.4g}]".format(
                                fit.ec50, lo, hi))
    for w in fit.warnings:
        logger.warning(w)
    logger.debug("hill fit: ec50={:.4f} h={:.3f} sse={:.3g} in {} iterations",
                 fit.ec50, fit.hill_slope, fit.sse, it)
    return fit


##====== Report ================================================================

FIT_HEADER = ["condition", "ec50_uM", "hill_slope", "top", "bottom", "sse",
              "converged", "n_points"]


def assay_report(fits, points, out_dir, plot_data = True, curve_samples = 50):
    ''' fits: condition -> HillFit; points: condition -> list of DosePoint
    Writes dose_points.csv, hill_fits.csv, assay_notes.txt and plot_data.csv
    '''
    if not fits:
        raise AssayError("no fits to report")
    os.makedirs(out_dir, exist_ok = True)
    conditions = sorted(fits)

    dose_rows = []
    for cond in sorted(points):
        for p in sorted(points[cond], key = lambda p: (p.concentration_um, p.percent_response)):
            dose_rows.append([cond, fmt_float(p.concentration_um), fmt_float(p.percent_response)])
    write_csv_table(os.path.join(out_dir, "dose_points.csv"),
                    ["condition", "concentration_uM", "percent_response"], dose_rows)

    fit_rows = []
    notes = []
    for cond in conditions:
        fit = fits[cond]
        fit_rows.append([cond, fmt_float(fit.ec50), fmt_float(fit.hill_slope), fmt_float(fit.top),
                         fmt_float(fit.bottom), fmt_float(fit.sse), int(fit.converged),
                         len(points.get(cond, []))])
        notes.append("{}: ec50 {:.4f} uM, hill slope {:.4f}, ec90 {:.4f} uM, {} after {} iterations"
                     .format(cond, fit.ec50, fit.hill_slope, effective_concentration(fit, 0.9),
                             "converged" if fit.converged else "NOT converged", fit.iterations))
        notes.extend("  warning: {}".format(w) for w in fit.warnings)
    write_csv_table(os.path.join(out_dir, "hill_fits.csv"), FIT_HEADER, fit_rows)
    with open(os.path.join(out_dir, "assay_notes.txt"), "w", encoding = "utf-8") as f:
        f.write("\n".join(notes) + "\n")

    if plot_data:
        plot_rows = []
        for cond in conditions:
            fit = fits[cond]
            for p in sorted(points.get(cond, []), key = lambda p: (p.concentration_um, p.percent_response)):
                plot_rows.append([cond, fmt_float(p.concentration_um), fmt_float(p.percent_response),
                                  fmt_float(hill_model(p.concentration_um, fit))])
            c_nz = [p.concentration_um for p in points.get(cond, []) if p.concentration_um > 0]
            if c_nz:
                for c in np.geomspace(min(c_nz), max(c_nz), curve_samples):
                    plot_rows.append([cond, fmt_float(c), "", fmt_float(hill_model(c, fit))])
        write_csv_table(os.path.join(out_dir, "plot_data.csv"),
                        ["condition", "concentration_uM", "observed_percent", "fitted_percent"],
                        plot_rows)
    logger.info("assay report for {} condition(s) in {}", len(conditions), out_dir)
    return out_dir


def read_dose_points_csv(path):
    ''' condition -> list of DosePoint; condition column optional
    '''
    if not os.path.isfile(path):
        raise AssayError("no dose-point file {}".format(path))
    grouped = {}
    try:
        for row in read_csv_table(path):
            cond = row.get("condition") or DEFAULT_CONDITION
            grouped.setdefault(cond, []).append(
                DosePoint(float(row["concentration_uM"]), float(row["percent_response"])))
    except (KeyError, ValueError) as err:
        raise AssayError("malformed dose-point file {}: {}".format(path, err))
    return grouped
