"""Experiment orchestration: truth generation, training matrix, reports.

``generate`` solves the reference infiltration problem and samples noisy
sensors from it. ``train_runs`` trains one network per configured
(optimizer, regime) pair, always from the same seeded initialization so
the comparison isolates the optimizer, and writes per-run artifacts into
``<out>/<optimizer>-<regime>/``:

    convergence.csv   iteration, epoch, data_loss, rre_loss, total_loss
    timing.csv        iteration, wall_ms (kept separate so convergence
                      logs are byte-identical across reruns)
    eval.csv          relative errors on the full grid at the eval cadence
    pred_field.bin    network predictions as a field series
    wrc_hcf.csv       retention / conductivity curves over the predicted
                      head range
    discrepancy_t15.csv  per-node |theta_pred - theta_true| at snapshot 15
    report.json       summary: final losses, relative errors, stop reason

Every logged number is a pure function of the config (seeds included), so
rerunning a config reproduces every artifact byte for byte; wall-clock
times live only in timing.csv. A failing run does not stop the others;
failures are re-raised together at the end, tagged with the run name.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import constitutive as con
from . import dataset, network, physics, solver
from .grid import FieldSeries, load_series, save_series
from .optim import make_batches, make_optimizer

__all__ = ["generate", "train_runs", "run", "RunResult", "RunFailure",
           "sample_constitutive_curves", "discrepancy_field",
           "TRUTH_FILE", "SENSOR_FILE"]

TRUTH_FILE = "truth_field.bin"
SENSOR_FILE = "sensors.csv"

_CONV_HEADER = "iteration,epoch,data_loss,rre_loss,total_loss\n"
_TIMING_HEADER = "iteration,wall_ms\n"
_EVAL_HEADER = "iteration,re_psi,re_theta\n"


class RunFailure(RuntimeError):
    """One or more training runs failed; carries (name, error) pairs."""

    def __init__(self, failures):
        self.failures = failures
        lines = ", ".join(f"{name}: {err}" for name, err in failures)
        super().__init__(f"{len(failures)} run(s) failed: {lines}")


@dataclass
class RunResult:
    name: str
    optimizer: str
    regime: str
    learning_rate: float
    iterations_run: int
    stopped_early: bool
    final: physics.LossBreakdown
    re_psi: float
    re_theta: float
    out_dir: str


def generate(cfg, out_dir):
    """Solve the reference problem, sample noisy sensors, and write
    ``truth_field.bin`` and ``sensors.csv``. Returns (series, sensors,
    mass-balance audit)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    series = solver.solve(cfg.grid, cfg.soil, sc.boundary(), sc.psi_initial,
                          t_end=sc.t_end, n_steps=sc.n_steps,
                          n_save=sc.n_save)
    sensors = dataset.place_sensors(series, n_xy=cfg.sensors.n_xy,
                                    n_depths=cfg.sensors.n_depths,
                                    seed=cfg.sensors.seed)
    sensors = dataset.add_noise(sensors, cfg.noise)
    save_series(series, out / TRUTH_FILE)
    dataset.save_sensors(sensors, out / SENSOR_FILE)
    return series, sensors, solver.mass_balance(series)


def load_data(data_dir):
    data = Path(data_dir)
    truth = data / TRUTH_FILE
    sens = data / SENSOR_FILE
    if not truth.exists() or not sens.exists():
        raise FileNotFoundError(
            f"no generated data in {data}: expected {TRUTH_FILE} and "
            f"{SENSOR_FILE} (run the generate step first)")
    return load_series(truth), dataset.load_sensors(sens)


def _init_network(cfg, sensors):
    """Seeded init shared by every run; the output affine map is
    calibrated to the measured head range."""
    g, sc = cfg.grid, cfg.scenario
    lo, hi = float(sensors.psi.min()), float(sensors.psi.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return network.init_net(
        in_lo=(0.0, 0.0, 0.0, 0.0), in_hi=(g.lx, g.ly, g.lz, sc.t_end),
        hidden_layers=cfg.network.hidden_layers,
        hidden_width=cfg.network.hidden_width,
        seed=cfg.network.seed,
        out_center=0.5 * (hi + lo), out_scale=0.5 * (hi - lo))


def predict_series(net, truth):
    """Evaluate the network on the truth grid at every saved instant."""
    g = truth.grid
    x, y, z = np.meshgrid(g.xs, g.ys, g.zs, indexing="ij")
    base = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    psi = np.empty_like(truth.psi)
    for ti, t in enumerate(truth.times):
        pts = np.concatenate([base, np.full((len(base), 1), t)], axis=1)
        psi[ti] = network.forward(net, pts).reshape(g.shape)
    return FieldSeries(grid=g, soil=truth.soil, bc=truth.bc,
                       times=truth.times, psi=psi)


def sample_constitutive_curves(vg, psi_values):
    """Rows (psi, theta(psi), K(psi)) for the given head values; the
    trained field only ever supplies the range of interest."""
    psi = np.atleast_1d(np.asarray(psi_values, dtype=np.float64))
    return np.column_stack([psi, con.theta(vg, psi), con.k(vg, psi)])


def discrepancy_field(pred, truth, t_index):
    """Per-node |theta_pred - theta_true| grid at one saved instant."""
    n = len(truth.times)
    if not -n <= t_index < n:
        raise IndexError(f"t_index {t_index} out of range for {n} snapshots")
    return np.abs(pred.theta(t_index) - truth.theta(t_index))


def _write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header)
        fh.writelines(rows)


def _curve_rows(table):
    return [",".join(f"{v:.17g}" for v in row) + "\n" for row in table]


def _discrepancy_rows(grid, field):
    xs, ys, zs = grid.xs, grid.ys, grid.zs
    rows = []
    for i in range(grid.nx):
        for j in range(grid.ny):
            for k in range(grid.nz):
                rows.append(f"{i},{j},{k},{xs[i]:.17g},{ys[j]:.17g},"
                            f"{zs[k]:.17g},{field[i, j, k]:.17g}\n")
    return rows


def train_one(cfg, truth, sensors, coll, name, out_dir, dry_run=False):
    """Train one (optimizer, regime) pair and write its artifacts."""
    opt_name, regime = name.split("-")
    tr = cfg.training
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    conv_rows, timing_rows, eval_rows = [], [], []
    net = _init_network(cfg, sensors)
    params = network.param_arrays(net)
    opt = make_optimizer(opt_name, lr=tr.learning_rates[opt_name])
    lr = tr.learning_rates[opt_name]

    if regime == "full":
        budget = tr.iterations
        plan = None
    else:
        budget = tr.epochs * int(np.ceil(len(sensors) / tr.batch_size))
        plan = "mini"

    last_eval = [-1]

    def evaluate(iteration):
        pred = predict_series(net, truth)
        re_psi, re_theta = dataset.relative_error(pred, truth)
        if iteration != last_eval[0]:
            eval_rows.append(f"{iteration},{re_psi:.17g},{re_theta:.17g}\n")
            last_eval[0] = iteration
        return pred, re_psi, re_theta

    iteration = 0
    stopped_early = False
    final = physics.LossBreakdown(0.0, 0.0, 0.0)
    if not dry_run:
        best_total = np.inf
        last_improve = 0
        epoch = 0
        batches = None
        n_batches = 1
        while iteration < budget:
            if plan == "mini" and (batches is None or not batches):
                batches = make_batches(
                    len(sensors), len(coll), tr.batch_size, tr.batch_seed,
                    epoch, all_collocation=tr.mini_collocation == "all")
                n_batches = len(batches)
                epoch += 1
            if plan == "mini":
                s_idx, c_idx = batches.pop(0)
                sensor_pts = sensors.points[s_idx]
                measured = sensors.psi[s_idx]
                coll_pts = coll[c_idx]
            else:
                sensor_pts, measured, coll_pts = sensors.points, \
                    sensors.psi, coll
            iteration += 1
            t0 = time.perf_counter()
            lb, grads = physics.loss_and_grads(
                net, cfg.soil, sensor_pts, measured, coll_pts,
                weights=tr.loss_weights, chunk=tr.chunk)
            opt.step(params, grads)
            ms = (time.perf_counter() - t0) * 1e3
            ep = epoch if plan == "mini" else iteration
            conv_rows.append(
                f"{iteration},{ep},{lb.data_loss:.17g},{lb.rre_loss:.17g},"
                f"{lb.total:.17g}\n")
            timing_rows.append(f"{iteration},{ms:.3f}\n")
            final = lb
            if tr.eval_cadence > 0 and iteration % tr.eval_cadence == 0 \
                    and iteration < budget:
                evaluate(iteration)
            # plateau detection on the logged total; mini-batch totals are
            # too noisy batch-to-batch for a meaningful plateau rule
            if plan != "mini" and tr.plateau.enabled:
                if lb.total < best_total - tr.plateau.tol:
                    best_total = lb.total
                    last_improve = iteration
                elif iteration - last_improve >= tr.plateau.window:
                    stopped_early = True
                    break

    _write_rows(out / "convergence.csv", _CONV_HEADER, conv_rows)
    _write_rows(out / "timing.csv", _TIMING_HEADER, timing_rows)
    if dry_run:
        _write_rows(out / "eval.csv", _EVAL_HEADER, [])
        return None

    pred, re_psi, re_theta = evaluate(iteration)
    _write_rows(out / "eval.csv", _EVAL_HEADER, eval_rows)
    save_series(pred, out / "pred_field.bin")

    lo, hi = float(pred.psi.min()), float(pred.psi.max())
    curve = sample_constitutive_curves(cfg.soil, np.linspace(lo, hi, 200))
    _write_rows(out / "wrc_hcf.csv", "psi,theta,k\n", _curve_rows(curve))

    t_idx = min(15, len(truth.times) - 1)
    disc = discrepancy_field(pred, truth, t_idx)
    _write_rows(out / f"discrepancy_t{t_idx}.csv",
                "x_idx,y_idx,z_idx,x,y,z,abs_dtheta\n",
                _discrepancy_rows(truth.grid, disc))

    result = RunResult(name=name, optimizer=opt_name, regime=regime,
                       learning_rate=lr, iterations_run=iteration,
                       stopped_early=stopped_early, final=final,
                       re_psi=re_psi, re_theta=re_theta, out_dir=str(out))
    report = {
        "run": name,
        "optimizer": opt_name,
        "regime": regime,
        "learning_rate": lr,
        "iterations_run": iteration,
        "stopped_early": stopped_early,
        "final_loss": {"data_loss": final.data_loss,
                       "rre_loss": final.rre_loss,
                       "total": final.total},
        "re_psi": re_psi,
        "re_theta": re_theta,
        "files": {"convergence": "convergence.csv",
                  "timing": "timing.csv",
                  "eval": "eval.csv",
                  "pred_field": "pred_field.bin",
                  "wrc_hcf": "wrc_hcf.csv",
                  "discrepancy": f"discrepancy_t{t_idx}.csv"},
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _train_one_job(args):
    name = args[4]
    try:
        return ("ok", train_one(*args))
    except Exception as exc:  # noqa: BLE001 - isolate per run
        return ("err", f"{type(exc).__name__}: {exc}")


def train_runs(cfg, data_dir, out_dir, jobs=1, dry_run=False):
    """Run the configured training matrix. Returns the RunResult list in
    config order; raises RunFailure afterwards if any run failed (all
    runs are attempted regardless)."""
    truth, sensors = load_data(data_dir)
    coll = dataset.sample_collocation(truth, cfg.collocation.n_f,
                                      cfg.collocation.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    names = list(cfg.training.runs)
    job_args = [(cfg, truth, sensors, coll, name, str(out / name), dry_run)
                for name in names]
    if jobs > 1 and len(names) > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(processes=min(jobs, len(names))) \
                as pool:
            outcomes = pool.map(_train_one_job, job_args)
    else:
        outcomes = [_train_one_job(args) for args in job_args]

    results, failures = [], []
    for name, (status, payload) in zip(names, outcomes):
        if status == "ok":
            if payload is not None:
                results.append(payload)
        else:
            failures.append((name, payload))
    if failures:
        raise RunFailure(failures)
    return results


def run(cfg, out_dir, jobs=1, dry_run=False):
    """Full pipeline: generate the truth data into ``out_dir`` and train
    the configured matrix under it."""
    generate(cfg, out_dir)
    return train_runs(cfg, out_dir, out_dir, jobs=jobs, dry_run=dry_run)
