"""End-to-end pipelines behind the command line.

Every writer here goes through a temporary file that is renamed into
place, and every float in a CSV is printed with 9 significant digits, so a
rerun with the same config and seed reproduces the files byte for byte.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import baseline, datasets
from .bm_sim import SimConfig
from .cache import EnsembleStore, cache_key
from .errors import ConfigError, DataError, DomainError, MissingEnsemblesError
from .geometry import SwissRoll, format_domain_text, parse_domain_text, resolve_domain
from .gp import Dataset, Hyperparams, build_covariance_grid, fit, heat_to_rbf, predict
from .heat_kernel import WindowPolicy, kernel_table, r1_validation
from .raster import atomic_write_text, grid_image, write_ppm
from .sparse_gp import build_sparse_grid, place_inducing_grid, sparse_fit, sparse_predict

log = logging.getLogger(__name__)

MODEL_FORMAT = "ingp-model/1"


def fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else format(x, ".9g")


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def _open_data(path):
    if str(path).startswith("builtin:"):
        name = str(path).split(":", 1)[1]
        if name != "aral":
            raise ConfigError(f"unknown built-in data set {name!r}")
        return datasets.aral_data_path().read_text(), "builtin:aral"
    try:
        return Path(path).read_text(), str(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def read_points_csv(path, d, with_response=True):
    """Parse a CSV with a header; returns ``(points, responses or None)``."""
    text, source = _open_data(path)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{source}: empty file")
    need = d + 1 if with_response else d
    pts, ys = [], []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < need:
            raise DataError(f"{source}:{lineno}: expected at least {need} columns, got {len(row)}")
        try:
            vals = [float(c) for c in row[:need]]
        except ValueError:
            raise DataError(f"{source}:{lineno}: non-numeric value in {row[:need]}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{source}:{lineno}: non-finite value")
        pts.append(vals[:d])
        if with_response:
            ys.append(vals[d])
    if not pts:
        raise DataError(f"{source}: no data rows")
    return np.array(pts), (np.array(ys) if with_response else None)


def ingest(path, domain, center=False):
    """Load observations; returns ``(Dataset, domain)``.

    With ``center`` the coordinate means are subtracted, recorded as the
    dataset offset, and the returned domain is shifted to match.
    """
    pts, y = read_points_csv(path, domain.dim)
    out = ~domain.inside_batch(pts)
    if np.any(out):
        bad = np.flatnonzero(out)
        shown = ", ".join(str(i + 1) for i in bad[:10])
        more = f" and {len(bad) - 10} more" if len(bad) > 10 else ""
        raise DomainError(f"{len(bad)} observation(s) outside domain {domain.name!r}: "
                          f"data rows {shown}{more}")
    offset = None
    if center:
        offset = pts.mean(axis=0)
        pts = pts - offset
        domain = domain.translated(-offset)
    return Dataset(pts, y, offset), domain


def apply_removal(data, spec):
    """Thin a region of the data (the uneven variant); ``spec`` as in the config."""
    if not spec:
        return data
    pts = data.points + (data.offset if data.offset is not None else 0)
    mask = datasets.removal_mask(pts, **spec)
    return data.subset(mask)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

def _py(x):
    if isinstance(x, np.ndarray):
        return [_py(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_py(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


class _ModelDumper(yaml.SafeDumper):
    pass


def _str_block(dumper, s):
    style = "|" if "\n" in s else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", s, style=style)


_ModelDumper.add_representer(str, _str_block)


def dump_model(model):
    return yaml.dump(_py(model), Dumper=_ModelDumper, sort_keys=False)


@dataclass
class FitOutcome:
    model: dict
    report: str
    fit: object
    data: Dataset
    store: EnsembleStore


def _steps_for(sim, t):
    return int(round(t / sim.dt))


def run_fit(cfg, store=None):
    """Simulate or load ensembles, fit, and write model, report and table."""
    store = store or EnsembleStore(cfg.cache_dir, cfg.workers)
    base = resolve_domain(cfg.domain)
    data, domain = ingest(cfg.data["path"], base, cfg.data.get("center", False))
    data = apply_removal(data, cfg.data.get("remove"))
    sim, policy = cfg.sim, cfg.window
    if cfg.inducing:
        u = _inducing_points(cfg, domain, data)
        ens = store.iter(domain, u, sim)
        grid = build_sparse_grid(ens, u, data.points, policy, domain)
        result = sparse_fit(grid, data.responses)
        starts, kind = u, "sparse"
    else:
        ens = store.iter(domain, data.points, sim)
        grid = build_covariance_grid(ens, data.points, policy, domain)
        result = fit(grid, data.responses)
        starts, kind = data.points, "dense"
    hp = result.hyperparams
    model = {
        "format": MODEL_FORMAT,
        "kind": kind,
        "domain": format_domain_text(domain) if data.offset is not None else _domain_ref(cfg.domain),
        "domain_name": domain.name,
        "offset": _py(data.offset) if data.offset is not None else None,
        "simulation": {"n_paths": sim.n_paths, "n_steps": sim.n_steps, "dt": sim.dt,
                       "max_rejections": sim.max_rejections, "seed": sim.seed},
        "window": {"mode": policy.mode, "fixed_w": policy.fixed_w,
                   "pilot_fraction": policy.pilot_fraction,
                   "clip_to_domain": policy.clip_to_domain},
        "hyperparams": {"t": hp.t, "sigma_h": hp.sigma_h, "sigma_noise": hp.sigma_noise},
        "step": _steps_for(sim, hp.t),
        "log_likelihood": result.log_likelihood,
        "data": {"points": _py(data.points), "responses": _py(data.responses)},
        "starts": _py(starts),
        "ensembles": [cache_key(domain, s, sim) for s in starts],
    }
    report = fit_report(model, result, store)
    out = Path(cfg.output)
    atomic_write_text(out / "model.yaml", dump_model(model))
    atomic_write_text(out / "report.txt", report)
    atomic_write_text(out / "likelihood.csv",
                      csv_text(["t", "log_likelihood", "sigma_h", "sigma_noise"], result.table))
    return FitOutcome(model, report, result, data, store)


def _domain_ref(spec):
    p = Path(spec)
    return str(p.resolve()) if (p.suffix or p.exists()) else spec


def _inducing_points(cfg, domain, data):
    kind, val = cfg.inducing
    if kind == "grid":
        return place_inducing_grid(domain, val)
    pts, _ = read_points_csv(val, domain.dim, with_response=False)
    if data.offset is not None:
        pts = pts - data.offset
    bad = ~domain.inside_batch(pts)
    if np.any(bad):
        raise DomainError(f"inducing points outside the domain: rows {np.flatnonzero(bad) + 1}")
    return pts


def likelihood_modes(table):
    """Number of interior local maxima of the per-t likelihood."""
    ll = table[:, 1]
    ll = ll[np.isfinite(ll)]
    if len(ll) < 3:
        return 1
    inner = (ll[1:-1] > ll[:-2]) & (ll[1:-1] > ll[2:])
    return int(inner.sum() + (ll[0] > ll[1]) + (ll[-1] > ll[-2]))


def fit_report(model, result, store):
    hp = result.hyperparams
    modes = likelihood_modes(result.table)
    lines = [
        f"model kind:        {model['kind']}",
        f"domain:            {model['domain_name']}",
        f"observations:      {len(model['data']['responses'])}",
        f"ensembles:         {len(model['ensembles'])} "
        f"(simulated {store.simulated}, loaded from cache {store.loaded})",
        f"chosen t:          {fmt(hp.t)}",
        f"sigma_h:           {fmt(hp.sigma_h)}",
        f"sigma_noise:       {fmt(hp.sigma_noise)}",
        f"log likelihood:    {fmt(result.log_likelihood)}",
        f"likelihood in t:   {'unimodal' if modes == 1 else f'FLAGGED, {modes} local maxima'}",
        "",
        "t,log_likelihood,sigma_h,sigma_noise",
    ]
    lines += [",".join(fmt(v) for v in row) for row in result.table]
    return "\n".join(lines) + "\n"


def load_model(path):
    try:
        model = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from None
    if not isinstance(model, dict) or model.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path} is not an {MODEL_FORMAT} model file")
    return model


def model_domain(model):
    spec = model["domain"]
    if "\n" in spec:
        return parse_domain_text(spec, "<model>")
    return resolve_domain(spec)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def prediction_grid(domain, nx):
    """Full rectangular cell-centred grid with ``nx`` columns and square cells.

    Returns ``(points, inside_mask, (x_axis, y_axis))``.
    """
    if domain.dim != 2:
        raise ConfigError("grid prediction needs a 2-D domain; pass a points file")
    lo, hi = domain.bounds()
    h = (hi[0] - lo[0]) / nx
    ny = max(1, int(round((hi[1] - lo[1]) / h)))
    ax = lo[0] + (np.arange(nx) + 0.5) * (hi[0] - lo[0]) / nx
    ay = lo[1] + (np.arange(ny) + 0.5) * (hi[1] - lo[1]) / ny
    pts = np.stack(np.meshgrid(ax, ay, indexing="ij"), axis=-1).reshape(-1, 2)
    return pts, domain.inside_batch(pts), (ax, ay)


def run_predict(model_path, out_dir, points_path=None, grid_nx=None, variance=False,
                simulate_test=False, store=None, image=True):
    """Predict from a model file; writes ``predictions.csv`` and maybe a heat map."""
    model = load_model(model_path)
    store = store or EnsembleStore()
    domain = model_domain(model)
    offset = np.array(model["offset"]) if model.get("offset") is not None else None
    s = model["simulation"]
    sim = SimConfig(s["n_paths"], s["n_steps"], s["dt"], s["max_rejections"], s["seed"])
    policy = WindowPolicy(**model["window"])
    hp = Hyperparams(**model["hyperparams"])
    step = model["step"]
    axes = None
    if points_path is not None:
        pts, _ = read_points_csv(points_path, domain.dim, with_response=False)
        if offset is not None:
            pts = pts - offset
        inside = domain.inside_batch(pts)
    elif grid_nx:
        pts, inside, axes = prediction_grid(domain, grid_nx)
    else:
        raise ConfigError("give a points file or a grid size")
    test = pts[inside]
    if len(test) == 0:
        raise DataError("no prediction point lies inside the domain")
    y = np.array(model["data"]["responses"])
    starts = np.array(model["starts"])
    if model["kind"] == "sparse":
        grid = build_sparse_grid(store.iter(domain, starts, sim), starts,
                                 np.array(model["data"]["points"]), policy, domain,
                                 test_points=test, steps=[step])
        pr = sparse_predict(grid.model(hp), y, grid.cross_at(hp.t), variance=variance)
    else:
        if variance and not simulate_test:
            raise MissingEnsemblesError(
                "dense predictive variance needs ensembles started at the test points; "
                "rerun with --simulate-test-ensembles")
        grid = build_covariance_grid(store.iter(domain, starts, sim), starts, policy, domain,
                                     test_points=test, steps=[step])
        kss = None
        if variance:
            tg = build_covariance_grid(store.iter(domain, test, sim), test, policy, domain,
                                       steps=[step])
            kss = tg.sigma[0]
        pr = predict(grid, hp, y, grid.cross_at(hp.t), test_self_cov=kss, variance=variance)
    mean = np.full(len(pts), np.nan)
    mean[inside] = pr.mean
    var = None
    if pr.variance is not None:
        var = np.full(len(pts), np.nan)
        var[inside] = pr.variance
    coords = pts + (offset if offset is not None else 0)
    header = [f"x{k}" for k in range(domain.dim)] + ["inside", "mean"]
    cols = [coords[:, k] for k in range(domain.dim)] + [inside.astype(int), mean]
    if var is not None:
        header.append("variance")
        cols.append(var)
    rows = [[c[i] for c in cols] for i in range(len(pts))]
    out = Path(out_dir)
    atomic_write_text(out / "predictions.csv", csv_text(header, rows))
    if image and axes is not None:
        write_ppm(out / "mean.ppm", grid_image(pts, mean, axes), scale=8)
        if var is not None:
            write_ppm(out / "variance.ppm", grid_image(pts, var, axes), scale=8)
    return pts, inside, pr


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_table1(cfg):
    p = cfg.params
    n_list = p.get("n_paths", [300, 3000, 30000])
    rows, summary = [], []
    for k, n in enumerate(n_list):
        res = r1_validation(int(n), t=p.get("t", 10.0), w=p.get("w", 0.5),
                            n_grid=p.get("n_grid", 70), dt=p.get("dt", 0.1),
                            seed=cfg.seed + k, workers=cfg.workers)
        rows += [[n, *r] for r in res]
        summary.append((n, float(np.median(res[:, 5]))))
    out = Path(cfg.output)
    atomic_write_text(out / "table1.csv",
                      csv_text(["n_paths", "s", "t", "K_true", "K_hat", "stderr", "rel_err"], rows))
    atomic_write_text(out / "table1_summary.csv",
                      csv_text(["n_paths", "median_rel_err"], summary))
    return summary


def table2_points(p):
    # spacing 1 on the same range as the kernel check; see run_table2
    return np.linspace(p.get("lo", -9.5), p.get("hi", 9.5), p.get("n_points", 20))[:, None]


def table2_responses(p, seed, rep):
    x = table2_points(p)
    prm = baseline.RbfParams(p.get("l", 1.0), p.get("sigma_r", 1.0))
    K = baseline.rbf_gram(x, x, prm) + 1e-8 * np.eye(len(x))
    return np.linalg.cholesky(K) @ np.random.default_rng([seed, rep]).standard_normal(len(x))


def mad(v):
    v = np.asarray(v)
    return float(np.median(np.abs(v - np.median(v))))


def run_table2(cfg, store=None):
    """RBF vs heat-kernel hyperparameters on GP draws in one dimension."""
    p = cfg.params
    store = store or EnsembleStore(cfg.cache_dir, cfg.workers)
    domain = resolve_domain(cfg.domain or "r1")
    x = table2_points(p)
    grid = build_covariance_grid(store.iter(domain, x, cfg.sim), x, cfg.window, domain)
    rows = []
    for rep in range(p.get("replicates", 10)):
        y = table2_responses(p, cfg.seed, rep)
        rb = baseline.fit_rbf(x, y)
        hk = fit(grid, y).hyperparams
        l_h, s_h = heat_to_rbf(hk.t, hk.sigma_h, 1)
        rows.append([rep, rb.params.l, rb.params.sigma_r, hk.t, hk.sigma_h, l_h, s_h])
    rows = np.array(rows)
    p_l = stats.mannwhitneyu(rows[:, 1], rows[:, 5], alternative="two-sided").pvalue
    p_s = stats.mannwhitneyu(rows[:, 2], rows[:, 6], alternative="two-sided").pvalue
    summary = [
        ["normal GP", np.median(rows[:, 1]), mad(rows[:, 1]), np.median(rows[:, 2]), mad(rows[:, 2]), ""],
        ["in-GP", np.median(rows[:, 5]), mad(rows[:, 5]), np.median(rows[:, 6]), mad(rows[:, 6]), ""],
        ["rank test p", p_l, "", p_s, "", ""],
    ]
    out = Path(cfg.output)
    atomic_write_text(out / "table2.csv", csv_text(
        ["replicate", "rbf_l", "rbf_sigma_r", "ingp_t", "ingp_sigma_h", "ingp_l", "ingp_sigma_r"],
        rows))
    atomic_write_text(out / "table2_summary.csv", csv_text(
        ["method", "median_l", "mad_l", "median_sigma", "mad_sigma", ""], summary))
    return {"rows": rows, "p_l": float(p_l), "p_sigma": float(p_s)}


def swiss_inner_mask(points, roll=None):
    """Chart points on the inner half turn, the part that faces the next turn.

    For ``r < r0 + pi`` the layer ``r + 2 pi`` is inside the roll, so these
    points are close in R^3 to points far away along the surface.
    """
    r0 = (roll or SwissRoll()).r_range[0]
    return np.atleast_2d(points)[:, 0] < r0 + math.pi


def run_benchmark(cfg, store=None):
    """In-GP vs RBF GP over noisy replicates; Table-3-style output."""
    p = cfg.params
    name = p.get("name", "ushape")
    noise = p.get("noise_sd")
    if noise is None:
        if "noise_db" not in p:
            raise ConfigError("benchmark needs noise_sd or noise_db")
        noise = baseline.noise_sd_for_db(name, p["noise_db"], p.get("grid_size", 450))
    spec = baseline.BenchmarkSpec(name, p.get("n_train", 20), noise, p.get("grid_size", 450),
                                  cfg.seed)
    store = store or EnsembleStore(cfg.cache_dir, cfg.workers)
    domain = spec.domain()
    train, test, f_train, f_test = baseline.benchmark_design(spec)
    grid = build_covariance_grid(store.iter(domain, train, cfg.sim), train, cfg.window, domain,
                                 test_points=test)
    if name == "swissroll":
        amb_train, amb_test = domain.embed_batch(train), domain.embed_batch(test)
        inner = swiss_inner_mask(test)
    else:
        amb_train, amb_test = train, test
        inner = None
    rows = []
    for rep in range(p.get("replicates", 10)):
        y = baseline.noisy_responses(spec, f_train, rep)
        res = fit(grid, y)
        hp = res.hyperparams
        pin = predict(grid, hp, y, grid.cross_at(hp.t))
        pgp, rb = baseline.gp_fit_predict_rbf(amb_train, y, amb_test)
        row = [rep, baseline.rms(pin.mean, f_test), baseline.rms(pgp.mean, f_test), hp.t,
               hp.sigma_h, hp.sigma_noise, rb.params.l, rb.params.sigma_r, rb.sigma_noise]
        if inner is not None:
            row += [baseline.rms(pin.mean[inner], f_test[inner]),
                    baseline.rms(pgp.mean[inner], f_test[inner])]
        rows.append(row)
    rows = np.array(rows)
    header = ["replicate", "rms_ingp", "rms_gp", "t", "sigma_h", "sigma_noise",
              "rbf_l", "rbf_sigma_r", "rbf_sigma_noise"]
    if inner is not None:
        header += ["rms_inner_ingp", "rms_inner_gp"]
    summary = [["in-GP", rows[:, 1].mean(), rows[:, 1].std(ddof=1) if len(rows) > 1 else 0.0],
               ["normal GP", rows[:, 2].mean(), rows[:, 2].std(ddof=1) if len(rows) > 1 else 0.0]]
    out = Path(cfg.output)
    atomic_write_text(out / "benchmark.csv", csv_text(header, rows))
    atomic_write_text(out / "benchmark_summary.csv", csv_text(["method", "mean_rms", "sd"], summary))
    return {"rows": rows, "header": header, "noise_sd": noise}
