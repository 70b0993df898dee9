"""Metrics, experiment harnesses and machine-readable reports.

Three protocols are covered:

* a Laplacian-regularizer comparison: dictionaries and codes are learnt on
  labelled samples only under the reduced objective

      min_{A, D in C} ||X_l - D A||_F^2 + beta tr(A L A^T) + lam ||A||_1,

  a ridge classifier is fit on the resulting codes, test samples are coded
  with the matching regularized rule, and the best error per Laplacian
  variant over a hyper-parameter grid is reported (optionally across noise
  levels applied to both training and testing samples);
* a sweep over the number of unlabelled training samples per class;
* a benchmark split with mean/std accuracy over repetitions.

All randomness is derived from one master seed, so reports are reproducible
bit for bit (wall-clock fields aside).  Grid cells are keyed, not appended,
so parallel execution cannot reorder results.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (LabeledDataset, SplitSpec, add_gaussian_noise,
                   labels_to_matrix, split)
from .errors import InvalidConfigurationError
from .graph import (GaussianGraphParams, build_gaussian_knn_laplacian,
                    build_lle_graph, build_threshold_laplacian,
                    laplacian_quadratic, pairwise_distance_quantile)
from .inference import encode, encode_anchored, predict_batch
from .model import (Classifier, HyperParams, classifier_init,
                    dictionary_update, sparse_coding)
from .solver import FistaParams
from .trainer import TrainConfig, init_codes, init_dictionary, train

Array = np.ndarray

VARIANTS = ("none", "lle", "gaussian-knn", "threshold")

DEFAULT_SWEEP_COUNTS = (2, 5, 10, 20, 50, 100, 150)

# default hyper-parameter sweeps; every entry can be overridden per run
DEFAULT_GRID = {
    "beta": [0.01, 0.1, 1.0, 10.0, 100.0],
    "k": [2, 3, 4, 5, 6, 7, 8, 9],
    "sigma": [0.1, 1.0, 10.0, 15.0, 30.0, 1000.0],
    "zeta": [0.03, 0.05, 0.1, 0.15, 0.3, 0.5, 0.7],
    "ridge": [0.1, 1.0, 10.0],
}


@dataclass
class ExperimentReport:
    name: str
    config: dict
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)


def accuracy(predicted, truth) -> float:
    """Fraction of exact matches."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise InvalidConfigurationError(
            f"length mismatch: {predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise InvalidConfigurationError("accuracy of an empty prediction "
                                        "set is undefined")
    return float(np.mean(predicted == truth))


def derived_seed(master: int, *tags: int) -> int:
    """A reproducible child seed for the given tag path."""
    return int(np.random.SeedSequence((master,) + tags).generate_state(1)[0])


def ridge_classifier_fit(A_l: Array, Y: Array,
                         mu_over_gamma: float) -> Classifier:
    """Closed-form one-vs-all ridge on labelled codes (bias included)."""
    return classifier_init(A_l, Y, gamma=1.0, mu=mu_over_gamma)


def ridge_classifier_predict(clf: Classifier, A: Array) -> Array:
    return np.argmax(clf.scores(A), axis=0)


def reduced_objective(X: Array, D: Array, A: Array, graph, lam: float,
                      beta: float) -> float:
    R = X - D @ A
    val = float(np.vdot(R, R)) + lam * float(np.abs(A).sum())
    if graph is not None and beta != 0.0:
        val += beta * laplacian_quadratic(graph.L, A)
    return val


def train_reduced(X: Array, labels: Array, graph, lam: float, beta: float,
                  p: int, alpha: float, fista_params: FistaParams,
                  outer_iters: int, rel_tol: float,
                  rng: np.random.Generator):
    """Alternate sparse coding and dictionary update under the reduced
    objective (no classifier in the loop); returns (D, A, history)."""
    hp = HyperParams(lam=lam, beta=beta, gamma=0.0, mu=0.0, alpha=alpha,
                     p=p, k=max(graph.k, 1) if graph is not None else 1)
    D = init_dictionary(X, labels, p, alpha, rng)
    A = init_codes(X, D, lam, fista_params)
    history = []
    prev = None
    for _ in range(outer_iters):
        A, _ = sparse_coding(A, X, D, graph, None, None, None, None, hp,
                             fista_params)
        D, _ = dictionary_update(D, X, A, alpha, fista_params)
        obj = reduced_objective(X, D, A, graph, lam, beta)
        history.append(obj)
        if prev is not None and abs(prev - obj) <= rel_tol * max(1.0, abs(prev)):
            break
        prev = obj
    return D, A, history


def encode_test_samples(variant: str, X_test: Array, X_train: Array,
                        A_train: Array, D: Array, lam: float, beta: float,
                        omega: float, fista_params: FistaParams,
                        k: int = 0, sigma: float = 1.0,
                        kappa: float = 0.0) -> Array:
    """Code test columns with the regularizer matching the training variant.

    "none" is the plain lasso.  "lle" anchors each code to the barycentric
    combination of its k nearest training codes with weight beta * omega.
    The Gaussian variants penalize beta * omega * sum_j w_j/2 ||a - a_j||^2
    over the variant's support (k nearest training samples, or the training
    samples within kappa), which collapses to an anchored pull of strength
    beta * omega * (sum_j w_j) / 2 toward the weighted mean code.
    """
    p = D.shape[1]
    M = X_test.shape[1]
    codes = np.zeros((p, M))
    hp = HyperParams(lam=lam, beta=beta, p=p, k=max(k, 1))
    for j in range(M):
        x = X_test[:, j]
        if variant == "none" or beta == 0.0 or omega == 0.0:
            codes[:, j] = encode_anchored(x, D, lam, 0.0, None, fista_params)
        elif variant == "lle":
            codes[:, j] = encode(x, D, A_train, X_train, hp, fista_params,
                                 omega).code
        elif variant in ("gaussian-knn", "threshold"):
            d2 = np.sum((X_train - x[:, None]) ** 2, axis=0)
            if variant == "gaussian-knn":
                support = np.argsort(d2, kind="stable")[:k]
            else:
                support = np.where(np.sqrt(d2) < kappa)[0]
            w = np.exp(-d2[support] / (2.0 * sigma * sigma))
            total = float(w.sum())
            if total <= 0.0 or support.size == 0:
                codes[:, j] = encode_anchored(x, D, lam, 0.0, None,
                                              fista_params)
            else:
                anchor = (A_train[:, support] @ w) / total
                coeff = 0.5 * beta * omega * total
                codes[:, j] = encode_anchored(x, D, lam, coeff, anchor,
                                              fista_params)
        else:
            raise InvalidConfigurationError(f"unknown variant {variant!r}")
    return codes


def _variant_cells(variant: str, grid: dict):
    """The hyper-parameter combinations swept for one variant."""
    if variant == "none":
        return [{"beta": 0.0, "k": None, "sigma": None, "zeta": None}]
    if variant == "lle":
        combos = itertools.product(grid["beta"], grid["k"])
        return [{"beta": b, "k": k, "sigma": None, "zeta": None}
                for b, k in combos]
    if variant == "gaussian-knn":
        combos = itertools.product(grid["beta"], grid["k"], grid["sigma"])
        return [{"beta": b, "k": k, "sigma": s, "zeta": None}
                for b, k, s in combos]
    if variant == "threshold":
        combos = itertools.product(grid["beta"], grid["sigma"], grid["zeta"])
        return [{"beta": b, "k": None, "sigma": s, "zeta": z}
                for b, s, z in combos]
    raise InvalidConfigurationError(f"unknown variant {variant!r}")


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_laplacian_comparison(train_ds: LabeledDataset,
                             test_ds: LabeledDataset,
                             variants=("none", "lle"),
                             grid: dict | None = None,
                             noise_levels=(0.0,),
                             seed: int = 0,
                             lam: float = 0.5,
                             p: int = 128,
                             alpha: float = 1.0,
                             fista_params: FistaParams | None = None,
                             outer_iters: int = 15,
                             rel_tol: float = 1e-4,
                             init_seeds: int = 3,
                             jobs: int = 1) -> ExperimentReport:
    """Grid-search each Laplacian variant on labelled-only training.

    Per grid cell the reduced model is trained from init_seeds random
    dictionary initializations and the best (lowest) test error over seeds
    and cells is reported per variant and noise level.
    """
    grid = {**DEFAULT_GRID, **(grid or {})}
    fista_params = fista_params or FistaParams()
    for v in variants:
        if v not in VARIANTS:
            raise InvalidConfigurationError(f"unknown variant {v!r}")
    config = {
        "experiment": "laplacian-comparison",
        "variants": list(variants), "grid": grid,
        "noise_levels": [float(s) for s in noise_levels], "seed": seed,
        "lam": lam, "p": p, "alpha": alpha, "outer_iters": outer_iters,
        "rel_tol": rel_tol, "init_seeds": init_seeds,
    }
    Y_l = labels_to_matrix(train_ds.y, train_ds.class_count)
    N_l = train_ds.X.shape[1]

    tasks = []
    for ni, noise in enumerate(noise_levels):
        X_l = add_gaussian_noise(train_ds.X, noise, derived_seed(seed, 1, ni))
        X_t = add_gaussian_noise(test_ds.X, noise, derived_seed(seed, 2, ni))
        for vi, variant in enumerate(variants):
            for ci, cell in enumerate(_variant_cells(variant, grid)):
                for si in range(init_seeds):
                    tasks.append((ni, float(noise), X_l, X_t, vi, variant,
                                  ci, cell, si))

    def run_task(task):
        ni, noise, X_l, X_t, vi, variant, ci, cell, si = task
        t0 = time.perf_counter()
        graph = None
        kappa = 0.0
        if variant == "lle" and cell["beta"] != 0.0:
            graph = build_lle_graph(X_l, cell["k"], trace_target=float(N_l))
        elif variant == "gaussian-knn":
            graph = build_gaussian_knn_laplacian(
                X_l, GaussianGraphParams(sigma=cell["sigma"], k=cell["k"]),
                trace_target=float(N_l))
        elif variant == "threshold":
            graph = build_threshold_laplacian(
                X_l, GaussianGraphParams(sigma=cell["sigma"],
                                         zeta=cell["zeta"]),
                trace_target=float(N_l))
            kappa = pairwise_distance_quantile(X_l, cell["zeta"])
        rng = np.random.default_rng(derived_seed(seed, 3, ni, vi, ci, si))
        D, A, history = train_reduced(
            X_l, train_ds.y, graph, lam, cell["beta"], p, alpha,
            fista_params, outer_iters, rel_tol, rng)
        omega = graph.omega if graph is not None else 0.0
        codes = encode_test_samples(
            variant, X_t, X_l, A, D, lam, cell["beta"], omega, fista_params,
            k=cell["k"] or 0, sigma=cell["sigma"] or 1.0, kappa=kappa)
        elapsed = time.perf_counter() - t0
        rows = []
        for ridge in grid["ridge"]:
            clf = ridge_classifier_fit(A, Y_l, ridge)
            pred = ridge_classifier_predict(clf, codes)
            acc = accuracy(pred, test_ds.y)
            rows.append({
                "noise": noise, "variant": variant, "beta": cell["beta"],
                "k": cell["k"], "sigma": cell["sigma"], "zeta": cell["zeta"],
                "ridge": ridge, "init_seed": si, "accuracy": acc,
                "error": 1.0 - acc, "objective_len": len(history),
                "wall_time_s": elapsed,
            })
        return rows

    rows = [row for chunk in _parallel_map(run_task, tasks, jobs)
            for row in chunk]
    aggregates = []
    for ni, noise in enumerate(noise_levels):
        for variant in variants:
            sub = [r for r in rows
                   if r["variant"] == variant and r["noise"] == float(noise)]
            best = min(sub, key=lambda r: r["error"])
            aggregates.append({
                "noise": float(noise), "variant": variant,
                "best_error": best["error"],
                "best_accuracy": best["accuracy"], "beta": best["beta"],
                "k": best["k"], "sigma": best["sigma"], "zeta": best["zeta"],
                "ridge": best["ridge"], "init_seed": best["init_seed"],
                "n_rows": len(sub),
            })
    return ExperimentReport(name="laplacian-comparison", config=config,
                            rows=rows, aggregates=aggregates)


def predict_unlabelled(state) -> Array:
    """Transductive prediction: argmax classifier score on unlabelled codes."""
    return np.argmax(state.clf.scores(state.A[:, state.n_labelled:]), axis=0)


def _train_and_score(ds: LabeledDataset, spec: SplitSpec, config: TrainConfig):
    """One full pipeline run; returns (state, split, test/unlabelled accuracy)."""
    sp = split(ds, spec)
    X = np.hstack([sp.X_l, sp.X_u])
    state = train(X, sp.Y, config)
    acc_u = None
    if sp.X_u.shape[1]:
        acc_u = accuracy(predict_unlabelled(state), sp.y_u)
    classes, _ = predict_batch(state.clf, state.D, state.A, X, sp.X_test,
                               state.hp, config.fista, state.graph.omega)
    acc_t = accuracy(classes, sp.y_test)
    return state, sp, acc_t, acc_u


def run_unlabelled_sweep(ds: LabeledDataset, counts, config: TrainConfig,
                         repetitions: int = 5, labelled_per_class: int = 20,
                         test_per_class: int = 100,
                         jobs: int = 1) -> ExperimentReport:
    """Train at each unlabelled-per-class count; report transductive and
    test accuracy averaged over repetitions (count 0 is the supervised
    baseline)."""
    if test_per_class < 1:
        raise InvalidConfigurationError("sweep needs test_per_class >= 1")
    cfg = {
        "experiment": "unlabelled-sweep", "counts": [int(c) for c in counts],
        "repetitions": repetitions, "labelled_per_class": labelled_per_class,
        "test_per_class": test_per_class, "seed": config.seed,
        "hp": vars(config.hp).copy(),
    }
    tasks = [(ci, int(count), rep) for ci, count in enumerate(counts)
             for rep in range(repetitions)]

    def run_task(task):
        ci, count, rep = task
        t0 = time.perf_counter()
        spec = SplitSpec(labelled_per_class, count, test_per_class,
                         seed=derived_seed(config.seed, 11, ci, rep))
        run_cfg = replace(config, seed=derived_seed(config.seed, 12, ci, rep))
        state, _, acc_t, acc_u = _train_and_score(ds, spec, run_cfg)
        return {
            "count": count, "repetition": rep, "accuracy": acc_t,
            "error": 1.0 - acc_t, "unlabelled_accuracy": acc_u,
            "objective_len": len(state.history),
            "wall_time_s": time.perf_counter() - t0,
        }

    rows = _parallel_map(run_task, tasks, jobs)
    aggregates = []
    for count in counts:
        sub = [r for r in rows if r["count"] == int(count)]
        accs = np.array([r["accuracy"] for r in sub])
        agg = {"count": int(count), "mean_accuracy": float(accs.mean()),
               "std_accuracy": float(accs.std()), "n_rows": len(sub)}
        if sub[0]["unlabelled_accuracy"] is not None:
            uacc = np.array([r["unlabelled_accuracy"] for r in sub])
            agg["mean_unlabelled_accuracy"] = float(uacc.mean())
            agg["std_unlabelled_accuracy"] = float(uacc.std())
        else:
            agg["mean_unlabelled_accuracy"] = None
            agg["std_unlabelled_accuracy"] = None
        aggregates.append(agg)
    return ExperimentReport(name="unlabelled-sweep", config=cfg, rows=rows,
                            aggregates=aggregates)


def run_benchmark(ds: LabeledDataset, spec: SplitSpec, config: TrainConfig,
                  repetitions: int = 5, include_beta0_ablation: bool = False,
                  jobs: int = 1) -> ExperimentReport:
    """Full pipeline on a fixed split protocol, mean +/- std over seeds.

    With include_beta0_ablation, the same splits are rerun with beta = 0 so
    the manifold term's contribution is directly comparable.
    """
    if spec.test_per_class < 1:
        raise InvalidConfigurationError("benchmark needs test_per_class >= 1")
    cfg = {
        "experiment": "benchmark", "repetitions": repetitions,
        "split": {"labelled_per_class": spec.labelled_per_class,
                  "unlabelled_per_class": spec.unlabelled_per_class,
                  "test_per_class": spec.test_per_class},
        "seed": config.seed, "hp": vars(config.hp).copy(),
        "include_beta0_ablation": include_beta0_ablation,
    }
    variants = [("full", config)]
    if include_beta0_ablation:
        hp0 = replace(config.hp, beta=0.0)
        variants.append(("beta0", replace(config, hp=hp0)))
    tasks = [(name, vcfg, rep) for name, vcfg in variants
             for rep in range(repetitions)]

    def run_task(task):
        name, vcfg, rep = task
        t0 = time.perf_counter()
        run_spec = replace(spec, seed=derived_seed(config.seed, 21, rep))
        run_cfg = replace(vcfg, seed=derived_seed(config.seed, 22, rep))
        state, _, acc_t, acc_u = _train_and_score(ds, run_spec, run_cfg)
        return {
            "variant": name, "repetition": rep, "accuracy": acc_t,
            "error": 1.0 - acc_t, "unlabelled_accuracy": acc_u,
            "objective_len": len(state.history),
            "wall_time_s": time.perf_counter() - t0,
        }

    rows = _parallel_map(run_task, tasks, jobs)
    aggregates = []
    for name, _ in variants:
        sub = [r for r in rows if r["variant"] == name]
        accs = np.array([r["accuracy"] for r in sub])
        aggregates.append({
            "variant": name, "mean_accuracy": float(accs.mean()),
            "std_accuracy": float(accs.std()), "n_rows": len(sub),
        })
    return ExperimentReport(name="benchmark", config=cfg, rows=rows,
                            aggregates=aggregates)


# ---------------------------------------------------------------------------
# report files

def _cell_to_text(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _cell_from_text(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def emit_report(report: ExperimentReport, path, fmt: str = "structured"):
    """Write the report as JSON ("structured") or delimited text ("csv")."""
    if fmt == "structured":
        payload = {"name": report.name, "config": report.config,
                   "rows": report.rows, "aggregates": report.aggregates}
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        with open(path, "w") as f:
            f.write(f"# name={report.name}\n")
            f.write("# config=" + json.dumps(report.config, sort_keys=True)
                    + "\n")
            for marker, table in (("rows", report.rows),
                                  ("aggregates", report.aggregates)):
                f.write(f"# section={marker}\n")
                if not table:
                    continue
                keys = list(table[0].keys())
                f.write(",".join(keys) + "\n")
                for row in table:
                    f.write(",".join(_cell_to_text(row[k]) for k in keys)
                            + "\n")
    else:
        raise InvalidConfigurationError(f"unknown report format {fmt!r}")


def parse_report(path, fmt: str = "structured") -> ExperimentReport:
    """Read back a file produced by emit_report."""
    if fmt == "structured":
        with open(path) as f:
            payload = json.load(f)
        return ExperimentReport(name=payload["name"],
                                config=payload["config"],
                                rows=payload["rows"],
                                aggregates=payload["aggregates"])
    if fmt != "csv":
        raise InvalidConfigurationError(f"unknown report format {fmt!r}")
    name = ""
    config = {}
    tables = {"rows": [], "aggregates": []}
    section = None
    keys = None
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# name="):
                name = line[len("# name="):]
            elif line.startswith("# config="):
                config = json.loads(line[len("# config="):])
            elif line.startswith("# section="):
                section = line[len("# section="):]
                keys = None
            elif section is not None:
                cells = line.split(",")
                if keys is None:
                    keys = cells
                else:
                    tables[section].append(
                        {k: _cell_from_text(c) for k, c in zip(keys, cells)})
    return ExperimentReport(name=name, config=config, rows=tables["rows"],
                            aggregates=tables["aggregates"])
