"""Config-driven experiment and spectral-study runners writing CSV.

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
Unknown keys are rejected.  See :data:`SCHEMA` for keys and defaults.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import covariance as cov
from .krylov import gmres, minres
from .lprecond import L0, LI, LM, exact_L
from .models import HeatModel, Lorenz96Model
from .rprecond import auto_gamma, make_rhat
from .saddle_ops import Counters, PreconditionerSpec, SaddleOperator, SaddleProblem, make_dhat
from .sparse_core import DENSE_THRESHOLD, SparseSym
from . import spectra

log = logging.getLogger(__name__)


def _ints(v):
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)


def _words(v):
    return tuple(x for x in str(v).replace(" ", "").split(",") if x)


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    return None if str(v).strip().lower() in ("", "none", "auto") else float(v)


def _opt_int(v):
    return None if str(v).strip().lower() in ("", "none", "auto") else int(v)


# key: (parser, default)
SCHEMA = {
    "model": (str, "lorenz"),           # lorenz | heat
    "s": (int, 250),
    "p": (_opt_int, None),              # defaults to round(p_ratio * s)
    "p_ratio": (float, 0.5),
    "N": (int, 15),
    "steps": (int, 10),                 # model steps per subwindow
    "dt": (float, 1e-4),                # Lorenz time step
    "forcing": (float, 8.0),
    "spinup": (int, 1000),
    "r": (float, 0.4),                  # heat: alpha dt / dx^2
    "D": (str, "soar"),                 # soar | identity
    "delta": (float, 0.01),             # ridge shift inside D_hat
    "smoothing": (_bool, True),
    "r_blocks": (int, 5),
    "r_density": (float, 0.1),
    "r_amplitude": (float, 8.0),        # SOAR amplitude inside R_i's diagonal blocks
    "k_list": (_ints, (1, 2, 3, 4, 8, 16)),
    "lhat": (_words, ("L0", "LM")),     # L0, LI, LM (expanded over k_list), L
    "rhat": (_words, ("diag", "block", "rr", "me", "exact")),
    "shapes": (_words, ("PD", "PI")),
    "gamma_rule": (str, "lambda_min"),  # lambda_min | one
    "block_tol": (_opt_float, None),
    "block_maxsize": (_opt_int, None),
    "block_numproc": (_opt_int, None),
    "tol": (float, 1e-6),
    "maxit": (int, 1000),
    "seed": (int, 0),
    # spectral study
    "spec_k_list": (_ints, (3,)),
    "spec_nblocks": (_ints, (4, 5, 6, 7)),  # values of N + 1
    "thm_s": (int, 20),
    "thm_p": (int, 10),
    "thm_N": (int, 3),
    "thm_k": (int, 3),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def p_eff(self):
        p = self.values["p"]
        return p if p is not None else max(1, int(round(self.values["p_ratio"] * self.values["s"])))

    def canonical(self):
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def replace(self, **kw):
        vals = dict(self.values)
        for k, v in kw.items():
            if k not in SCHEMA:
                raise KeyError(f"unknown config key {k!r}")
            vals[k] = v
        cfg = ExperimentConfig(vals)
        validate(cfg)
        return cfg


def validate(cfg: ExperimentConfig):
    v = cfg.values
    if v["model"] not in ("lorenz", "heat"):
        raise ValueError(f"model must be lorenz or heat, got {v['model']!r}")
    if v["D"] not in ("soar", "identity"):
        raise ValueError("D must be soar or identity")
    if cfg.p_eff > v["s"]:
        raise ValueError("p must not exceed s")
    if v["N"] < 0:
        raise ValueError("N must be nonnegative")
    for k in v["k_list"]:
        if not 1 <= k <= v["N"] + 1:
            raise ValueError(f"k={k} outside [1, N+1]")
    for l in v["lhat"]:
        if l not in ("L0", "LI", "LM", "L"):
            raise ValueError(f"unknown L_hat {l!r}")
    for s in v["shapes"]:
        if s not in ("PD", "PI"):
            raise ValueError(f"unknown shape {s!r}")


def parse_config(text: str, **overrides) -> ExperimentConfig:
    vals = {k: d for k, (_, d) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in SCHEMA:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        vals[key] = SCHEMA[key][0](val)
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in SCHEMA:
            raise ValueError(f"unknown key {key!r}")
        vals[key] = SCHEMA[key][0](val) if isinstance(val, str) else val
    cfg = ExperimentConfig(vals)
    validate(cfg)
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


@dataclass
class Built:
    """Everything a grid of solves shares."""

    config: ExperimentConfig
    problem: SaddleProblem
    blocks: list
    Ri: SparseSym
    pvec: tuple
    rhs: np.ndarray


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def build(cfg: ExperimentConfig) -> Built:
    s, p, N = cfg.s, cfg.p_eff, cfg.N
    g_b, g_q, g_h, g_rhs, g_r = _streams(cfg.seed, 5)
    if cfg.model == "lorenz":
        model = Lorenz96Model(s, forcing=cfg.forcing, dt=cfg.dt, steps=cfg.steps)
        blocks, _ = model.window(model.spun_up_state(cfg.spinup), N)
    else:
        blocks = HeatModel(s, r=cfg.r, steps=cfg.steps).window(N)
    if cfg.D == "identity":
        B = Q = SparseSym.identity(s)
    else:
        B = cov.build_circulant_spd(cov.SoarSpec(s=s, **cov.B_SOAR), rng=g_b)
        Q = cov.build_circulant_spd(cov.SoarSpec(s=s, **cov.Q_SOAR), rng=g_q)
    pvec = cov.default_pvec(p, cfg.r_blocks)
    rseed = int(g_r.integers(0, 2**63 - 1))
    soar = dict(cov.R_SOAR, amplitude=cfg.r_amplitude)
    Ri = cov.build_block_R(cov.BlockRSpec(pvec=pvec, density=cfg.r_density, seed=rseed, soar=soar))
    H = cov.build_obs_operator(s, p, smoothing=cfg.smoothing, rng=g_h)
    problem = SaddleProblem(cov.assemble_D(B, Q, N), cov.assemble_R(Ri, N), H,
                            exact_L(blocks, s))
    rhs = np.concatenate([g_rhs.standard_normal((N + 1) * s),
                          g_rhs.standard_normal((N + 1) * p),
                          np.zeros((N + 1) * s)])
    return Built(cfg, problem, blocks, Ri, pvec, rhs)


def lhat_grid(cfg: ExperimentConfig, blocks, s):
    """``(label, k, operator)`` for every requested L_hat."""
    out = []
    N = cfg.N
    for name in cfg.lhat:
        if name == "L0":
            out.append(("L0", 1, L0(s, N)))
        elif name == "LI":
            out.append(("LI", 0, LI(s, N)))
        elif name == "L":
            out.append(("L", N + 1, exact_L(blocks, s)))
        else:
            out.extend(("LM", k, LM(blocks, k, s)) for k in cfg.k_list)
    return out


def rhat_for(cfg: ExperimentConfig, variant, Ri, pvec):
    if variant == "block":
        return make_rhat("block", Ri, pvec, tol=cfg.block_tol, maxsize=cfg.block_maxsize,
                         numproc=cfg.block_numproc)
    if variant == "rr":
        return make_rhat("rr", Ri, gamma=auto_gamma(Ri, cfg.gamma_rule))
    return make_rhat(variant, Ri)


def solve_cell(problem, shape, lhat, rhat, dhat, rhs, tol, maxit):
    counters = Counters()
    A = SaddleOperator(problem, counters)
    spec = PreconditionerSpec(problem, shape, lhat, rhat, dhat if shape == "PD" else None,
                              counters)
    if shape == "PD":
        return minres(A, spec, rhs, tol, maxit, counters=counters, name=spec.name)
    return gmres(A, spec, rhs, tol, maxit, counters=counters)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(row[h]) for h in header])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


COUNT_KEYS = ("R", "Rhat_inv", "D", "Dhat_inv", "M", "L", "Lt", "Lhat_inv", "Lhat_inv_t", "A", "P")
EXPERIMENT_HEADER = (["model", "s", "p", "N", "shape", "solver", "lhat", "k", "rhat",
                      "iterations", "converged", "rel_residual", "true_rel_residual"]
                     + [f"count_{c}" for c in COUNT_KEYS] + ["wallclock_s", "fingerprint"])


def run_experiment(cfg: ExperimentConfig, out_dir=None):
    """Solve every (shape, L_hat, R_hat, k) cell; returns the rows, writes ``experiment.csv``."""
    b = build(cfg)
    pb = b.problem
    dhat = make_dhat(pb.D, cfg.delta) if "PD" in cfg.shapes else None
    lhats = lhat_grid(cfg, b.blocks, pb.s)
    fp = cfg.fingerprint()
    rows = []
    for rname in cfg.rhat:
        rhat = rhat_for(cfg, rname, b.Ri, b.pvec)
        for shape in cfg.shapes:
            for lname, k, lhat in lhats:
                _, rep = solve_cell(pb, shape, lhat, rhat, dhat, b.rhs, cfg.tol, cfg.maxit)
                if not rep.converged:
                    log.warning("cell %s/%s(k=%s)/%s did not converge", shape, lname, k, rname)
                row = dict(model=cfg.model, s=pb.s, p=pb.p, N=pb.N, shape=shape,
                           solver=rep.method, lhat=lname, k=k, rhat=rname,
                           iterations=rep.iterations, converged=rep.converged,
                           rel_residual=rep.relative_residual,
                           true_rel_residual=rep.final_true_residual,
                           wallclock_s=rep.wallclock_s, fingerprint=fp)
                for c in COUNT_KEYS:
                    row[f"count_{c}"] = rep.counts.get(c, 0)
                rows.append(row)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "experiment.csv"), EXPERIMENT_HEADER, rows)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8", newline="") as fh:
            fh.write(cfg.canonical())
    return rows


# ---------------------------------------------------------------------------
# Spectral study
# ---------------------------------------------------------------------------

MODEL_HEADER = ["model", "s", "N_plus_1", "k", "unit_formula", "unit_computed", "lambda_min",
                "lambda_max", "upper_bound", "bound_holds", "mu_max", "mode", "fingerprint"]
THEOREM_HEADER = ["lhat", "k", "rhat", "bound_min", "bound_max_neg", "bound_min_pos",
                  "bound_max", "computed_min", "computed_max_neg", "computed_min_pos",
                  "computed_max", "contained", "fingerprint"]


def model_spectrum_rows(cfg: ExperimentConfig):
    s = cfg.s
    rows = []
    fp = cfg.fingerprint()
    if cfg.model == "heat":
        heat = HeatModel(s, r=cfg.r, steps=cfg.steps)
        mu_max = float(np.max(np.abs(np.linalg.eigvalsh(heat.subwindow_block().dense()))))
    else:
        model = Lorenz96Model(s, forcing=cfg.forcing, dt=cfg.dt, steps=cfg.steps)
        x0 = model.spun_up_state(cfg.spinup)
        mu_max = float("nan")
    for nb in cfg.spec_nblocks:
        N = nb - 1
        if cfg.model == "heat":
            blocks = heat.window(N)
        else:
            blocks, _ = model.window(x0, N)
        L = exact_L(blocks, s)
        for k in cfg.spec_k_list:
            if not 2 <= k <= nb:
                continue
            Lm = LM(blocks, k, s)
            if nb * s <= DENSE_THRESHOLD:
                ev = spectra.preconditioned_model_spectrum(L, Lm, "dense")
                lo, hi, unit, mode = ev[0], ev[-1], spectra.count_unit(ev), "dense"
            else:
                a, c = spectra.preconditioned_model_spectrum(L, Lm, "extremes")
                lo, hi, unit, mode = a[0], c[0], -1, "extremes"
            # the bounds need constant symmetric blocks with spectral radius <= 1
            bound = spectra.applicable_upper_bound(N, k) if cfg.model == "heat" else float("nan")
            rows.append(dict(model=cfg.model, s=s, N_plus_1=nb, k=k,
                             unit_formula=spectra.unit_eigenvalue_count(N, k, s),
                             unit_computed=unit, lambda_min=lo, lambda_max=hi,
                             upper_bound=bound,
                             bound_holds=(hi <= bound + 1e-10) if cfg.model == "heat" else "",
                             mu_max=mu_max, mode=mode, fingerprint=fp))
    return rows


def theorem_rows(cfg: ExperimentConfig):
    """Interval bounds against computed extremes with ``D = I`` at desk scale."""
    small = cfg.replace(s=cfg.thm_s, p=cfg.thm_p, N=cfg.thm_N, D="identity",
                        k_list=(cfg.thm_k,), lhat=("L0", "LM"))
    b = build(small)
    pb = b.problem
    dhat = make_dhat(pb.D, small.delta)
    fp = cfg.fingerprint()
    rows = []
    for lname, k, lhat in lhat_grid(small, b.blocks, pb.s):
        for rname in cfg.rhat:
            rhat = rhat_for(small, rname, b.Ri, b.pvec)
            spec = PreconditionerSpec(pb, "PD", lhat, rhat, dhat)
            iv = spectra.theorem31_intervals(spectra.spectral_summary(spec))
            ev = spectra.preconditioned_saddle_eigenvalues(spec)
            neg, pos = ev[ev < 0], ev[ev > 0]
            rows.append(dict(lhat=lname, k=k, rhat=rname,
                             bound_min=iv.negative[0], bound_max_neg=iv.negative[1],
                             bound_min_pos=iv.positive[0], bound_max=iv.positive[1],
                             computed_min=ev[0],
                             computed_max_neg=neg[-1] if neg.size else float("nan"),
                             computed_min_pos=pos[0] if pos.size else float("nan"),
                             computed_max=ev[-1], contained=bool(np.all(iv.contains(ev))),
                             fingerprint=fp))
    return rows


def run_spectral_study(cfg: ExperimentConfig, out_dir=None):
    mrows = model_spectrum_rows(cfg)
    trows = theorem_rows(cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "spectra_model.csv"), MODEL_HEADER, mrows)
        write_csv(os.path.join(out_dir, "spectra_theorem.csv"), THEOREM_HEADER, trows)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8", newline="") as fh:
            fh.write(cfg.canonical())
    return mrows, trows
