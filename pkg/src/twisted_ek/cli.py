"""Command-line runner: ``run <config.json>``, ``describe <preset>``, ``version``.

Exit status: 0 when every requested check passed, 1 when a check failed,
2 for configuration or usage errors, 3 when a stage raised.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .domains import EnvelopeSet
from .envelope import agreement_gap, build_envelope, verify_sandwich
from .estimates import (
    TEST_FUNCTIONS,
    dyadic_scan,
    holder_seminorm,
    lemma_terms,
    positive_part_max,
    quadratic_approx,
    random_third_derivative,
    rigidity_scan,
    supersolution_residual,
)
from .grid import write_field_binary, write_field_csv
from .operators import DomainError, describe, make_operator
from .solver import SolveConfig, solve_dirichlet
from .structure import SCHEMA_VERSION, certify

OUTPUT_ENV = "TWISTEDEK_OUTPUT"
DEFAULT_OUTPUT = "twisted-ek-output"
EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_STAGE = 0, 1, 2, 3

log = logging.getLogger("twisted_ek")


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


class Runner:
    """Executes the stages of one experiment and records outputs and verdicts."""

    def __init__(self, cfg: ExperimentConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.op = make_operator(cfg.equation.preset, **cfg.equation.params)
        self.rng = np.random.default_rng(cfg.seed)
        self.files: dict[str, str] = {}
        self.checks: dict[str, bool] = {}
        self.fields = []

    def _seed(self) -> int:
        return int(self.rng.integers(2 ** 31 - 1))

    def write(self, name: str, text: str | bytes | None = None, path: Path | None = None) -> None:
        target = self.out / name
        if text is not None:
            data = text.encode() if isinstance(text, str) else text
            target.write_bytes(data)
        self.files[name] = hashlib.sha256(target.read_bytes()).hexdigest()

    def report(self, name: str, kind: str, body: dict) -> None:
        self.write(name, dumps({"schema_version": SCHEMA_VERSION, "kind": kind, **body}))

    def check(self, name: str, ok: bool) -> bool:
        self.checks[name] = bool(ok)
        if not ok:
            log.warning("check failed: %s", name)
        return bool(ok)

    # -- stages -----------------------------------------------------------

    def structure(self):
        opts = self.cfg.options.structure
        cert = certify(self.op, opts.trials, self._seed())
        self.check("structure", cert.passed)
        self.write("structure.json", dumps(cert.to_dict()))

    def envelope(self):
        opts, tol = self.cfg.options.envelope, self.cfg.tolerances
        dom = self.op.domain
        if not isinstance(dom, EnvelopeSet):
            raise DomainError("the envelope stage needs an operator declared on a block band")
        seed = self._seed()
        env = build_envelope(self.op.fcup, dom, opts.nMinorants, opts.nBaseSamples, opts.family, seed)
        coarse = build_envelope(self.op.fcup, dom, opts.refinementFrom, None, opts.family, seed)
        gap_seed = self._seed()
        gap = agreement_gap(env, self.op.fcup, dom, seed=gap_seed)
        gap_coarse = agreement_gap(coarse, self.op.fcup, dom, seed=gap_seed)
        rep = verify_sandwich(env, dom, opts.trials, tol.sandwich, self._seed())
        ok = [self.check("envelope.sandwich", not rep.violations),
              self.check("envelope.gap", gap <= tol.envelopeGap),
              self.check("envelope.refinement", gap * tol.envelopeRefinement <= gap_coarse)]
        self.write("envelope.json", dumps(env.to_dict()))
        self.report("envelope_check.json", "envelope-check", {
            "family": opts.family, "minorants": len(env), "agreementGap": gap,
            "agreementGapCoarse": {"minorants": opts.refinementFrom, "gap": gap_coarse},
            "sandwich": rep.to_dict(), "violations": len(rep.violations), "passed": all(ok)})

    def solve(self):
        g_cfg, tol = self.cfg.grid, self.cfg.tolerances
        a11, a12, a22 = g_cfg.boundary.quadratic

        def g(X, Y):
            return 0.5 * (a11 * X * X + 2 * a12 * X * Y + a22 * Y * Y)

        scfg = SolveConfig(residual_tol=tol.residualTol)
        levels = []
        P = g_cfg.pointsPerSide
        for _ in range(g_cfg.refinements + 1):
            u = solve_dirichlet(self.op, g_cfg.rhs, g, cfg=scfg, points=P, domain=g_cfg.domain,
                                warm_start="coarse" if g_cfg.warmStart == "coarse" else None)
            self.fields.append(u)
            entry = {"pointsPerSide": P, "h": u.h, "iterations": u.meta["iterations"],
                     "maxResidual": u.meta["max_residual"], "residualHistory": u.meta["residual_history"],
                     "stepLengths": u.meta["step_lengths"], "warnings": u.meta["warnings"]}
            if g_cfg.fieldFormat == "binary":
                name = f"field_{P}.bin"
                write_field_binary(u, self.out / name)
                self.write(name)
                entry["file"] = name
            elif g_cfg.fieldFormat == "csv":
                name = f"field_{P}.csv"
                write_field_csv(u, self.out / name)
                self.write(name)
                entry["file"] = name
            levels.append(entry)
            self.check(f"solve.{P}", u.meta["max_residual"] <= tol.residualTol)
            P = 2 * P - 1
        self.report("solve.json", "solve-report", {"levels": levels})

    def lemma(self):
        opts, tol = self.cfg.options.lemma, self.cfg.tolerances
        seed = self._seed()
        M = self.op.domain.sample(opts.trials, seed)
        D3 = random_third_derivative(self.op.dim, np.random.default_rng(seed), (len(M),))
        T = lemma_terms(self.op, M, D3)
        worst = [float(np.max(t)) for t in T]
        ok = self.check("lemma.signs", max(worst) <= tol.lemmaSign)
        body = {"trials": len(M), "maxT1": worst[0], "maxT2": worst[1], "maxT3": worst[2], "signsPassed": ok}
        if self.fields:
            pos = []
            for u in self.fields:
                pos.append({"pointsPerSide": u.points, "h": u.h,
                            "maxPositivePart": positive_part_max(supersolution_residual(self.op, u), 1.0)})
            body["supersolution"] = pos
            dec = all(b["maxPositivePart"] * tol.supersolutionFactor <= a["maxPositivePart"]
                      for a, b in zip(pos, pos[1:]))
            body["supersolutionPassed"] = self.check("lemma.supersolution", dec)
        self.report("lemma.json", "lemma-report", body)

    def dyadic(self):
        opts, tol = self.cfg.options.dyadic, self.cfg.tolerances
        reports = []
        for u in self.fields:
            rep = dyadic_scan(self.op, u, opts.xi, opts.kMax)
            s = [lv["s_k"] for lv in rep.levels]
            mono = all(b >= a - tol.dyadicSlack for a, b in zip(s, s[1:]))
            ident = all(abs(lv["s_k"] - lv["G(-t_k)"]) <= tol.dyadicIdentity for lv in rep.levels)
            quads = [quadratic_approx(u, self.op, eta) for eta in opts.etas]
            qres = all(q.residual_at_P <= tol.quadResidual for q in quads)
            self.check(f"dyadic.{u.points}.monotone", mono)
            self.check(f"dyadic.{u.points}.identity", ident)
            self.check(f"dyadic.{u.points}.quadratic", qres)
            self.write(f"dyadic_{u.points}.csv", rep.to_csv())
            reports.append({"pointsPerSide": u.points, "scan": rep.to_dict(),
                            "quadraticApprox": [q.to_dict() for q in quads],
                            "monotone": mono, "identity": ident})
        self.report("dyadic.json", "dyadic-reports", {"levels": reports})

    def holder(self):
        opts, tol = self.cfg.options.holder, self.cfg.tolerances
        rows = []
        for u in self.fields:
            outer = holder_seminorm(u, opts.alpha, opts.radius)
            inner = holder_seminorm(u, opts.alpha, opts.radius / 2)
            rows.append({"h": u.h, "pointsPerSide": u.points, "seminorm": outer.seminorm,
                         "innerSeminorm": inner.seminorm, "pair": outer.to_dict()["pair"]})
            self.check(f"holder.{u.points}.monotone", inner.seminorm <= outer.seminorm)
        variation = [abs(b["seminorm"] - a["seminorm"]) / max(a["seminorm"], 1e-300)
                     for a, b in zip(rows, rows[1:])]
        self.check("holder.stability", all(v <= tol.holderVariation for v in variation))
        self.report("holder.json", "holder-report", {"alpha": opts.alpha, "radius": opts.radius,
                                                     "gridLevels": rows, "relativeVariation": variation})

    def rigidity(self):
        opts, tol = self.cfg.options.rigidity, self.cfg.tolerances
        _, hess = TEST_FUNCTIONS[opts.function]()
        op = self.op if self.op.dim == 2 else None
        rows = rigidity_scan(op, hess, opts.alpha, opts.R, opts.points, growth=tol.rigidityGrowth)
        self.check("rigidity", not any(r["flag"] for r in rows))
        self.report("rigidity.json", "rigidity-report", {"function": opts.function, "alpha": opts.alpha,
                                                         "values": rows})


def resolve_output(cfg: ExperimentConfig, override: str | None) -> Path:
    return Path(override or cfg.output or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def run(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    """Run the configured stages, write reports and the manifest; return the exit status and manifest."""
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(cfg, out)
    manifest = {"schema_version": SCHEMA_VERSION, "kind": "run-manifest", "artifactVersion": __version__,
                "config": cfg.model_dump(mode="json"), "stages": [], "failedStage": None}
    status = EXIT_OK
    for stage in cfg.stages():
        t0 = time.perf_counter()
        entry = {"name": stage, "status": "ok"}
        try:
            getattr(runner, stage)()
        except Exception as exc:  # recorded in the manifest, partial outputs kept
            log.error("stage %s failed: %s", stage, exc)
            entry.update(status="error", error=f"{type(exc).__name__}: {exc}")
            manifest["failedStage"] = stage
            status = EXIT_STAGE
        entry["seconds"] = time.perf_counter() - t0
        manifest["stages"].append(entry)
        if status == EXIT_STAGE:
            break
    manifest["checks"] = runner.checks
    manifest["files"] = dict(sorted(runner.files.items()))
    if status == EXIT_OK and not all(runner.checks.values()):
        status = EXIT_FAILED
    manifest["exitStatus"] = status
    (out / "manifest.json").write_text(dumps(manifest))
    return status, manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twisted-ek", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="errors only")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config", help="path to the JSON config")
    r.add_argument("-o", "--output", help=f"output directory (default: config, then ${OUTPUT_ENV})")
    r.add_argument("--seed", type=int, help="override the config seed")
    d = sub.add_parser("describe", help="describe an operator preset")
    d.add_argument("preset")
    sub.add_parser("version", help="print the package version")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.ERROR if args.quiet else [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    if args.command == "describe":
        try:
            print(describe(args.preset), end="")
        except DomainError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = resolve_output(cfg, args.output)
    status, manifest = run(cfg, out)
    failed = [k for k, v in manifest["checks"].items() if not v]
    print(f"{out}: exit {status}" + (f"; failed: {', '.join(failed)}" if failed else "")
          + (f"; stage error in {manifest['failedStage']}" if manifest["failedStage"] else ""))
    return status


if __name__ == "__main__":
    sys.exit(main())
