"""Command-line interface: case runners plus a self-check suite.

Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import assembly as asm
from . import harness, solver as slv
from .errors import NumericalError
from .fields import Field
from .topology import MeshTopology, build_dof_map, build_incidence

CASE_COMMANDS = {
    "run": None,              # case taken from config (default custom)
    "converge": "convergence",
    "balance": "balance",
    "conserve": "vortex_pair",
    "orography": "orography",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_config_flags(sub):
    sub.add_argument("--config", metavar="PATH", help="flat key = value config file")
    sub.add_argument("--out", metavar="DIR", help="output directory")
    for field in dataclasses.fields(harness.RunConfig):
        if field.name in ("case", "out"):
            continue
        flag = "--" + field.name.replace("_", "-")
        sub.add_argument(flag, dest=field.name, metavar=field.name.upper())
    return sub


def _collect_config(args, forced_case):
    file_values = harness.parse_config_file(args.config) if args.config else {}
    overrides = {}
    for field in dataclasses.fields(harness.RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            overrides[field.name] = value
    case = forced_case or file_values.get("case") or overrides.get("case") or "custom"
    defaults = harness.case_defaults(case)
    merged_file = {**defaults, **file_values}
    merged_file["case"] = case
    return harness.build_config(merged_file, overrides)


def check_suite(seed: int = 0, verbose_print=print) -> int:
    """Integer/algebra invariant suite; prints one line per check."""
    failures = 0

    def report(name, ok, detail=""):
        nonlocal failures
        status = "ok  " if ok else "FAIL"
        verbose_print(f"{status} {name}{'  ' + detail if detail else ''}")
        if not ok:
            failures += 1

    rng = np.random.RandomState(seed)
    for p in (1, 2, 3, 4):
        mesh = MeshTopology(nx=3, ny=2, Lx=2 * np.pi, Ly=2 * np.pi, p=p)
        dofmap = build_dof_map(mesh)
        inc = build_incidence(mesh, dofmap)
        prod = inc.E21 @ inc.E10
        report(f"p={p} E21*E10 = 0", prod.nnz == 0 or abs(prod).max() == 0)
        report(f"p={p} 1^T E21 = 0", abs(np.asarray(inc.E21.sum(axis=0))).max() == 0)
        report(f"p={p} E10*1 = 0", abs(np.asarray(inc.E10.sum(axis=1))).max() == 0)
        report(f"p={p} Euler relation", dofmap.dW - dofmap.dU + dofmap.dQ == 0)

    ops = slv.Discretization(MeshTopology(nx=3, ny=3, Lx=2 * np.pi, Ly=2 * np.pi, p=3))
    psi = lambda x, y: 0.1 * np.cos(x - np.pi) * np.cos(y - np.pi)
    w = ops.project("W", psi)
    u = Field("U", ops.E10f @ w.data)
    report("commuting init divergence-free", np.abs(ops.E21 @ u.data).max() < 1e-14)

    grad_perp = lambda x, y: (0.1 * np.cos(x - np.pi) * np.sin(y - np.pi),
                              -0.1 * np.sin(x - np.pi) * np.cos(y - np.pi))
    direct = ops.project("U", grad_perp)
    report("commuting projection", np.abs(direct.data - u.data).max() < 1e-12)

    q = Field("W", rng.uniform(0.5, 1.5, ops.dofmap.dW))
    h = Field("Q", ops.project("Q", lambda x, y: 1.0 + 0.1 * np.sin(x)).data)
    Uq = ops.coupling("Uq", q)
    report("U^q skew-symmetric", Uq.symmetry_defect() < 1e-12,
           f"defect {Uq.symmetry_defect():.2e}")
    Uh = ops.coupling("Uh", h)
    report("U^h symmetric", Uh.symmetry_defect() < 1e-12)
    Wq = ops.coupling("Wq", q).matrix
    Wh = ops.coupling("Wh", h).matrix
    transfer = np.abs(Wq @ h.data - Wh @ q.data).max()
    report("W^q h == W^h q", transfer < 1e-12, f"max diff {transfer:.2e}")

    b = rng.randn(ops.dofmap.dU)
    x = asm.solve_spd(ops.massU, b)
    res = np.linalg.norm(ops.massU @ x - b) / np.linalg.norm(b)
    report("CG mass solve residual < 1e-12", res < 1e-12, f"res {res:.2e}")

    state = slv.SimState(u=u, h=ops.project("Q", lambda x, y: psi(x, y) + 8.0), t=0.0)
    physics = slv.Physics(f=ops.constant_coriolis(8.0), g=8.0, H=8.0)
    du, dh = slv.tendency(state, physics, ops)
    report("mass budget 1^T dh/dt = 0", abs(dh.sum()) < 1e-12)
    budget = abs(np.sum(ops.E10fT @ (ops.massU @ du)))
    report("vorticity budget closes", budget < 1e-10, f"|budget| {budget:.2e}")
    return failures


def main(argv=None) -> int:
    parser = _Parser(prog="mimswe",
                     description="Conservative mimetic spectral element shallow "
                                 "water solver and experiment harness")
    subs = parser.add_subparsers(dest="command", required=True)
    for cmd, case in CASE_COMMANDS.items():
        sub = subs.add_parser(cmd, parents=[], help=f"run the {case or 'configured'} case")
        _add_config_flags(sub)
        if cmd == "converge":
            sub.add_argument("--sweep", choices=("mesh", "degree"), default="mesh")
    chk = subs.add_parser("check", help="run the invariant self-check suite")
    chk.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "check":
        failures = check_suite(seed=args.seed)
        print("all checks passed" if failures == 0 else f"{failures} check(s) FAILED")
        return 0 if failures == 0 else 2

    try:
        cfg = _collect_config(args, CASE_COMMANDS[args.command])
        if args.out:
            cfg = dataclasses.replace(cfg, out=args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "converge":
            os.makedirs(cfg.out, exist_ok=True)
            summary = harness.run_convergence(cfg, cfg.out, sweep=args.sweep)
        else:
            summary = harness.run_case(cfg)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    for key, value in summary.items():
        print(f"{key} = {harness.fmt(value)}")
    return 0 if summary.get("status", "ok") == "ok" else 2


if __name__ == "__main__":
    sys.exit(main())
