#!/usr/bin/env python3
"""Reference solution of a dumped identification problem with cvxpy.

Reads a problem bundle written by `ecmid identify --dump-problem DIR` and
solves

    min ||y - Pi phi - F vec(M)||^2 + lambda1 ||P||_* + lambda2 ||Dg3 gamma||_1
    P = [[M, a~], [gamma^T, 1]],  phi = [a~, b~, gamma]

with a general-purpose conic solver. The optimal objective is written to a
JSON file for use as golden data.

    python3 tools/reference_solve.py BUNDLE_DIR --lambda1 1e-4 --lambda2 1e-5 \
        --out BUNDLE_DIR/reference.json
"""

import argparse
import json
import pathlib

import cvxpy as cp
import numpy as np


def load(path):
    return np.loadtxt(path, delimiter=",", comments="#", ndmin=2)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("bundle", type=pathlib.Path)
    ap.add_argument("--lambda1", type=float, required=True)
    ap.add_argument("--lambda2", type=float, required=True)
    ap.add_argument("--solver", default="CLARABEL")
    ap.add_argument("--out", type=pathlib.Path)
    args = ap.parse_args()

    d = args.bundle
    y = load(d / "y.csv")[:, 0]
    pi = load(d / "pi.csv")
    f = load(d / "f.csv")
    dg3 = load(d / "dg3.csv")
    nu, h = load(d / "meta.csv")[0]
    h = int(h)

    # Column scaling only improves conditioning; the objective is unchanged.
    s_pi = np.linalg.norm(pi, axis=0)
    s_f = np.linalg.norm(f, axis=0)
    u_phi = cp.Variable(5 + h)
    u_m = cp.Variable(2 * h)
    phi = cp.multiply(1.0 / s_pi, u_phi)
    vec_m = cp.multiply(1.0 / s_f, u_m)

    a = phi[0:2]
    gamma = phi[5:]
    M = cp.reshape(vec_m, (2, h), order="C")
    P = cp.bmat([[M, cp.reshape(a, (2, 1), order="C")],
                 [cp.reshape(gamma, (1, h), order="C"), np.ones((1, 1))]])

    resid = y - (pi / s_pi) @ u_phi - (f / s_f) @ u_m
    obj = cp.sum_squares(resid)
    if args.lambda1 > 0:
        obj = obj + args.lambda1 * cp.normNuc(P)
    if args.lambda2 > 0:
        obj = obj + args.lambda2 * cp.norm1(dg3 @ gamma)
    # The objective is often tiny in absolute terms, so solver gap tolerances
    # are absolute noise. Solve once, then again with the objective rescaled
    # to order one and tight tolerances.
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver=args.solver)
    scale = 1.0 / max(abs(prob.value), 1e-300)
    prob = cp.Problem(cp.Minimize(scale * obj))
    tight = {
        "CLARABEL": dict(tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11, max_iter=500),
        "CVXOPT": dict(abstol=1e-10, reltol=1e-10, feastol=1e-10, max_iters=500),
        "SCS": dict(eps_abs=1e-12, eps_rel=1e-12, max_iters=1000000),
    }.get(args.solver, {})
    prob.solve(solver=args.solver, **tight)

    phi_v = u_phi.value / s_pi
    m_v = u_m.value / s_f
    # Re-evaluate in double precision from the primal point.
    Pv = np.block([[m_v.reshape(2, h), phi_v[0:2].reshape(2, 1)], [phi_v[5:].reshape(1, h), np.ones((1, 1))]])
    value = float(np.sum((y - pi @ phi_v - f @ m_v) ** 2)
                  + args.lambda1 * np.linalg.svd(Pv, compute_uv=False).sum()
                  + args.lambda2 * np.abs(dg3 @ phi_v[5:]).sum())

    result = {
        "solver": args.solver,
        "status": prob.status,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "m": int(y.size),
        "h": h,
        "nu": float(nu),
        "objective": value,
        "solver_objective": float(prob.value) / scale,
        "phi": phi_v.tolist(),
        "vec_m": m_v.tolist(),
    }
    text = json.dumps(result, indent=2)
    if args.out:
        args.out.write_text(text + "\n")
    print(f"status={prob.status} objective={value:.15g} (solver reported {prob.value / scale:.15g})")


if __name__ == "__main__":
    main()
