"""Runs the malab executable on every shipped config and checks its outputs.

Usage: cli_schema_test.py <malab executable> <source dir>
"""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

EXE = sys.argv[1]
ROOT = pathlib.Path(sys.argv[2])
SCHEMAS = {p.name.removesuffix(".schema.json"): json.loads(p.read_text()) for p in (ROOT / "schemas").glob("*.schema.json")}
OUTPUT_SCHEMA = {
    "catalog.json": "catalog",
    "solution.grid.json": "grid",
    "solver_report.json": "solver_report",
    "verify.json": "verify",
    "blowup.json": "blowup",
}
failures = []


def check(cond, what):
    if not cond:
        failures.append(what)
        print("FAIL", what)


def validate(doc, schema, what):
    try:
        jsonschema.validate(doc, SCHEMAS[schema])
    except jsonschema.ValidationError as e:
        check(False, f"{what}: {e.message}")


def run(args, out):
    return subprocess.run([EXE, *args, "--out", str(out)], capture_output=True, text=True)


def snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(pathlib.Path(out).iterdir())}


with tempfile.TemporaryDirectory() as tmp:
    tmp = pathlib.Path(tmp)
    for cfg_path in sorted((ROOT / "configs").glob("*.json")):
        cfg = json.loads(cfg_path.read_text())
        validate(cfg, "config", cfg_path.name)
        outs = []
        for rep in range(2):
            out = tmp / f"{cfg_path.stem}_{rep}"
            r = run([cfg["command"], "--config", str(cfg_path)], out)
            check(r.returncode == 0, f"{cfg_path.name}: exit {r.returncode} {r.stderr}")
            outs.append(out)
        if failures:
            continue
        a, b = snapshot(outs[0]), snapshot(outs[1])
        check(a == b, f"{cfg_path.name}: outputs differ between runs")
        check(not any(n.endswith(".tmp") for n in a), f"{cfg_path.name}: temporary file left behind")
        for name, data in a.items():
            if name in OUTPUT_SCHEMA:
                validate(json.loads(data), OUTPUT_SCHEMA[name], f"{cfg_path.name}/{name}")
            elif name == "geometry.jsonl":
                for i, line in enumerate(data.decode().splitlines()):
                    validate(json.loads(line), "geometry_sample", f"{cfg_path.name}/{name}:{i}")

    # catalog lists the exp fixture with d = e1 and d0 = (n-1) ln 2
    r = run(["catalog", "--set", "n=3"], tmp / "cat")
    cat = json.loads(r.stdout)
    exp = next(f for f in cat["fixtures"] if f["name"] == "exp_solution")
    check(exp["drift_primal"]["d"] == [1.0, 0.0, 0.0], "catalog exp drift d")
    check(abs(exp["drift_primal"]["d0"] - 2 * 0.6931471805599453) < 1e-15, "catalog exp drift d0")

    r = run(["verify", "--fixture", "quadratic", "--suite", "identities"], tmp / "q")
    check(r.returncode == 0 and json.loads((tmp / "q" / "verify.json").read_text())["pass"], "quadratic identities pass")

    # usage errors: exit 2 with a serialized error
    for args in (["verify", "--fixture", "quadratic", "--set", "bogus=1"],
                 ["verify", "--fixture", "nope"],
                 ["solve", "--set", "n=1"],
                 ["geometry", "--set", "input=/nonexistent.csv", "--set", "input_grid=/nonexistent.json"]):
        r = run(args, tmp / "u")
        check(r.returncode == 2, f"{args}: expected exit 2, got {r.returncode}")
        validate(json.loads(r.stderr), "error", f"{args} stderr")
    r = run(["frobnicate"], tmp / "u")
    check(r.returncode == 2, "unknown command exits 2")

    # module errors: exit 1 with the module's error on stderr
    for args, kind in ((["blowup", "--fixture", "dual_log", "--set", "ladder=[10]"], "unbounded_section"),
                       (["verify", "--fixture", "cubic"], "precondition")):
        r = run(args, tmp / "m")
        check(r.returncode == 1, f"{args}: expected exit 1, got {r.returncode}")
        err = json.loads(r.stderr)
        validate(err, "error", f"{args} stderr")
        check(err["error"] == kind, f"{args}: error kind {err['error']}")

print("failures:", len(failures))
sys.exit(1 if failures else 0)
