"""
Tabular and external environments
=================================

Any deterministic objective can be frozen into a CSV table, reloaded, and
searched. An external program can also serve rewards over a line protocol:
it prints ``READY <N>``, then answers each ``EVAL i0,i1,...`` with
``REWARD <x>``.
"""
# %%
import sys
import tempfile
import textwrap
from pathlib import Path

from remaade.env import ExternalEnv, dump_tabular, load_tabular, make_separable, tabulate
from remaade.space import build_space
from remaade.trainer import RunConfig, run

space = build_space([3, 3, 2])
workdir = Path(tempfile.mkdtemp())
table_path = workdir / "table.csv"
dump_tabular(tabulate(make_separable(space, [1.0, 2.0, 0.5], [2, 0, 1])), table_path)
print(table_path.read_text().splitlines()[:4])
table = load_tabular(table_path, space)
print("random search on the table:", run(RunConfig(algorithm="random", budget=12), space, table).best_reward)

# %%
child = workdir / "child.py"
child.write_text(textwrap.dedent("""
    import sys
    print("READY 3", flush=True)
    for line in sys.stdin:
        a = [int(x) for x in line.split()[1].split(",")]
        print(f"REWARD {a[0] * a[1] - a[2]}", flush=True)
"""))
with ExternalEnv([sys.executable, str(child)], space, timeout=10) as env:
    res = run(RunConfig(algorithm="remaade", budget=60, batch=20, d=8), space, env)
print("external search best:", res.best_reward, res.best_string)
