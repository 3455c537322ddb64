import json, sys
from interactnav.rl.runs import train_suite
def log(r): print(json.dumps(r, default=float), flush=True)
train_suite("/root/pkg/runs", [("base", False), ("a", False), ("a", True)], [0, 1, 2], 500_000, log=log)
print("ALL DONE", flush=True)
