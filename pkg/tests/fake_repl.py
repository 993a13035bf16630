"""Stand-in REPL process speaking the JSON protocol, for pool tests.

Behaviour is keyed on the command text:
  SLEEP      never answers within the test timeouts
  SLOWSTART  answers after two seconds
  CRASH      exits without answering
  PID        reports the process id as an info message
  sorry      reports a sorry with a goal
  error      reports an error
"""

import json
import os
import sys
import time


def respond(payload):
    sys.stdout.write(json.dumps(payload, indent=2) + "\n\n")
    sys.stdout.flush()


def handle(request):
    cmd = request.get("cmd", "")
    env = 0 if "env" not in request else request["env"] + 1
    if "SLEEP" in cmd:
        time.sleep(30)
    if "SLOWSTART" in cmd:
        time.sleep(2)
    if "CRASH" in cmd:
        sys.exit(3)
    if "PID" in cmd:
        return {"env": env, "messages": [
            {"severity": "info", "pos": {"line": 1, "column": 0}, "data": str(os.getpid())},
        ]}
    if "sorry" in cmd:
        line = cmd.count("\n")
        return {
            "env": env,
            "sorries": [{"pos": {"line": line, "column": 2}, "goal": "x : ℕ\n⊢ x = x"}],
            "messages": [{"severity": "warning", "pos": {"line": 1, "column": 8},
                          "data": "declaration uses 'sorry'"}],
        }
    if "error" in cmd:
        return {"env": env, "messages": [
            {"severity": "error", "pos": {"line": 2, "column": 2}, "data": "unknown identifier 'foo'"},
        ]}
    return {"env": env}


def main():
    sys.stdin.reconfigure(encoding="utf-8")
    sys.stdout.reconfigure(encoding="utf-8")
    buffer = []
    for line in sys.stdin:
        if line.strip():
            buffer.append(line)
            continue
        if not buffer:
            continue
        request = json.loads("".join(buffer))
        buffer = []
        respond(handle(request))


if __name__ == "__main__":
    main()
