# SPDX-License-Identifier: Apache-2.0
# Regenerates the committed VCD fixtures. The benchmark traces pin the
# merged rarity numbers the integration tests assert (ovf 2/40, align_err
# 1/40, op_movhi 4/40); the sim traces pin the transition deltas used by
# trigger detection. Run from the fixtures/ directory: python3 gen_fixture_vcds.py

import os

PERIOD = 10  # ns; rising edges at 5, 15, 25, ...


def vcd_header(vars_nested):
    out = ["$timescale 1ns $end"]
    out.append("$scope module toy_top $end")
    code = ord("a")  # letter id codes; '$'-like codes read as directives
    codes = {}
    for name, width in vars_nested["top"]:
        codes[name] = chr(code)
        code += 1
        kind = "wire"
        ref = name if width == 1 else f"{name} [{width - 1}:0]"
        out.append(f"$var {kind} {width} {codes[name]} {ref} $end")
    for scope, entries in vars_nested.items():
        if scope == "top":
            continue
        out.append(f"$scope module {scope} $end")
        for name, width in entries:
            full = f"{scope}.{name}"
            codes[full] = chr(code)
            code += 1
            out.append(f"$var wire {width} {codes[full]} {name} $end")
        out.append("$upscope $end")
    out.append("$upscope $end")
    out.append("$enddefinitions $end")
    return out, codes


def emit_change(out, codes, name, value, width):
    if width == 1:
        out.append(f"{value}{codes[name]}")
    else:
        out.append(f"b{value:0{width}b} {codes[name]}")


def write_bench(path, samples):
    """samples: dict name -> (width, [value at each rising edge]).

    Data lines change at falling-edge instants (multiples of PERIOD) so the
    value is stable when the rising edge at t = k*PERIOD + 5 samples it.
    """
    n = len(next(iter(samples.values()))[1])
    vars_nested = {
        "top": [("clk", 1), ("insn", 8), ("en", 1), ("a", 8), ("b", 8),
                 ("addr", 8), ("st", 1)],
        "u_decode": [("op_movhi", 1)],
        "u_alu": [("ovf", 1)],
        "u_lsu": [("align_err", 1)],
    }
    out, codes = vcd_header(vars_nested)
    last = {}
    out.append("#0")
    out.append("$dumpvars")
    emit_change(out, codes, "clk", 0, 1)
    for name, (width, values) in samples.items():
        emit_change(out, codes, name, values[0], width)
        last[name] = values[0]
    out.append("$end")
    for k in range(n):
        t_data = k * PERIOD
        if k > 0:
            changed = [f"0{codes['clk']}"]
            for name, (width, values) in samples.items():
                if values[k] != last[name]:
                    line = []
                    emit_change(line, codes, name, values[k], width)
                    changed.extend(line)
                    last[name] = values[k]
            out.append(f"#{t_data}")
            out.extend(changed)
        out.append(f"#{t_data + 5}")
        out.append(f"1{codes['clk']}")
    out.append(f"#{n * PERIOD}")
    out.append(f"0{codes['clk']}")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def ones_at(n, positions):
    return [1 if i in positions else 0 for i in range(n)]


def changes_every(n, hold_pattern):
    # hold_pattern: list of run lengths; values differ run to run
    vals = []
    v = 3
    for run in hold_pattern:
        vals.extend([v] * run)
        v = (v + 11) % 256
    return vals[:n]


def bench1():
    n = 20
    return {
        "insn": (8, [(17 * i + 5) % 256 for i in range(n)]),       # 19/19 changes
        "en": (1, ones_at(n, set(range(5, 15)))),                   # 10 ones
        "a": (8, changes_every(n, [2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1, 1])),
        "b": (8, changes_every(n, [2, 2, 1, 1, 2, 1, 1, 2, 1, 2, 1, 2, 1, 1])),
        "addr": (8, changes_every(n, [1, 1, 2, 1, 1, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1, 1, 1, 1])),
        "st": (1, ones_at(n, {2, 5, 8, 11, 14, 17})),               # 6 ones
        "u_decode.op_movhi": (1, ones_at(n, {3, 9})),               # 2 ones
        "u_alu.ovf": (1, ones_at(n, {7})),                          # 1 one
        "u_lsu.align_err": (1, ones_at(n, {12})),                   # 1 one
    }


def bench2():
    n = 20
    return {
        "insn": (8, [(29 * i + 3) % 256 for i in range(n)]),        # 19/19 changes
        "en": (1, ones_at(n, set(range(4, 12)))),                   # 8 ones
        "a": (8, changes_every(n, [2, 1, 2, 1, 1, 2, 1, 1, 2, 1, 1, 2, 1, 1, 1])),
        "b": (8, changes_every(n, [2, 2, 1, 2, 1, 2, 1, 2, 1, 2, 2, 2])),
        "addr": (8, changes_every(n, [1, 2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1])),
        "st": (1, ones_at(n, {1, 4, 7, 10, 13, 16, 19})),           # 7 ones
        "u_decode.op_movhi": (1, ones_at(n, {2, 8})),               # 2 ones
        "u_alu.ovf": (1, ones_at(n, {11})),                         # 1 one
        "u_lsu.align_err": (1, ones_at(n, set())),                  # all zero
    }


def write_sim_trace(path, extra):
    """Golden-plus-extras simulation trace over the three event roots.

    extra: dict name -> list of extra transition times appended after the
    golden activity. Golden activity: ovf pulses 10..20, movhi pulses
    15..25, align_err pulses 25..35; trace ends at 100.
    """
    vars_nested = {
        "top": [("clk", 1)],
        "u_decode": [("op_movhi", 1)],
        "u_alu": [("ovf", 1)],
        "u_lsu": [("align_err", 1)],
    }
    out, codes = vcd_header(vars_nested)
    events = []  # (time, name, value)
    golden = {
        "u_alu.ovf": [(10, 1), (20, 0)],
        "u_decode.op_movhi": [(15, 1), (25, 0)],
        "u_lsu.align_err": [(25, 1), (35, 0)],
    }
    for name, changes in golden.items():
        for t, v in changes:
            events.append((t, name, v))
    for name, times in extra.items():
        v = 1
        for t in times:
            events.append((t, name, v))
            v ^= 1
    for t in range(5, 101, 5):
        events.append((t, "clk", 1 if (t // 5) % 2 == 1 else 0))
    events.sort(key=lambda e: (e[0], e[1]))
    out.append("#0")
    out.append("$dumpvars")
    for name in ["clk", "u_decode.op_movhi", "u_alu.ovf", "u_lsu.align_err"]:
        out.append(f"0{codes[name]}")
    out.append("$end")
    now = 0
    for t, name, v in events:
        if t != now:
            out.append(f"#{t}")
            now = t
        out.append(f"{v}{codes[name]}")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


def main():
    os.makedirs("vcd", exist_ok=True)
    os.makedirs("toolchain", exist_ok=True)
    write_bench("vcd/bench1.vcd", bench1())
    write_bench("vcd/bench2.vcd", bench2())
    write_sim_trace("toolchain/golden.vcd", {})
    write_sim_trace("toolchain/flat.vcd", {})
    write_sim_trace("toolchain/trig_ovf.vcd", {"u_alu.ovf": [50, 60]})
    write_sim_trace("toolchain/trig_both.vcd",
                    {"u_alu.ovf": [50, 60], "u_decode.op_movhi": [70, 80]})


if __name__ == "__main__":
    main()
