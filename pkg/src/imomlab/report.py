"""Plain-text table emitters shared by the command-line stages."""

from __future__ import annotations

import numpy as np

from .conditioning import ConditionalStats
from .regression import SpanningResult, stars


def _num(v, spec=".4f") -> str:
    return "NA" if v is None or not np.isfinite(v) else format(v, spec)


def spanning_table(results: dict, names, Ks) -> str:
    """Rows (explanatory X, K); column pairs alpha/beta_X per target.

    ``results[(x, target, K)]`` is a SpanningResult or None.
    """
    head = ["X", "K"]
    for t in names:
        head += [f"alpha({t})", "beta_X"]
    lines = ["\t".join(head)]
    for x in names:
        for K in Ks:
            row = [x, str(K)]
            for t in names:
                if t == x:
                    row += ["", ""]
                    continue
                r: SpanningResult | None = results.get((x, t, K))
                if r is None:
                    row += ["NA", "NA"]
                else:
                    row += [_num(r.alpha) + r.alpha_stars, _num(r.beta_x, ".2f") + r.beta_x_stars]
            lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def conditional_table(rows: dict, columns) -> str:
    """``rows[(strategy, K)]`` is a list of ConditionalStats aligned with ``columns``."""
    lines = ["\t".join(["strategy", "K"] + list(columns))]
    for (name, K), stats in rows.items():
        cells = []
        for st in stats:
            st: ConditionalStats
            if st.thin:
                cells.append(_num(st.mean) + "(thin)")
            else:
                cells.append(_num(st.mean) + stars(st.t))
        lines.append("\t".join([name, str(K)] + cells))
    return "\n".join(lines) + "\n"


def conditional_tstats(rows: dict, columns) -> str:
    lines = ["\t".join(["strategy", "K"] + list(columns))]
    for (name, K), stats in rows.items():
        lines.append("\t".join([name, str(K)] + [_num(st.t, ".2f") for st in stats]))
    return "\n".join(lines) + "\n"


def legs_table(legs: dict, Js, Ks) -> str:
    """Winner/loser leg means (raw and excess) per (J, K)."""
    lines = ["\t".join(["J", "K", "leg", "mean", "t", "alpha", "alpha_t", "sharpe", "mdd", "n"])]
    for J in Js:
        for K in Ks:
            for leg, st in (legs.get((J, K)) or {}).items():
                if st is None:
                    lines.append("\t".join([str(J), str(K), leg] + ["NA"] * 7))
                    continue
                lines.append(
                    "\t".join(
                        [str(J), str(K), leg, _num(st.mean, ".6f"), _num(st.t, ".2f"), _num(st.alpha, ".6f"),
                         _num(st.alpha_t, ".2f"), _num(st.sharpe), _num(st.mdd), str(st.n)]
                    )
                )
    return "\n".join(lines) + "\n"


def series_csv(weeks_labels, columns: dict) -> str:
    """Weekly series side by side; NaN written as empty."""
    names = list(columns)
    lines = [",".join(["week"] + names)]
    for i, lab in enumerate(weeks_labels):
        vals = []
        for n in names:
            v = columns[n][i]
            vals.append("" if not np.isfinite(v) else repr(float(v)))
        lines.append(",".join([lab] + vals))
    return "\n".join(lines) + "\n"
