"""
Report writers: grid-formatted text for people, delimited tables for tools
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import pandas as pd
import tabulate

from pointcrack3d.metrics import MetricsReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

# Column order of the per-configuration comparison table
COMPARISON_COLUMNS = [
    "delta_h", "delta_r", "delta_n",
    "precision", "recall", "specificity", "f1",
    "cr_det", "cr_con", "cr_pre", "n_cr", "n_pred",
    "tp", "fp", "tn", "fn",
]


def format_table(frame: pd.DataFrame, title: Optional[str] = None, floatfmt: str = ".4f") -> str:
    """Grid-formatted table, optionally under an underlined title"""
    lines = []
    if title:
        lines += [title, "-" * len(title)]
    if frame.empty:
        lines.append("(no rows)")
    else:
        rows = frame.astype(object).values.tolist()
        lines.append(tabulate.tabulate(rows, headers=list(frame.columns), tablefmt="grid",
                                       floatfmt=floatfmt))
    return "\n".join(lines)


def export_frame(frame: pd.DataFrame, path: Union[str, Path], export_format: str = "csv") -> Path:
    """Write a frame as csv or json, appending the format's suffix when missing"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = export_format.lower()
    if fmt not in ("csv", "json"):
        raise ValueError(f"Unknown export format '{export_format}'")
    if path.suffix.lower() != f".{fmt}":
        path = path.with_name(f"{path.name}.{fmt}")
    if fmt == "csv":
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    else:
        frame.to_json(path, orient="records", indent=2)
    logger.info(f"Exported {len(frame)} rows to {path}")
    return path


def write_text(sections: Iterable[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n\n".join(sections) + "\n", encoding="utf-8")
    return path


def comparison_row(report: MetricsReport, delta_h: float, delta_r: float,
                   delta_n: int) -> Dict[str, float]:
    row = {"delta_h": delta_h, "delta_r": delta_r, "delta_n": delta_n}
    row.update(report.as_row())
    return row


def comparison_frame(rows: Sequence[Dict[str, float]]) -> pd.DataFrame:
    """One row per post-processing configuration"""
    return pd.DataFrame(list(rows), columns=COMPARISON_COLUMNS)


def metrics_sections(comparison: pd.DataFrame, size_summaries: Sequence[Tuple[str, pd.DataFrame]],
                     sweep: Optional[pd.DataFrame] = None) -> List[str]:
    """Text blocks for the evaluation report"""
    headline = comparison[["delta_h", "delta_r", "delta_n", "precision", "recall",
                           "specificity", "f1", "cr_det", "cr_con", "cr_pre"]]
    sections = [format_table(headline, "CRACK DETECTION BY CONFIGURATION"),
                format_table(comparison[["delta_h", "delta_r", "delta_n", "n_cr", "n_pred",
                                         "tp", "fp", "tn", "fn"]], "COUNTS")]
    for label, summary in size_summaries:
        sections.append(format_table(summary, f"DETECTION BY SIZE ({label})"))
    if sweep is not None:
        sections.append(format_table(sweep[["threshold", "precision", "recall", "specificity",
                                            "f1"]], "POINT-WISE THRESHOLD SWEEP"))
    return sections
