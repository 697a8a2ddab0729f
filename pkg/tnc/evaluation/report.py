import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

MetricValue = float | int | str


@dataclass
class EvalReport:
    """Human-readable report plus a flat ``key=value`` metrics file."""

    mode: str
    metrics: dict[str, MetricValue] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def add(self, prefix: str, **values: MetricValue) -> None:
        for key, value in values.items():
            self.metrics[f"{prefix}.{key}" if prefix else key] = value

    def render(self) -> str:
        lines = [f"TNC evaluation report ({self.mode})", ""]
        width = max((len(k) for k in self.metrics), default=0)
        for key, value in self.metrics.items():
            shown = f"{value:.4f}" if isinstance(value, float) else str(value)
            lines.append(f"  {key.ljust(width)}  {shown}")
        if self.notes:
            lines.append("")
            lines.extend(self.notes)
        return "\n".join(lines) + "\n"

    def metrics_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.metrics.items())

    def write(self, out_dir: Path | str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path, metrics_path = out_dir / "report.txt", out_dir / "metrics.txt"
        report_path.write_text(self.render(), encoding="utf-8")
        metrics_path.write_text(self.metrics_text(), encoding="utf-8")
        logger.info(f"Wrote {self.mode} report to {report_path}")
        return report_path, metrics_path


def read_metrics(path: Path | str) -> dict[str, str]:
    metrics = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            metrics[key] = value
    return metrics
