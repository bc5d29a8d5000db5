"""
Утилиты отображения для Rich интерфейса
"""

from typing import Any, Dict, Optional, Sequence

import pandas as pd
from rich import box
from rich.align import Align
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text


class DisplayUtils:
    """Отображение отчетов, таблиц и ошибок в терминале"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console(stderr=True)

    def print_header(self, command: str):
        """Заголовок команды"""
        header_text = Text("📡 Coverage Manifold Toolkit", style="bold white")
        subtitle_text = Text(command, style="dim white")
        self.console.print(Panel(
            Align.center(f"{header_text}\n{subtitle_text}"),
            style="bold blue",
            box=box.DOUBLE,
        ))

    def display_error(self, error_name: str, message: str):
        """Отображение ошибки"""
        self.console.print(Panel(
            f"❌ {message}",
            title=f"[bold red]{error_name}[/bold red]",
            border_style="red",
        ))

    def display_success(self, message: str):
        """Отображение успешного выполнения"""
        self.console.print(Panel(
            f"✅ {message}",
            title="[bold green]Success[/bold green]",
            border_style="green",
        ))

    def display_counts(self, title: str, counts: Dict[str, Any]):
        """Таблица счетчиков (фильтр RoI, итоги симуляции)"""
        table = Table(title=f"[bold]{title}[/bold]", box=box.ROUNDED)
        table.add_column("Параметр", style="cyan")
        table.add_column("Значение", style="green", justify="right")
        for key, value in counts.items():
            table.add_row(key.replace('_', ' '), str(value))
        self.console.print(table)

    def display_frame(self, title: str, frame: pd.DataFrame, limit: int = 40, precision: int = 4):
        """Таблица из DataFrame; длинные таблицы обрезаются до limit строк"""
        table = Table(title=f"[bold]{title}[/bold]", box=box.SIMPLE)
        for column in frame.columns:
            numeric = pd.api.types.is_numeric_dtype(frame[column])
            table.add_column(str(column), style="yellow" if numeric else "cyan", justify="right" if numeric else "left")
        for row in frame.head(limit).itertuples(index=False):
            table.add_row(*(self._format_cell(v, precision) for v in row))
        self.console.print(table)
        if len(frame) > limit:
            self.console.print(f"[dim]... еще {len(frame) - limit} строк[/dim]")

    def display_history(self, frame: pd.DataFrame, every: int = 10):
        """История обучения: каждая every-я эпоха и последняя"""
        if frame.empty:
            self.console.print("[yellow]История пуста[/yellow]")
            return
        picked = frame[(frame['epoch'] % every == 0) | (frame['epoch'] == frame['epoch'].max()) | (frame['epoch'] == 1)]
        self.display_frame("📉 История обучения", picked)

    def display_plan(self, result: str, achieved_frac: float, cycles: int, calls: int, locations: Sequence):
        """Итог планирования"""
        style = "green" if result == "solution" else "yellow"
        lines = [
            f"Результат: [bold {style}]{result}[/bold {style}]",
            f"Достигнутая доля: {achieved_frac:.4f}",
            f"Циклов: {cycles}, вызовов предиктора: {calls}",
        ]
        if locations:
            lines.append("Новые БС: " + ", ".join(f"({i}, {j})" for i, j in locations))
        self.console.print(Panel("\n".join(lines), title="[bold]🗺️ План размещения[/bold]", border_style=style))

    @staticmethod
    def _format_cell(value: Any, precision: int) -> str:
        if isinstance(value, float):
            return "—" if pd.isna(value) else f"{value:.{precision}f}"
        return str(value)
